//! Singular-integral evaluation and empirical verification of the
//! coefficient estimates that drive the stability bounds.
//!
//! The ε-scaling claims are verified the way they arise: the sharp ε-rate
//! ε^{α-β} of the small-ball estimate is carried by the Hölder dual factor
//! (∫_{B_ε} |z|^{-βd/α} dz)^{α/d}, which the verifier computes by radial
//! quadrature and slope-fits; the full inequality LHS ≤ factor·‖h‖_p is
//! checked pointwise on the ε grid. On bounded test densities the raw LHS
//! decays at the faster rate ε^{d-β}, which is also reported.

use serde::Serialize;
use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self};
use crate::model::{lp_norm_estimate, silverman_bandwidth, ModelError, ModelSpec, ParticleCloud};
use crate::osgood::psi;
use crate::transport::{w2_exact, TransportError};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mode requires alpha in {expected}, got {got}")]
    AlphaOutOfMode { expected: &'static str, got: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Verification summary for one lemma/mode; serialized as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub lemma_id: String,
    pub sample_count: usize,
    /// max of LHS / (reference · RHS-shape)
    pub sup_ratio: f64,
    /// smallest constant making the checked bound hold on the samples
    pub fitted_c: f64,
    pub pass: bool,
    /// fitted scaling slope, when the lemma carries one
    pub slope: Option<f64>,
    pub slope_expected: Option<f64>,
    pub details: serde_json::Value,
}

/// Analytic test densities with closed-form L^p norms.
#[derive(Debug, Clone, Copy)]
pub enum AnalyticDensity {
    /// Uniform density on the unit ball of R^d (d = 2 or 3), total mass 1.
    UniformBall { dim: usize },
}

impl AnalyticDensity {
    pub fn dim(&self) -> usize {
        match self {
            AnalyticDensity::UniformBall { dim } => *dim,
        }
    }

    pub fn value_at_origin(&self) -> f64 {
        match self {
            AnalyticDensity::UniformBall { dim: 2 } => 1.0 / std::f64::consts::PI,
            AnalyticDensity::UniformBall { dim: 3 } => 3.0 / (4.0 * std::f64::consts::PI),
            AnalyticDensity::UniformBall { dim } => panic!("unsupported ball dimension {dim}"),
        }
    }

    /// ‖h‖_{L^p}; for the uniform ball this is v_d^{1-1/p} (sup value v_d
    /// at p = ∞).
    pub fn lp_norm(&self, p: f64) -> f64 {
        let v = self.value_at_origin();
        if p.is_infinite() {
            v
        } else {
            v.powf(1.0 - 1.0 / p)
        }
    }
}

// ---------------------------------------------------------------------------
// Radial quadrature oracle
// ---------------------------------------------------------------------------

/// Simpson integration with a square-root substitution toward the endpoint
/// that carries an integrable singularity.
fn integrate_graded(f: &dyn Fn(f64) -> f64, a: f64, b: f64, singular_at: Option<f64>, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    match singular_at {
        Some(s) if (s - a).abs() < 1e-15 => {
            // substitute r = a + u², dr = 2u du
            let umax = (b - a).sqrt();
            simpson(&|u: f64| f(a + u * u) * 2.0 * u, 0.0, umax, n)
        }
        Some(s) if (s - b).abs() < 1e-15 => {
            let umax = (b - a).sqrt();
            simpson(&|u: f64| f(b - u * u) * 2.0 * u, 0.0, umax, n)
        }
        _ => simpson(f, a, b, n),
    }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn surface_area(d: usize) -> f64 {
    match d {
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => panic!("unsupported dimension {d}"),
    }
}

/// ∫_{B_ρ(0)} |z|^{-q} dz in R^d by radial quadrature (no closed form is
/// consulted). Requires q < d.
pub fn ball_kernel_integral(d: usize, q: f64, rho: f64) -> f64 {
    assert!(q < d as f64, "ball_kernel_integral: q = {q} >= d = {d}");
    if rho <= 0.0 {
        return 0.0;
    }
    let s = surface_area(d);
    let f = move |r: f64| if r == 0.0 { 0.0 } else { r.powf(d as f64 - 1.0 - q) };
    s * integrate_graded(&f, 0.0, rho, Some(0.0), 4000)
}

/// I_β(x) = ∫ |x - x_*|^{-β} h(x_*) dx_* for the uniform unit ball,
/// evaluated at distance `radius` from the center by radial quadrature
/// (angular integral in closed form for d = 3; direct angular quadrature
/// for d = 2).
pub fn singular_integral_ball(h: AnalyticDensity, beta: f64, radius: f64) -> f64 {
    let d = h.dim();
    assert!(beta < d as f64, "beta = {beta} >= d = {d} not integrable");
    let v = h.value_at_origin();
    if radius < 1e-12 {
        // centered: spherically symmetric
        return v * ball_kernel_integral(d, beta, 1.0);
    }
    let rr = radius;
    match d {
        3 => {
            // angular integral has the closed form
            // K(r) = ((R+r)^{2-β} - |R-r|^{2-β}) / (2Rr (1-β/2))  (β ≠ 2)
            //      = ln((R+r)²/(R-r)²) / (2Rr)                     (β = 2)
            let kernel = move |r: f64| -> f64 {
                if r < 1e-300 {
                    return 0.0;
                }
                let k = if (beta - 2.0).abs() < 1e-12 {
                    (((rr + r) * (rr + r)) / ((rr - r) * (rr - r))).ln() / (2.0 * rr * r)
                } else {
                    ((rr + r).powf(2.0 - beta) - (rr - r).abs().powf(2.0 - beta))
                        / (2.0 * rr * r * (1.0 - beta / 2.0))
                };
                2.0 * std::f64::consts::PI * r * r * k
            };
            let inner = if rr <= 1.0 {
                integrate_graded(&kernel, 0.0, rr, Some(rr), 4000)
                    + integrate_graded(&kernel, rr, 1.0, Some(rr), 4000)
            } else {
                integrate_graded(&kernel, 0.0, 1.0, None, 4000)
            };
            v * inner
        }
        2 => {
            let kernel = move |r: f64| -> f64 {
                if r < 1e-300 {
                    return 0.0;
                }
                // angular quadrature of (R² + r² - 2Rr cosθ)^{-β/2}
                let ang = simpson(
                    &|theta: f64| {
                        let w2 = rr * rr + r * r - 2.0 * rr * r * theta.cos();
                        w2.max(1e-300).powf(-beta / 2.0)
                    },
                    0.0,
                    std::f64::consts::PI,
                    600,
                );
                2.0 * r * ang
            };
            let inner = if rr <= 1.0 {
                integrate_graded(&kernel, 0.0, rr, Some(rr), 2000)
                    + integrate_graded(&kernel, rr, 1.0, Some(rr), 2000)
            } else {
                integrate_graded(&kernel, 0.0, 1.0, None, 2000)
            };
            v * inner
        }
        _ => panic!("unsupported dimension"),
    }
}

/// Ball-restricted kernel integral ∫_{|x_*| ≤ min(ρ,1)} |x_*|^{-β} h dx_*
/// at the center (the configuration attaining the sup of the small-ball
/// estimate for a radially decreasing density).
pub fn singular_integral_ball_restricted(h: AnalyticDensity, beta: f64, rho: f64) -> f64 {
    let d = h.dim();
    h.value_at_origin() * ball_kernel_integral(d, beta, rho.min(1.0))
}

/// Particle-sum evaluation (1/N) Σ_k |x - z_k|^{-β}; coincident points are
/// skipped and counted.
pub fn singular_integral_particles(
    cloud: &ParticleCloud,
    beta: f64,
    eval_points: &[Vec<f64>],
) -> (Vec<f64>, usize) {
    let n = cloud.len();
    let mut skipped = 0;
    let mut out = Vec::with_capacity(eval_points.len());
    for x in eval_points {
        let mut acc = 0.0;
        let mut used = 0usize;
        for k in 0..n {
            let r2 = linalg::dist_sq(x, cloud.point(k));
            if r2 < 1e-26 {
                skipped += 1;
                continue;
            }
            acc += r2.powf(-beta / 2.0);
            used += 1;
        }
        out.push(if used > 0 { acc / n as f64 } else { 0.0 });
    }
    (out, skipped)
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = num / den;
    let intercept = my - slope * mx;
    (slope, intercept)
}

/// Verify the three small-ball/annulus kernel inequalities on an analytic
/// density over an ε grid.
pub fn verify_sing_int_lemma(
    h: AnalyticDensity,
    alpha: f64,
    beta: f64,
    eps_grid: &[f64],
) -> Result<EstimateReport, EstimateError> {
    let d = h.dim() as f64;
    if !(0.0 <= beta && beta < alpha && alpha <= d) {
        return Err(EstimateError::InvalidArgument(format!(
            "need 0 <= beta < alpha <= d, got beta={beta}, alpha={alpha}, d={d}"
        )));
    }
    if eps_grid.len() < 3 || eps_grid.iter().any(|&e| e <= 0.0 || e >= 1.0) {
        return Err(EstimateError::InvalidArgument("eps grid must have >= 3 values in (0,1)".into()));
    }
    let p = if (d - alpha).abs() < 1e-12 { f64::INFINITY } else { d / (d - alpha) };
    let norm_p = h.lp_norm(p);

    // (1) global bound: sup_x I_β(x) ≤ C (1 + ‖h‖_p)
    let mut sup_global: f64 = 0.0;
    for i in 0..=40 {
        let radius = i as f64 * 0.05; // 0 .. 2
        sup_global = sup_global.max(singular_integral_ball(h, beta, radius));
    }
    let c_global = sup_global / (1.0 + norm_p);

    // (2) small-ball bound: LHS(ε) ≤ S(ε)·‖h‖_p with the Hölder factor
    // S(ε) = (∫_{B_ε} |z|^{-βd/α})^{α/d}, whose slope is the lemma's ε^{α-β}
    let q = beta * d / alpha;
    let mut lhs_eps = Vec::new();
    let mut factor_eps = Vec::new();
    let mut c_eps: f64 = 0.0;
    let mut holder_ok = true;
    for &eps in eps_grid {
        let lhs = singular_integral_ball_restricted(h, beta, eps);
        let factor = ball_kernel_integral(h.dim(), q, eps).powf(alpha / d);
        // the inequality is exact; 1e-4 absorbs the independent quadrature
        // errors of the two sides (α = d cases hold with equality)
        if lhs > factor * norm_p * (1.0 + 1e-4) {
            holder_ok = false;
        }
        c_eps = c_eps.max(lhs / (eps.powf(alpha - beta) * norm_p));
        lhs_eps.push(lhs);
        factor_eps.push(factor);
    }
    let ln_eps: Vec<f64> = eps_grid.iter().map(|e| e.ln()).collect();
    let (scaling_slope, _) =
        fit_slope(&ln_eps, &factor_eps.iter().map(|v| v.ln()).collect::<Vec<_>>());
    let (raw_lhs_slope, _) =
        fit_slope(&ln_eps, &lhs_eps.iter().map(|v| v.ln()).collect::<Vec<_>>());

    // (3) annulus bound: sup_x ∫_{|x-x_*| ≥ ε} |x-x_*|^{-α} h ≤ C (1 - ln ε)‖h‖_p
    let mut c_log: f64 = 0.0;
    let mut annulus_vals = Vec::new();
    for &eps in eps_grid {
        let total = singular_integral_ball(h, alpha.min(d - 1e-9), 0.0);
        // subtract the ball part: ∫_{|x_*| ≤ ε}|x_*|^{-α} h at the center
        let inner = if alpha < d {
            singular_integral_ball_restricted(h, alpha, eps)
        } else {
            // α = d: the full integral diverges; integrate the annulus directly
            h.value_at_origin() * surface_area(h.dim())
                * integrate_graded(&|r: f64| r.powf(d - 1.0 - alpha), eps, 1.0, None, 4000)
        };
        let val = if alpha < d { total - inner } else { inner };
        annulus_vals.push(val);
        c_log = c_log.max(val / ((1.0 - eps.ln()) * norm_p));
    }
    // linearity of the annulus integral in (1 - ln ε), informative at α = d
    let one_minus_log: Vec<f64> = eps_grid.iter().map(|e| 1.0 - e.ln()).collect();
    let (log_slope, _) = fit_slope(&one_minus_log, &annulus_vals);

    let slope_ok = (scaling_slope - (alpha - beta)).abs() <= 0.05;
    let pass = slope_ok && holder_ok && c_global.is_finite() && c_log.is_finite();
    Ok(EstimateReport {
        lemma_id: "sing_ints".into(),
        sample_count: eps_grid.len(),
        sup_ratio: c_eps,
        fitted_c: c_global.max(c_eps).max(c_log),
        pass,
        slope: Some(scaling_slope),
        slope_expected: Some(alpha - beta),
        details: serde_json::json!({
            "alpha": alpha,
            "beta": beta,
            "d": d,
            "p": if p.is_infinite() { serde_json::json!("inf") } else { serde_json::json!(p) },
            "norm_p": norm_p,
            "c_global": c_global,
            "c_small_ball": c_eps,
            "c_annulus_log": c_log,
            "holder_pointwise_ok": holder_ok,
            "raw_lhs_slope": raw_lhs_slope,
            "annulus_linear_slope": log_slope,
        }),
    })
}

/// Which coefficient estimate to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    /// ∫ |σ(x-z) - σ(y-z)|² f(z) dz ≤ C max(‖f^{(i)}‖_p, 1) Ψ(|x-y|²)
    SigmaSq,
    /// ∫ |b(x-z) - b(y-z)| f(z) dz ≤ C max(‖f^{(i)}‖_p, 1) Ψ(|x-y|)
    B,
    /// ∫ |b(x-x_*) - b(y-y_*)||x-y| dΠ* dΠ ≤ C max(‖·‖_p, 1) Ψ(∫|x-y|² dΠ)
    BPlan,
}

impl EstimateMode {
    fn lemma_id(&self) -> &'static str {
        match self {
            EstimateMode::SigmaSq => "A_estimate",
            EstimateMode::B => "b_estimate",
            EstimateMode::BPlan => "b_estimate2",
        }
    }
}

// Regression fixtures: sup ratios measured on the reference configuration
// (Landau-type kernels, Gaussian clouds N = 4096, seeds {424242, 7, 99},
// gaps 1e-6..1): sigma_sq 0.60-0.64, b 2.50-2.63, b_plan (N=256) 1.34,
// soft two-term 0.010-0.032. Thresholds carry ~4x margin because the
// particle sums have heavy-tailed summands near the singular set.
const FIXTURE_HARD_SIGMA: f64 = 2.5;
const FIXTURE_HARD_B: f64 = 8.0;
const FIXTURE_HARD_B_PLAN: f64 = 4.0;
const FIXTURE_SOFT: f64 = 0.1;

fn cloud_norm_bundle(spec: &ModelSpec, cloud: &ParticleCloud) -> Result<f64, EstimateError> {
    let mut max_norm: f64 = 1.0;
    let p = spec.p_exponent();
    for i in 0..spec.k {
        let marg = spec.marginal(cloud, i)?;
        let bw = silverman_bandwidth(&marg);
        max_norm = max_norm.max(lp_norm_estimate(&marg, p, bw)?);
    }
    Ok(max_norm)
}

/// Empirically verify the hard-case (2 ≤ α ≤ d) coefficient estimates on a
/// particle cloud: sampled pairs (x, y) across |x-y| ∈ [1e-6, 1], LHS by
/// particle sums, the log-Lipschitz shape Ψ as reference. Pass requires the
/// per-gap sup ratio to stay non-diverging as the gap shrinks and below the
/// stored regression fixture.
pub fn verify_coefficient_estimate(
    spec: &ModelSpec,
    f_cloud: &ParticleCloud,
    pair_samples: usize,
    mode: EstimateMode,
) -> Result<EstimateReport, EstimateError> {
    if !(2.0 <= spec.alpha && spec.alpha <= spec.d as f64) {
        return Err(EstimateError::AlphaOutOfMode { expected: "[2, d] (use the soft-case verifier)", got: spec.alpha });
    }
    if pair_samples == 0 {
        return Err(EstimateError::InvalidArgument("pair_samples must be >= 1".into()));
    }
    let n_dim = spec.n;
    let max_norm = cloud_norm_bundle(spec, f_cloud)?;
    let gaps: Vec<f64> = (0..=24).map(|i| 10f64.powf(-6.0 + 0.25 * i as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    let mut per_gap_sup = vec![0.0f64; gaps.len()];
    let mut skipped_total = 0usize;
    let mut samples = 0usize;

    match mode {
        EstimateMode::SigmaSq | EstimateMode::B => {
            for (gi, &gap) in gaps.iter().enumerate() {
                for _ in 0..pair_samples {
                    let x: Vec<f64> =
                        (0..n_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let mut dir: Vec<f64> =
                        (0..n_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let nd = linalg::norm(&dir).max(1e-300);
                    dir.iter_mut().for_each(|v| *v *= gap / nd);
                    let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
                    let mut lhs = 0.0;
                    let mut used = 0usize;
                    let mut zx = vec![0.0; n_dim];
                    let mut zy = vec![0.0; n_dim];
                    for k in 0..f_cloud.len() {
                        let z = f_cloud.point(k);
                        linalg::sub_into(&x, z, &mut zx);
                        linalg::sub_into(&y, z, &mut zy);
                        // exclude block-coincident points (singular kernel)
                        let min_block = spec
                            .block_norms(&zx)
                            .into_iter()
                            .chain(spec.block_norms(&zy))
                            .fold(f64::INFINITY, f64::min);
                        if min_block < 1e-13 {
                            skipped_total += 1;
                            continue;
                        }
                        match mode {
                            EstimateMode::SigmaSq => {
                                let d = spec.sigma_eval(&zx).sub(&spec.sigma_eval(&zy));
                                let fr = d.frobenius_norm();
                                lhs += fr * fr;
                            }
                            EstimateMode::B => {
                                let bx = spec.b_eval(&zx);
                                let by = spec.b_eval(&zy);
                                lhs += bx
                                    .iter()
                                    .zip(&by)
                                    .map(|(a, b)| (a - b) * (a - b))
                                    .sum::<f64>()
                                    .sqrt();
                            }
                            EstimateMode::BPlan => unreachable!(),
                        }
                        used += 1;
                    }
                    if used == 0 {
                        continue;
                    }
                    lhs /= f_cloud.len() as f64;
                    let shape = match mode {
                        EstimateMode::SigmaSq => psi(gap * gap),
                        _ => psi(gap),
                    };
                    let ratio = lhs / (max_norm * shape);
                    per_gap_sup[gi] = per_gap_sup[gi].max(ratio);
                    samples += 1;
                }
            }
        }
        EstimateMode::BPlan => {
            for (gi, &gap) in gaps.iter().enumerate() {
                // paired clouds: Y_i = X_i + gap·u_i, Π = identity pairing,
                // Π* from the exact solver
                let mut y_pts = Vec::with_capacity(f_cloud.len() * n_dim);
                for i in 0..f_cloud.len() {
                    let dir: Vec<f64> =
                        (0..n_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let nd = linalg::norm(&dir).max(1e-300);
                    for (q, d) in dir.iter().enumerate() {
                        y_pts.push(f_cloud.point(i)[q] + gap / nd * d);
                    }
                }
                let y_cloud = ParticleCloud::new(n_dim, y_pts, f_cloud.time)?;
                let (_, plan) = w2_exact(f_cloud, &y_cloud)?;
                let n = f_cloud.len();
                let mut gap_sq_mean = 0.0;
                for i in 0..n {
                    gap_sq_mean += linalg::dist_sq(f_cloud.point(i), y_cloud.point(i));
                }
                gap_sq_mean /= n as f64;
                let mut lhs = 0.0;
                let mut zx = vec![0.0; n_dim];
                let mut zy = vec![0.0; n_dim];
                for i in 0..n {
                    let gap_i =
                        linalg::dist_sq(f_cloud.point(i), y_cloud.point(i)).sqrt();
                    for j in 0..n {
                        linalg::sub_into(f_cloud.point(i), f_cloud.point(j), &mut zx);
                        linalg::sub_into(y_cloud.point(i), y_cloud.point(plan.pairing[j]), &mut zy);
                        let min_block = spec
                            .block_norms(&zx)
                            .into_iter()
                            .chain(spec.block_norms(&zy))
                            .fold(f64::INFINITY, f64::min);
                        if min_block < 1e-13 {
                            skipped_total += 1;
                            continue;
                        }
                        let bx = spec.b_eval(&zx);
                        let by = spec.b_eval(&zy);
                        let diff = bx
                            .iter()
                            .zip(&by)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        lhs += diff * gap_i;
                    }
                }
                lhs /= (n * n) as f64;
                let ratio = lhs / (max_norm * psi(gap_sq_mean));
                per_gap_sup[gi] = per_gap_sup[gi].max(ratio);
                samples += 1;
            }
        }
    }

    let sup_ratio = per_gap_sup.iter().cloned().fold(0.0f64, f64::max);
    // non-divergence: slope of the per-gap sup ratios over the small-gap
    // half must not be substantially negative (ratio growing as gap → 0)
    let half = gaps.len() / 2;
    let xs: Vec<f64> = gaps[..half].iter().map(|g| g.ln()).collect();
    let ys: Vec<f64> = per_gap_sup[..half].iter().map(|r| r.max(1e-300).ln()).collect();
    let (small_gap_slope, _) = fit_slope(&xs, &ys);
    let non_diverging = small_gap_slope >= -0.1;
    let fixture = match mode {
        EstimateMode::SigmaSq => FIXTURE_HARD_SIGMA,
        EstimateMode::B => FIXTURE_HARD_B,
        EstimateMode::BPlan => FIXTURE_HARD_B_PLAN,
    };
    let pass = non_diverging && sup_ratio <= fixture;
    Ok(EstimateReport {
        lemma_id: mode.lemma_id().into(),
        sample_count: samples,
        sup_ratio,
        fitted_c: sup_ratio,
        pass,
        slope: Some(small_gap_slope),
        slope_expected: Some(0.0),
        details: serde_json::json!({
            "mode": format!("{mode:?}"),
            "alpha": spec.alpha,
            "max_norm": max_norm,
            "skipped_points": skipped_total,
            "per_gap_sup": per_gap_sup,
            "gaps": gaps,
            "fixture": fixture,
        }),
    })
}

/// Soft-case (0 < α < 2) two-term estimates: for each ε the bound
///
/// σ mode:  LHS ≤ C[(1-ln ε)·max(norms,1)·gap² + ε^{α²/2}(m₂+|x|²+|y|²+norms)]
/// b modes: LHS ≤ C[(1-ln ε)·max(norms,1)·gap  + ε^{α²}  (m₂+1+|x|+|y|)]
///
/// The verifier fits C per ε, reports the ε-optimized bound and the slope
/// of the assembled second term (α²/2 resp. α²).
pub fn verify_soft_case_estimate(
    spec: &ModelSpec,
    f_cloud: &ParticleCloud,
    eps_grid: &[f64],
    mode: EstimateMode,
) -> Result<EstimateReport, EstimateError> {
    let alpha = spec.alpha;
    match mode {
        EstimateMode::SigmaSq => {
            if !(0.0 < alpha && alpha < 2.0) {
                return Err(EstimateError::AlphaOutOfMode { expected: "(0, 2)", got: alpha });
            }
        }
        EstimateMode::B | EstimateMode::BPlan => {
            if !(0.0 < alpha && alpha < 1.0) {
                return Err(EstimateError::AlphaOutOfMode { expected: "(0, 1)", got: alpha });
            }
        }
    }
    if eps_grid.len() < 3 || eps_grid.iter().any(|&e| e <= 0.0 || e >= 1.0) {
        return Err(EstimateError::InvalidArgument("eps grid must have >= 3 values in (0,1)".into()));
    }
    let n_dim = spec.n;
    let max_norm = cloud_norm_bundle(spec, f_cloud)?;
    let m2 = f_cloud.second_moment();
    let second_exponent = match mode {
        EstimateMode::SigmaSq => alpha * alpha / 2.0,
        _ => alpha * alpha,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let gaps = [0.0, 0.01, 0.1, 0.5];
    let pair_samples = 24;
    struct Sample {
        lhs: f64,
        gap: f64,
        xs: f64, // |x|-dependent part of the second term
    }
    let mut samples_v: Vec<Sample> = Vec::new();
    let mut zx = vec![0.0; n_dim];
    let mut zy = vec![0.0; n_dim];
    for &gap in &gaps {
        for _ in 0..pair_samples {
            let x: Vec<f64> = (0..n_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut dir: Vec<f64> =
                (0..n_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let nd = linalg::norm(&dir).max(1e-300);
            dir.iter_mut().for_each(|v| *v *= gap / nd);
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let mut lhs = 0.0;
            let mut used = 0usize;
            for k in 0..f_cloud.len() {
                let z = f_cloud.point(k);
                linalg::sub_into(&x, z, &mut zx);
                linalg::sub_into(&y, z, &mut zy);
                let min_block = spec
                    .block_norms(&zx)
                    .into_iter()
                    .chain(spec.block_norms(&zy))
                    .fold(f64::INFINITY, f64::min);
                if min_block < 1e-13 {
                    continue;
                }
                match mode {
                    EstimateMode::SigmaSq => {
                        let d = spec.sigma_eval(&zx).sub(&spec.sigma_eval(&zy));
                        let fr = d.frobenius_norm();
                        lhs += fr * fr;
                    }
                    _ => {
                        let bx = spec.b_eval(&zx);
                        let by = spec.b_eval(&zy);
                        lhs += bx
                            .iter()
                            .zip(&by)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                    }
                }
                used += 1;
            }
            if used == 0 {
                continue;
            }
            lhs /= f_cloud.len() as f64;
            let xs = match mode {
                EstimateMode::SigmaSq => {
                    m2 + linalg::norm_sq(&x) + linalg::norm_sq(&y) + max_norm
                }
                _ => m2 + 1.0 + linalg::norm(&x) + linalg::norm(&y),
            };
            samples_v.push(Sample { lhs, gap, xs });
        }
    }

    let gap_shape = |gap: f64| match mode {
        EstimateMode::SigmaSq => gap * gap,
        _ => gap,
    };
    // per-ε fitted constant and the assembled second term for the slope fit
    let mut c_per_eps = Vec::with_capacity(eps_grid.len());
    let mut t2_per_eps = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let log_term = 1.0 - eps.ln();
        let mut c: f64 = 0.0;
        let mut t2_mean = 0.0;
        for s in &samples_v {
            let t1 = log_term * max_norm * gap_shape(s.gap);
            let t2 = eps.powf(second_exponent) * s.xs;
            c = c.max(s.lhs / (t1 + t2));
            t2_mean += t2;
        }
        t2_mean /= samples_v.len() as f64;
        c_per_eps.push(c);
        t2_per_eps.push(t2_mean);
    }
    // ε-optimized bound per sample
    let mut sup_ratio_opt: f64 = 0.0;
    for s in &samples_v {
        let bound_opt = eps_grid
            .iter()
            .map(|&eps| {
                (1.0 - eps.ln()) * max_norm * gap_shape(s.gap)
                    + eps.powf(second_exponent) * s.xs
            })
            .fold(f64::INFINITY, f64::min);
        sup_ratio_opt = sup_ratio_opt.max(s.lhs / bound_opt);
    }
    let ln_eps: Vec<f64> = eps_grid.iter().map(|e| e.ln()).collect();
    let ln_t2: Vec<f64> = t2_per_eps.iter().map(|v| v.ln()).collect();
    let (slope, _) = fit_slope(&ln_eps, &ln_t2);
    let slope_ok = (slope - second_exponent).abs() <= 0.05;
    let fitted_c = c_per_eps.iter().cloned().fold(0.0f64, f64::max);
    let pass = slope_ok && sup_ratio_opt <= FIXTURE_SOFT && fitted_c.is_finite();
    Ok(EstimateReport {
        lemma_id: match mode {
            EstimateMode::SigmaSq => "sigma_est_mod_soft".into(),
            _ => "b_est_mod_soft".into(),
        },
        sample_count: samples_v.len(),
        sup_ratio: sup_ratio_opt,
        fitted_c,
        pass,
        slope: Some(slope),
        slope_expected: Some(second_exponent),
        details: serde_json::json!({
            "mode": format!("{mode:?}"),
            "alpha": alpha,
            "max_norm": max_norm,
            "m2": m2,
            "c_per_eps": c_per_eps,
            "eps_grid": eps_grid,
            "fixture": FIXTURE_SOFT,
        }),
    })
}
