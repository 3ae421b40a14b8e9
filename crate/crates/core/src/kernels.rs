//! Closed-form coefficient kernels: Landau collision algebra (projection,
//! Φ, b, the diffusion square root built from the fields b_j), fuzzy and
//! multispecies block coefficients, the Biot-Savart / Coulomb / screened-
//! Poisson interaction kernels, the smoothstep cutoff, and the lifted
//! 12-dimensional fields with their commutator algebra.
//!
//! Conventions used throughout the crate:
//!
//! * `b_field(j, z) = e_j × z`, so `b1(z) = (0, -z3, z2)` etc. These span
//!   ⟨z⟩^⊥ and satisfy Σ_j b_j(z) ⊗ b_j(z) = |z|² P(z) and div b_j = 0.
//! * `landau_sigma(z, γ) = |z|^{γ/2} [b1 b2 b3]` (columns), which satisfies
//!   σσᵀ = Φ(z) = |z|^{2+γ} P(z) exactly in exact arithmetic.
//! * Lifted coordinates are ordered (x, v, x*, v*) ∈ (R³)⁴.

use crate::linalg::{cholesky3_psd, Mat};
use crate::model::ModelSpec;

/// Orthogonal projection P(z) = Id - z⊗z/|z|² onto ⟨z⟩^⊥. Panics on z = 0.
pub fn projection(z: [f64; 3]) -> [[f64; 3]; 3] {
    let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
    assert!(r2 > 0.0, "projection: z = 0");
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = if i == j { 1.0 } else { 0.0 } - z[i] * z[j] / r2;
        }
    }
    p
}

/// Φ(z) = |z|^{2+γ} P(z). Returns the zero matrix at z = 0 when 2+γ > 0;
/// panics at z = 0 when 2+γ ≤ 0.
pub fn landau_phi(z: [f64; 3], gamma: f64) -> [[f64; 3]; 3] {
    let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
    if r2 == 0.0 {
        assert!(2.0 + gamma > 0.0, "landau_phi: z = 0 with 2+gamma <= 0");
        return [[0.0; 3]; 3];
    }
    let scale = r2.powf((2.0 + gamma) / 2.0);
    let mut p = projection(z);
    for row in p.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    p
}

/// b(z) = div Φ(z) = -2 |z|^γ z. Returns 0 at z = 0 when γ ≥ 0; panics at
/// z = 0 when γ < 0.
pub fn landau_b(z: [f64; 3], gamma: f64) -> [f64; 3] {
    let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
    if r2 == 0.0 {
        assert!(gamma >= 0.0, "landau_b: z = 0 with gamma < 0");
        return [0.0; 3];
    }
    let scale = -2.0 * r2.powf(gamma / 2.0);
    [scale * z[0], scale * z[1], scale * z[2]]
}

/// The divergence-free fields b_j(z) = e_j × z spanning ⟨z⟩^⊥ (j = 0,1,2).
#[inline]
pub fn b_field(j: usize, z: [f64; 3]) -> [f64; 3] {
    match j {
        0 => [0.0, -z[2], z[1]],
        1 => [z[2], 0.0, -z[0]],
        2 => [-z[1], z[0], 0.0],
        _ => panic!("b_field: index {j} out of range"),
    }
}

/// Diffusion square root σ(z) = |z|^{γ/2} [b1(z) b2(z) b3(z)] (columns).
/// σσᵀ = Φ(z). Returns 0 at z = 0 when γ > -2; panics there when γ ≤ -2.
pub fn landau_sigma(z: [f64; 3], gamma: f64) -> [[f64; 3]; 3] {
    let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
    if r2 == 0.0 {
        assert!(gamma > -2.0, "landau_sigma: z = 0 with gamma <= -2");
        return [[0.0; 3]; 3];
    }
    let scale = r2.powf(gamma / 4.0);
    let mut out = [[0.0; 3]; 3];
    for j in 0..3 {
        let col = b_field(j, z);
        for i in 0..3 {
            out[i][j] = scale * col[i];
        }
    }
    out
}

/// Spatial interaction profile κ for the fuzzy model. `sqrt_kappa` must be
/// bounded and Lipschitz for the stability theory to apply; an estimate of
/// its Lipschitz constant is exposed for the harness warning.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Kappa {
    Const { value: f64 },
    /// κ(x) = amplitude · exp(-|x|²/width²)
    Gaussian { amplitude: f64, width: f64 },
}

impl Kappa {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = match self {
            Kappa::Const { value } => *value,
            Kappa::Gaussian { amplitude, width } => {
                let r2: f64 = x.iter().map(|a| a * a).sum();
                amplitude * (-r2 / (width * width)).exp()
            }
        };
        assert!(v >= 0.0, "kappa must be non-negative, got {v}");
        v
    }

    /// Crude Lipschitz constant of √κ (exact for the built-in shapes).
    pub fn sqrt_lipschitz(&self) -> f64 {
        match self {
            Kappa::Const { .. } => 0.0,
            // |∇√κ| = √amplitude · |x|/w² · exp(-|x|²/2w²), maximized at |x| = w
            Kappa::Gaussian { amplitude, width } => {
                amplitude.max(0.0).sqrt() / width * (-0.5f64).exp()
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Kappa::Const { value } => *value,
            Kappa::Gaussian { amplitude, .. } => *amplitude,
        }
    }
}

/// Fuzzy Landau per-partner coefficients at state difference (dv, dx)
/// (velocity block first, matching the crate's fuzzy state layout).
///
/// drift = (2 κ(dx) · landau_b(dv, γ), 0) ∈ R⁶,
/// σ     = 6×6 with velocity block √κ(dx) · landau_sigma(dv, γ),
/// so that σσᵀ has the single nonzero block κ(dx) |dv|^{2+γ} P(dv).
pub fn fuzzy_coefficients(dx: [f64; 3], dv: [f64; 3], gamma: f64, kappa: &Kappa) -> ([f64; 6], Mat) {
    let kap = kappa.eval(&dx);
    let b = landau_b(dv, gamma);
    let mut drift = [0.0; 6];
    for i in 0..3 {
        drift[i] = 2.0 * kap * b[i];
    }
    let mut sigma = Mat::zeros(6, 6);
    let block = landau_sigma(dv, gamma);
    let sk = kap.sqrt();
    for i in 0..3 {
        for j in 0..3 {
            *sigma.at_mut(i, j) = sk * block[i][j];
        }
    }
    (drift, sigma)
}

/// Multispecies per-partner coefficients at the block difference
/// z = (z¹, ..., z^{N_s}) ∈ R^{3 N_s}.
///
/// drift block i = Σ_j (c_ij/m_i)(1/m_i + 1/m_j) · landau_b(z^j, γ)
/// (reduces to the homogeneous 2(b∗f) kernel at N_s = 1, m = c = 1);
/// diffusion block i of A = Σ_j (c_ij/(m_i m_j)) |z^j|^{2+γ} P(z^j),
/// returned through its per-block PSD Cholesky factor.
pub fn multispecies_coefficients(
    z: &[f64],
    gamma: f64,
    masses: &[f64],
    coupling: &Mat,
) -> (Vec<f64>, Mat) {
    let ns = masses.len();
    assert_eq!(z.len(), 3 * ns, "multispecies_coefficients: z has wrong length");
    assert_eq!(coupling.rows(), ns);
    assert_eq!(coupling.cols(), ns);
    assert!(masses.iter().all(|&m| m > 0.0), "multispecies_coefficients: mass <= 0");

    let blocks: Vec<[f64; 3]> =
        (0..ns).map(|j| [z[3 * j], z[3 * j + 1], z[3 * j + 2]]).collect();

    let mut drift = vec![0.0; 3 * ns];
    let mut sigma = Mat::zeros(3 * ns, 3 * ns);
    for i in 0..ns {
        let mut a_block = [[0.0; 3]; 3];
        for j in 0..ns {
            let cij = coupling.at(i, j);
            let bj = landau_b(blocks[j], gamma);
            let w = cij / masses[i] * (1.0 / masses[i] + 1.0 / masses[j]);
            for q in 0..3 {
                drift[3 * i + q] += w * bj[q];
            }
            let phi = landau_phi(blocks[j], gamma);
            let wa = cij / (masses[i] * masses[j]);
            for r in 0..3 {
                for c in 0..3 {
                    a_block[r][c] += wa * phi[r][c];
                }
            }
        }
        let root = cholesky3_psd(&a_block);
        sigma.set_block3(3 * i, 3 * i, &root);
    }
    (drift, sigma)
}

/// Biot-Savart kernel K_BS(x) = (1/(2π|x|²)) (-x₂, x₁). Panics on x = 0.
pub fn biot_savart(x: [f64; 2]) -> [f64; 2] {
    let r2 = x[0] * x[0] + x[1] * x[1];
    assert!(r2 > 0.0, "biot_savart: x = 0");
    let s = 1.0 / (2.0 * std::f64::consts::PI * r2);
    [-x[1] * s, x[0] * s]
}

/// Coulomb field kernel -(1/4π) x/|x|³. Panics on x = 0.
pub fn coulomb_field(x: [f64; 3]) -> [f64; 3] {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    assert!(r2 > 0.0, "coulomb_field: x = 0");
    let s = -1.0 / (4.0 * std::f64::consts::PI * r2 * r2.sqrt());
    [x[0] * s, x[1] * s, x[2] * s]
}

/// Gradient of the fundamental solution of -Δu + a·u in the plane:
/// a = 0 gives -x/(2π|x|²); a > 0 gives -(√a/2π) K₁(√a|x|) x/|x|.
/// Panics on x = 0 or a < 0.
pub fn ks_potential_gradient(x: [f64; 2], a: f64) -> [f64; 2] {
    assert!(a >= 0.0, "ks_potential_gradient: a < 0");
    let r2 = x[0] * x[0] + x[1] * x[1];
    assert!(r2 > 0.0, "ks_potential_gradient: x = 0");
    let r = r2.sqrt();
    let two_pi = 2.0 * std::f64::consts::PI;
    if a == 0.0 {
        let s = -1.0 / (two_pi * r2);
        [x[0] * s, x[1] * s]
    } else {
        let sa = a.sqrt();
        let s = -sa / two_pi * bessel_k1(sa * r) / r;
        [x[0] * s, x[1] * s]
    }
}

// Chebyshev fits of the modified Bessel function K₁ (generated numerically
// against high-accuracy reference values; max relative error < 1e-13).
//
// 0 < x ≤ 2:  K₁(x) = ln(x/2)·I₁(x) + P(x²)/x, with P, I₁(x)/x expanded in
//             T_k((w-2)/2), w = x² ∈ [0,4].
// x ≥ 2:      K₁(x) = e^{-x}/√x · R(2/x), with R expanded in T_k(2u-1),
//             u = 2/x ∈ (0,1].
const K1_SMALL_P: [f64; 9] = [
    0.7626501136694744,
    -0.3531559607765435,
    -0.12261118082265719,
    -0.006975723859641449,
    -0.00017302889575147892,
    -2.4334061415552182e-06,
    -2.2133876494275778e-08,
    -1.411472169722173e-10,
    -6.667348057977623e-13,
];
const I1_SMALL_Q: [f64; 9] = [
    0.6417589969911875,
    0.14753932014919477,
    0.005898742680020926,
    0.00011988137174547705,
    1.4739165116581233e-06,
    1.2138074881011361e-08,
    7.161088793366814e-11,
    3.1851971230091274e-13,
    1.0399108516243407e-15,
];
const K1_LARGE_R: [f64; 20] = [
    1.3603130952422204,
    0.10392373657681746,
    -0.002857816859622991,
    0.0001952155184714667,
    -1.936197974188626e-05,
    2.4064849481665277e-06,
    -3.5019606069310525e-07,
    5.741084158235449e-08,
    -1.034576297852185e-08,
    2.015050166714046e-09,
    -4.1903541712179275e-10,
    9.21834686449288e-11,
    -2.1300049043952338e-11,
    5.139856140655616e-12,
    -1.2905436369209794e-12,
    3.3477596561061245e-13,
    -9.055682462987172e-14,
    2.4705313542005266e-14,
    -7.036718061902835e-15,
    1.969956879385469e-15,
];

fn chebyshev_eval(t: f64, coefs: &[f64]) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coefs.iter().skip(1).rev() {
        let tmp = b1;
        b1 = 2.0 * t * b1 - b2 + c;
        b2 = tmp;
    }
    t * b1 - b2 + coefs[0]
}

/// Modified Bessel function of the second kind K₁(x), x > 0.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k1: x <= 0");
    if x <= 2.0 {
        let w = x * x;
        let t = w / 2.0 - 1.0;
        let i1 = chebyshev_eval(t, &I1_SMALL_Q) * x;
        (x / 2.0).ln() * i1 + chebyshev_eval(t, &K1_SMALL_P) / x
    } else {
        let u = 2.0 / x;
        let t = 2.0 * u - 1.0;
        (-x).exp() / x.sqrt() * chebyshev_eval(t, &K1_LARGE_R)
    }
}

/// Cubic smoothstep realization of the cutoff Θ_ε: 0 on [0, ε], 1 on
/// [2ε, ∞), 3s²-2s³ with s = (r-ε)/ε in between.
pub fn smoothstep_cutoff(r: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0);
    if r <= eps {
        0.0
    } else if r >= 2.0 * eps {
        1.0
    } else {
        let s = (r - eps) / eps;
        s * s * (3.0 - 2.0 * s)
    }
}

/// Returns a spec whose interaction coefficients b, σ are multiplied by
/// Π_i Θ_ε(|z^i|); they vanish whenever some block satisfies |z^i| ≤ ε and
/// coincide with the original when all |z^i| ≥ 2ε. The cutoff factor is
/// evaluated before the inner kernels, so singular kernels are never
/// evaluated inside the dead zone.
pub fn cutoff_coefficients(spec: &ModelSpec, eps: f64) -> ModelSpec {
    assert!(eps > 0.0, "cutoff_coefficients: eps <= 0");
    spec.with_cutoff(eps)
}

/// Lifted 12-dimensional algebra for the fuzzy model: coordinates ordered
/// (x, v, x*, v*).
pub mod lifted {
    use super::b_field;

    pub const DIM: usize = 12;

    /// Evaluation of the lifted fields at (v, v*).
    #[derive(Debug, Clone)]
    pub struct LiftedEval {
        /// b̃_j(v - v*) = (0, b_j, 0, -b_j), j = 0,1,2
        pub b_tilde: [[f64; DIM]; 3],
        /// n̂ = (0, v - v*, 0, v* - v)
        pub n_hat: [f64; DIM],
        /// r = |v - v*|
        pub r: f64,
    }

    /// The lifted fields b̃_j, the radial vector n̂ and r = |v - v*|.
    pub fn lifted_fields(v: [f64; 3], v_star: [f64; 3]) -> LiftedEval {
        let z = [v[0] - v_star[0], v[1] - v_star[1], v[2] - v_star[2]];
        let mut b_tilde = [[0.0; DIM]; 3];
        for j in 0..3 {
            let bj = b_field(j, z);
            for q in 0..3 {
                b_tilde[j][3 + q] = bj[q];
                b_tilde[j][9 + q] = -bj[q];
            }
        }
        let mut n_hat = [0.0; DIM];
        for q in 0..3 {
            n_hat[3 + q] = z[q];
            n_hat[9 + q] = -z[q];
        }
        LiftedEval { b_tilde, n_hat, r: (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt() }
    }

    /// ẽ_i = (0, e_i, 0, e_i)/√2
    pub fn e_tilde(i: usize) -> [f64; DIM] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = [0.0; DIM];
        v[3 + i] = s;
        v[9 + i] = s;
        v
    }

    /// ê_i = (0, e_i, 0, -e_i)/√2
    pub fn e_hat(i: usize) -> [f64; DIM] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = [0.0; DIM];
        v[3 + i] = s;
        v[9 + i] = -s;
        v
    }

    /// ξ_i = (e_i, 0, 0, 0)
    pub fn xi(i: usize) -> [f64; DIM] {
        let mut v = [0.0; DIM];
        v[i] = 1.0;
        v
    }

    /// η_i = (0, 0, e_i, 0)
    pub fn eta(i: usize) -> [f64; DIM] {
        let mut v = [0.0; DIM];
        v[6 + i] = 1.0;
        v
    }

    fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
        match (i, j, k) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
            (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
            _ => 0.0,
        }
    }

    /// Table value [ê_i, b̃_j] = 2 ε_{jir} ê_r (all [ẽ_i, b̃_j], [ξ_i, b̃_j],
    /// [η_i, b̃_j] vanish).
    pub fn fuzzy_commutator_expected(i: usize, j: usize) -> [f64; DIM] {
        let mut out = [0.0; DIM];
        for r in 0..3 {
            let c = 2.0 * levi_civita(j, i, r);
            if c != 0.0 {
                let er = e_hat(r);
                for (o, e) in out.iter_mut().zip(er.iter()) {
                    *o += c * e;
                }
            }
        }
        out
    }

    /// Multispecies lifted frame on (R³)^{2N}: coordinates
    /// (v¹, ..., v^N, v*¹, ..., v*^N).
    #[derive(Debug, Clone)]
    pub struct MultiFrame {
        pub masses: Vec<f64>,
    }

    impl MultiFrame {
        pub fn new(masses: Vec<f64>) -> Self {
            assert!(masses.iter().all(|&m| m > 0.0));
            MultiFrame { masses }
        }

        pub fn dim(&self) -> usize {
            6 * self.masses.len()
        }

        /// e_{l,q}: canonical direction q of the v^l block.
        pub fn e(&self, l: usize, q: usize) -> Vec<f64> {
            let mut v = vec![0.0; self.dim()];
            v[3 * l + q] = 1.0;
            v
        }

        /// ξ_{l,q}: canonical direction q of the v*^l block.
        pub fn xi(&self, l: usize, q: usize) -> Vec<f64> {
            let n = self.masses.len();
            let mut v = vec![0.0; self.dim()];
            v[3 * (n + l) + q] = 1.0;
            v
        }

        /// b_k^{i,j} at the given full point: (1/m_i) b_k(v^i - v*^j) in
        /// block v^i, -(1/m_j) b_k(v^i - v*^j) in block v*^j.
        pub fn b_field(&self, k: usize, i: usize, j: usize, point: &[f64]) -> Vec<f64> {
            let n = self.masses.len();
            assert_eq!(point.len(), self.dim());
            let z = [
                point[3 * i] - point[3 * (n + j)],
                point[3 * i + 1] - point[3 * (n + j) + 1],
                point[3 * i + 2] - point[3 * (n + j) + 2],
            ];
            let bk = b_field(k, z);
            let mut out = vec![0.0; self.dim()];
            for q in 0..3 {
                out[3 * i + q] = bk[q] / self.masses[i];
                out[3 * (n + j) + q] = -bk[q] / self.masses[j];
            }
            out
        }

        /// n^{i,j}: v^i - v*^j in block v^i, its negative in block v*^j.
        pub fn n_field(&self, i: usize, j: usize, point: &[f64]) -> Vec<f64> {
            let n = self.masses.len();
            let mut out = vec![0.0; self.dim()];
            for q in 0..3 {
                let d = point[3 * i + q] - point[3 * (n + j) + q];
                out[3 * i + q] = d;
                out[3 * (n + j) + q] = -d;
            }
            out
        }

        /// Table value [e_{i,q}, b_k^{i,j}] = ε_{kqr} (e_{i,r}/m_i - ξ_{j,r}/m_j).
        pub fn commutator_expected(&self, q: usize, k: usize, i: usize, j: usize) -> Vec<f64> {
            let mut out = vec![0.0; self.dim()];
            for r in 0..3 {
                let c = levi_civita(k, q, r);
                if c != 0.0 {
                    let e = self.e(i, r);
                    let x = self.xi(j, r);
                    for idx in 0..self.dim() {
                        out[idx] += c * (e[idx] / self.masses[i] - x[idx] / self.masses[j]);
                    }
                }
            }
            out
        }
    }

    /// Central-difference Lie bracket [a, b]_i = a·∇b_i - b·∇a_i at `point`.
    /// Exact (to round-off) for affine fields.
    pub fn lie_bracket(
        field_a: &dyn Fn(&[f64]) -> Vec<f64>,
        field_b: &dyn Fn(&[f64]) -> Vec<f64>,
        point: &[f64],
        h: f64,
    ) -> Result<Vec<f64>, String> {
        assert!(h > 0.0, "lie_bracket: h <= 0");
        let m = point.len();
        let a0 = field_a(point);
        let b0 = field_b(point);
        if !a0.iter().chain(b0.iter()).all(|v| v.is_finite()) {
            return Err("non-finite field value at evaluation point".into());
        }
        let mut out = vec![0.0; m];
        let mut p_plus = point.to_vec();
        let mut p_minus = point.to_vec();
        for j in 0..m {
            p_plus[j] = point[j] + h;
            p_minus[j] = point[j] - h;
            let bp = field_b(&p_plus);
            let bm = field_b(&p_minus);
            let ap = field_a(&p_plus);
            let am = field_a(&p_minus);
            if !bp.iter().chain(bm.iter()).chain(ap.iter()).chain(am.iter()).all(|v| v.is_finite())
            {
                return Err(format!("non-finite field value in stencil at coordinate {j}"));
            }
            for i in 0..m {
                let db = (bp[i] - bm[i]) / (2.0 * h);
                let da = (ap[i] - am[i]) / (2.0 * h);
                out[i] += a0[j] * db - b0[j] * da;
            }
            p_plus[j] = point[j];
            p_minus[j] = point[j];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec3(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0]
    }

    #[test]
    fn projection_axis_case() {
        let p = projection([1.0, 0.0, 0.0]);
        let want = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn projection_diagonal_case() {
        let s = 1.0 / 2f64.sqrt();
        let p = projection([s, s, 0.0]);
        let want = [[0.5, -0.5, 0.0], [-0.5, 0.5, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - want[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn projection_properties_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let z = rand_vec3(&mut rng);
            if z.iter().map(|a| a * a).sum::<f64>() < 1e-6 {
                continue;
            }
            let p = projection(z);
            // symmetric, idempotent, annihilates z, trace 2
            let mut tr = 0.0;
            for i in 0..3 {
                tr += p[i][i];
                let pz: f64 = (0..3).map(|j| p[i][j] * z[j]).sum();
                assert!(pz.abs() < 1e-14, "P z != 0");
                for j in 0..3 {
                    assert!((p[i][j] - p[j][i]).abs() < 1e-15);
                    let pp: f64 = (0..3).map(|k| p[i][k] * p[k][j]).sum();
                    assert!((pp - p[i][j]).abs() < 1e-14, "P not idempotent");
                }
            }
            assert!((tr - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn phi_values() {
        // |z|^0 = 1 at z=(2,0,0), γ=-2
        let p = landau_phi([2.0, 0.0, 0.0], -2.0);
        assert!((p[1][1] - 1.0).abs() < 1e-15 && (p[2][2] - 1.0).abs() < 1e-15);
        assert!(p[0][0].abs() < 1e-15);
        let p0 = landau_phi([1.0, 0.0, 0.0], 0.0);
        assert!((p0[1][1] - 1.0).abs() < 1e-15);
        // z = 3 e3, γ=-3: (1/3) diag(1,1,0)
        let p3 = landau_phi([0.0, 0.0, 3.0], -3.0);
        assert!((p3[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p3[1][1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(p3[2][2].abs() < 1e-15);
    }

    #[test]
    fn b_values_and_divergence_oracle() {
        let b = landau_b([1.0, 0.0, 0.0], -2.0);
        assert!((b[0] + 2.0).abs() < 1e-15 && b[1] == 0.0 && b[2] == 0.0);
        let z = [0.3, -0.7, 1.1];
        let b0 = landau_b(z, 0.0);
        for q in 0..3 {
            assert!((b0[q] + 2.0 * z[q]).abs() < 1e-15);
        }
        // finite-difference divergence of Φ columns matches b at z=(1,2,2), γ=-1
        let z = [1.0, 2.0, 2.0];
        let gamma = -1.0;
        let h = 1e-5;
        let want = landau_b(z, gamma);
        for j in 0..3 {
            let mut div = 0.0;
            for i in 0..3 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                div += (landau_phi(zp, gamma)[i][j] - landau_phi(zm, gamma)[i][j]) / (2.0 * h);
            }
            assert!(
                (div - want[j]).abs() < 1e-7,
                "divergence oracle failed col {j}: {div} vs {}",
                want[j]
            );
        }
    }

    #[test]
    fn sigma_hand_case_and_identity() {
        // z = (1,0,0), γ=-2: columns b1=0, b2=(0,0,-1), b3=(0,1,0)
        let s = landau_sigma([1.0, 0.0, 0.0], -2.0);
        assert!(s[0].iter().all(|v| v.abs() < 1e-15));
        assert!((s[2][1] + 1.0).abs() < 1e-15);
        assert!((s[1][2] - 1.0).abs() < 1e-15);
        // σσᵀ = Φ over random (z, γ)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let z = rand_vec3(&mut rng);
            let r2: f64 = z.iter().map(|a| a * a).sum();
            if r2 < 1e-8 {
                continue;
            }
            let gamma = [-3.0, -2.5, -2.0, -1.0, 0.0][rng.random_range(0..5)];
            let s = landau_sigma(z, gamma);
            let phi = landau_phi(z, gamma);
            let scale = r2.powf((2.0 + gamma) / 2.0);
            for i in 0..3 {
                for j in 0..3 {
                    let ss: f64 = (0..3).map(|k| s[i][k] * s[j][k]).sum();
                    assert!(
                        (ss - phi[i][j]).abs() <= 1e-12 * scale.max(1.0),
                        "σσᵀ != Φ at z={z:?}, γ={gamma}"
                    );
                }
            }
            // columns ⟂ z
            for j in 0..3 {
                let col: f64 = (0..3).map(|i| s[i][j] * z[i]).sum();
                assert!(col.abs() < 1e-12 * r2.sqrt().max(1.0));
            }
        }
    }

    #[test]
    fn b_fields_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let z = rand_vec3(&mut rng);
            let r2: f64 = z.iter().map(|a| a * a).sum();
            // Σ b_j ⊗ b_j = |z|² P(z); b_j · z = 0
            for j in 0..3 {
                let bj = b_field(j, z);
                assert!(dot(&bj, &z).abs() < 1e-13 * r2.max(1.0));
            }
            if r2 < 1e-10 {
                continue;
            }
            let p = projection(z);
            for r in 0..3 {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for j in 0..3 {
                        let bj = b_field(j, z);
                        acc += bj[r] * bj[c];
                    }
                    assert!((acc - r2 * p[r][c]).abs() < 1e-12 * r2.max(1.0));
                }
            }
        }
        // div b_j = 0: fields are linear so central differences are exact
        let z = [0.4, -1.2, 0.9];
        for j in 0..3 {
            let mut div = 0.0;
            let h = 1e-4;
            for i in 0..3 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                div += (b_field(j, zp)[i] - b_field(j, zm)[i]) / (2.0 * h);
            }
            assert!(div.abs() < 1e-10);
        }
    }

    #[test]
    fn homogeneity_exponents() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let z = rand_vec3(&mut rng);
            if z.iter().map(|a| a * a).sum::<f64>() < 1e-4 {
                continue;
            }
            let lambda = 0.1 + 3.0 * rng.random::<f64>();
            let gamma = -3.0 + 3.0 * rng.random::<f64>();
            let zs = [lambda * z[0], lambda * z[1], lambda * z[2]];
            let b1 = landau_b(zs, gamma);
            let b0 = landau_b(z, gamma);
            let want = lambda.powf(1.0 + gamma);
            for q in 0..3 {
                assert!((b1[q] - want * b0[q]).abs() < 1e-10 * b0[q].abs().max(1.0));
            }
            let s1 = landau_sigma(zs, gamma);
            let s0 = landau_sigma(z, gamma);
            let want_s = lambda.powf(1.0 + gamma / 2.0);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((s1[i][j] - want_s * s0[i][j]).abs() < 1e-10 * s0[i][j].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn fuzzy_block_reductions() {
        // κ ≡ 1 reduces to homogeneous Landau coefficients in v
        let dv = [0.5, -1.0, 0.25];
        let dx = [0.3, 0.3, 0.3];
        let gamma = -2.0;
        let (drift, sigma) = fuzzy_coefficients(dx, dv, gamma, &Kappa::Const { value: 1.0 });
        let b = landau_b(dv, gamma);
        for q in 0..3 {
            assert!((drift[q] - 2.0 * b[q]).abs() < 1e-15);
            assert!(drift[3 + q].abs() < 1e-15);
        }
        // κ = 0 kills everything
        let (d0, s0) = fuzzy_coefficients(dx, dv, gamma, &Kappa::Const { value: 0.0 });
        assert!(d0.iter().all(|v| *v == 0.0));
        assert!(s0.data().iter().all(|v| *v == 0.0));
        // σσᵀ block = κ Φ on random inputs
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kappa = Kappa::Gaussian { amplitude: 2.0, width: 1.5 };
        for _ in 0..200 {
            let dv = rand_vec3(&mut rng);
            if dv.iter().map(|a| a * a).sum::<f64>() < 1e-6 {
                continue;
            }
            let dx = rand_vec3(&mut rng);
            let (_, sig) = fuzzy_coefficients(dx, dv, -2.5, &kappa);
            let a = sig.mul_transpose();
            let phi = landau_phi(dv, -2.5);
            let k = kappa.eval(&dx);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a.at(i, j) - k * phi[i][j]).abs() < 1e-12 * (1.0 + k));
                    // velocity block is the only nonzero one
                    assert!(a.at(i + 3, j + 3).abs() < 1e-15);
                    assert!(a.at(i, j + 3).abs() < 1e-15);
                }
            }
        }
        let _ = sigma;
    }

    #[test]
    fn multispecies_reductions() {
        // single species, m = 1, c = 1: homogeneous Landau coefficients
        let z = [0.4, -0.2, 0.9];
        let c = Mat::identity(1);
        let (drift, sigma) = multispecies_coefficients(&z, -2.0, &[1.0], &c);
        let b = landau_b([z[0], z[1], z[2]], -2.0);
        for q in 0..3 {
            assert!((drift[q] - 2.0 * b[q]).abs() < 1e-14);
        }
        let a = sigma.mul_transpose();
        let phi = landau_phi([z[0], z[1], z[2]], -2.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.at(i, j) - phi[i][j]).abs() < 1e-12);
            }
        }
        // equal masses: diffusion block i = Σ_j (c_ij/m²) Φ(z^j)
        let m = 2.0;
        let mut cpl = Mat::zeros(2, 2);
        *cpl.at_mut(0, 0) = 1.0;
        *cpl.at_mut(0, 1) = 0.5;
        *cpl.at_mut(1, 0) = 0.5;
        *cpl.at_mut(1, 1) = 2.0;
        let z2 = [0.4, -0.2, 0.9, -1.0, 0.3, 0.2];
        let (_, sig2) = multispecies_coefficients(&z2, -1.0, &[m, m], &cpl);
        let a2 = sig2.mul_transpose();
        for i in 0..2 {
            let mut want = [[0.0; 3]; 3];
            for j in 0..2 {
                let phi = landau_phi([z2[3 * j], z2[3 * j + 1], z2[3 * j + 2]], -1.0);
                for r in 0..3 {
                    for cc in 0..3 {
                        want[r][cc] += cpl.at(i, j) / (m * m) * phi[r][cc];
                    }
                }
            }
            for r in 0..3 {
                for cc in 0..3 {
                    assert!(
                        (a2.at(3 * i + r, 3 * i + cc) - want[r][cc]).abs() < 1e-10,
                        "block {i} mismatch"
                    );
                }
            }
        }
        // γ=0: kernels are globally Lipschitz (finite at 0)
        let (d0, s0) = multispecies_coefficients(&[0.0; 6], 0.0, &[1.0, 2.0], &cpl);
        assert!(d0.iter().all(|v| v.is_finite()));
        assert!(s0.is_finite());
    }

    #[test]
    fn biot_savart_properties() {
        let k = biot_savart([1.0, 0.0]);
        assert!(k[0].abs() < 1e-18);
        assert!((k[1] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let x = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r < 1e-3 {
                continue;
            }
            let k = biot_savart(x);
            assert!((k[0] * x[0] + k[1] * x[1]).abs() < 1e-14 / r);
            let mag = (k[0] * k[0] + k[1] * k[1]).sqrt();
            assert!((mag - 1.0 / (2.0 * std::f64::consts::PI * r)).abs() < 1e-12);
        }
    }

    #[test]
    fn coulomb_properties() {
        let e = coulomb_field([1.0, 0.0, 0.0]);
        assert!((e[0] + 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!(e[1] == 0.0 && e[2] == 0.0);
        // homogeneity -2
        let x = [0.3, -0.4, 0.5];
        let e1 = coulomb_field(x);
        let e2 = coulomb_field([2.0 * x[0], 2.0 * x[1], 2.0 * x[2]]);
        for q in 0..3 {
            assert!((e2[q] - e1[q] / 4.0).abs() < 1e-15);
        }
        // divergence-free away from 0 (finite differences at (1,1,1))
        let p = [1.0, 1.0, 1.0];
        let h = 1e-5;
        let mut div = 0.0;
        for i in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[i] += h;
            pm[i] -= h;
            div += (coulomb_field(pp)[i] - coulomb_field(pm)[i]) / (2.0 * h);
        }
        assert!(div.abs() < 1e-6, "divergence {div}");
    }

    #[test]
    fn bessel_k1_reference_values() {
        // frozen high-accuracy reference values
        let cases = [
            (1e-3, 999.9962381560855),
            (0.5, 1.6564411200033007),
            (1.0, 0.6019072301972346),
            (2.0, 0.13986588181652246),
            (5.0, 0.004044613445452163),
            (10.0, 1.8648773453825585e-5),
        ];
        for (x, want) in cases {
            let got = bessel_k1(x);
            assert!(
                ((got - want) / want).abs() < 1e-10,
                "K1({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn ks_gradient_properties() {
        let g = ks_potential_gradient([1.0, 0.0], 0.0);
        assert!((g[0] + 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!(g[1] == 0.0);
        // small-argument: a>0 kernel approaches the a=0 kernel (K1(r) ~ 1/r)
        let x = [1e-3, 0.0];
        let ga = ks_potential_gradient(x, 1.0);
        let g0 = ks_potential_gradient(x, 0.0);
        let rel = ((ga[0] - g0[0]) / g0[0]).abs();
        assert!(rel < 0.05, "small-argument mismatch {rel}");
        // large |x|: faster-than-any-power decay; compare |x| = 5 vs 10
        let m5 = {
            let g = ks_potential_gradient([5.0, 0.0], 1.0);
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        };
        let m10 = {
            let g = ks_potential_gradient([10.0, 0.0], 1.0);
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        };
        assert!(m10 / m5 < 0.5f64.powi(4), "ratio {} not faster than power-4 decay", m10 / m5);
    }

    #[test]
    fn smoothstep_shape() {
        let eps = 0.2;
        assert_eq!(smoothstep_cutoff(0.5 * eps, eps), 0.0);
        assert_eq!(smoothstep_cutoff(3.0 * eps, eps), 1.0);
        assert!((smoothstep_cutoff(1.5 * eps, eps) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lifted_orthogonality_and_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let v = rand_vec3(&mut rng);
            let w = rand_vec3(&mut rng);
            let ev = lifted::lifted_fields(v, w);
            for j in 0..3 {
                assert!(dot(&ev.n_hat, &ev.b_tilde[j]).abs() < 1e-12, "n̂ not ⊥ b̃_{j}");
            }
        }
        // v = v*: everything vanishes
        let ev = lifted::lifted_fields([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]);
        assert!(ev.n_hat.iter().all(|x| *x == 0.0));
        assert!(ev.b_tilde.iter().flatten().all(|x| *x == 0.0));
        assert_eq!(ev.r, 0.0);
        // frame is orthonormal
        let mut frame: Vec<[f64; 12]> = Vec::new();
        for i in 0..3 {
            frame.push(lifted::e_tilde(i));
            frame.push(lifted::e_hat(i));
            frame.push(lifted::xi(i));
            frame.push(lifted::eta(i));
        }
        for (a, fa) in frame.iter().enumerate() {
            for (b, fb) in frame.iter().enumerate() {
                let d = dot(fa, fb);
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-15, "frame not orthonormal at ({a},{b})");
            }
        }
    }

    #[test]
    fn fuzzy_commutator_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let mut point = [0.0; 12];
            for p in point.iter_mut() {
                *p = rng.random::<f64>() * 4.0 - 2.0;
            }
            for i in 0..3 {
                for j in 0..3 {
                    let a = |p: &[f64]| {
                        let _ = p;
                        lifted::e_hat(i).to_vec()
                    };
                    let b = |p: &[f64]| {
                        let v = [p[3], p[4], p[5]];
                        let vs = [p[9], p[10], p[11]];
                        lifted::lifted_fields(v, vs).b_tilde[j].to_vec()
                    };
                    let got = lifted::lie_bracket(&a, &b, &point, 1e-4).unwrap();
                    let want = lifted::fuzzy_commutator_expected(i, j);
                    for q in 0..12 {
                        assert!(
                            (got[q] - want[q]).abs() < 1e-8,
                            "[ê_{i}, b̃_{j}] mismatch at comp {q}: {} vs {}",
                            got[q],
                            want[q]
                        );
                    }
                    // zero commutators for ẽ, ξ, η
                    for ctor in
                        [lifted::e_tilde as fn(usize) -> [f64; 12], lifted::xi, lifted::eta]
                    {
                        let az = |p: &[f64]| {
                            let _ = p;
                            ctor(i).to_vec()
                        };
                        let gz = lifted::lie_bracket(&az, &b, &point, 1e-4).unwrap();
                        assert!(gz.iter().all(|x| x.abs() < 1e-8));
                    }
                }
            }
        }
    }

    #[test]
    fn multispecies_commutator_table() {
        let frame = lifted::MultiFrame::new(vec![1.0, 2.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let point: Vec<f64> = (0..frame.dim()).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            for i in 0..2 {
                for j in 0..2 {
                    for q in 0..3 {
                        for k in 0..3 {
                            let fa = frame.clone();
                            let a = move |p: &[f64]| {
                                let _ = p;
                                fa.e(i, q)
                            };
                            let fb = frame.clone();
                            let b = move |p: &[f64]| fb.b_field(k, i, j, p);
                            let got = lifted::lie_bracket(&a, &b, &point, 1e-4).unwrap();
                            let want = frame.commutator_expected(q, k, i, j);
                            for idx in 0..frame.dim() {
                                assert!(
                                    (got[idx] - want[idx]).abs() < 1e-8,
                                    "[e_({i},{q}), b_{k}^({i},{j})] mismatch at {idx}"
                                );
                            }
                            // [ξ_{j,q}, b_k^{i,j}] = -[e_{i,q}, b_k^{i,j}]
                            let fx = frame.clone();
                            let ax = move |p: &[f64]| {
                                let _ = p;
                                fx.xi(j, q)
                            };
                            let fb2 = frame.clone();
                            let b2 = move |p: &[f64]| fb2.b_field(k, i, j, p);
                            let got_xi = lifted::lie_bracket(&ax, &b2, &point, 1e-4).unwrap();
                            for idx in 0..frame.dim() {
                                assert!((got_xi[idx] + want[idx]).abs() < 1e-8);
                            }
                            // unrelated species index commutes
                            if i != j {
                                let fu = frame.clone();
                                let au = move |p: &[f64]| {
                                    let _ = p;
                                    fu.e(j, q)
                                };
                                let fb3 = frame.clone();
                                let b3 = move |p: &[f64]| fb3.b_field(k, i, j, p);
                                let gu = lifted::lie_bracket(&au, &b3, &point, 1e-4).unwrap();
                                assert!(gu.iter().all(|x| x.abs() < 1e-8));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lie_bracket_exact_for_affine_fields() {
        // [a, b] with a(x) = Ax + p, b(x) = Bx + q equals (BA - AB)x + Bp - Aq
        let a = |p: &[f64]| vec![2.0 * p[0] + p[1] + 1.0, -p[0] + 0.5];
        let b = |p: &[f64]| vec![p[1], 3.0 * p[0] - p[1]];
        let point = [0.7, -1.3];
        let got = lifted::lie_bracket(&a, &b, &point, 1e-3).unwrap();
        // A = [[2,1],[-1,0]], p0 = (1, 0.5); B = [[0,1],[3,-1]], q0 = 0
        // [a,b](x) = B(Ax+p) - A(Bx+q)
        let ax = [2.0 * point[0] + point[1] + 1.0, -point[0] + 0.5];
        let bx = [point[1], 3.0 * point[0] - point[1]];
        let want = [
            ax[1] - (2.0 * bx[0] + bx[1]),
            3.0 * ax[0] - ax[1] - (-bx[0]),
        ];
        for q in 0..2 {
            assert!((got[q] - want[q]).abs() < 1e-10, "{} vs {}", got[q], want[q]);
        }
    }

    #[test]
    fn multispecies_hand_checked_entry() {
        // [e_{i,1}, b_2^{i,j}] = -e_{i,3}/m_i + ξ_{j,3}/m_j (1-based table indices)
        let frame = lifted::MultiFrame::new(vec![1.5, 0.5]);
        let want = frame.commutator_expected(0, 1, 0, 1); // q=1,k=2 zero-based (0,1)
        let e = frame.e(0, 2);
        let x = frame.xi(1, 2);
        for idx in 0..frame.dim() {
            let expect = -e[idx] / 1.5 + x[idx] / 0.5;
            assert!((want[idx] - expect).abs() < 1e-15);
        }
    }
}
