//! Acceptance suite: one test per criterion, each printing a PASS line.
//! Heavy scenarios share a lock so their runtime budgets are measured
//! without contention from each other.

use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use w2lab::coupling::{init_coupled, refresh_plan, step_coupled, step_single, TestFunction};
use w2lab::estimates::{
    singular_integral_ball, verify_sing_int_lemma, verify_soft_case_estimate, AnalyticDensity,
    EstimateMode,
};
use w2lab::harness::{
    delta_scan, heat_dissipation_check, oracles, run_experiment, selftest, ExperimentConfig,
    InitialCondition, ModelConfig, TargetInitial,
};
use w2lab::kernels::{b_field, landau_b, landau_phi, landau_sigma, lifted, projection};
use w2lab::linalg::{dist_sq, norm, Mat};
use w2lab::model::{
    builtin_model, BuiltinParams, MixtureComponent, ModelSpec, ParticleCloud,
};
use w2lab::osgood::{h_bound, h_branch, osgood_solve_const, psi, HBranch};
use w2lab::transport::{brute_force_w2, w2_exact};

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy_lock() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn gaussian_cloud(n: usize, d: usize, seed: u64) -> ParticleCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = [MixtureComponent { weight: 1.0, mean: vec![0.0; d], cov_diag: vec![1.0; d] }];
    ParticleCloud::sample_gaussian_mixture(d, &comps, n, &mut rng).unwrap()
}

fn standard_mixture(d: usize) -> InitialCondition {
    InitialCondition::GaussianMixture {
        components: vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0; d],
            cov_diag: vec![1.0; d],
        }],
    }
}

#[test]
fn acceptance_01_ot_exactness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200u64 {
        let n = 2 + (case as usize % 6); // N ≤ 7
        let d = 1 + (case as usize % 6); // dims ≤ 6
        let a = gaussian_cloud(n, d, rng.random());
        let b = gaussian_cloud(n, d, rng.random());
        let (cost, plan) = w2_exact(&a, &b).unwrap();
        let (bf, _) = brute_force_w2(&a, &b);
        worst = worst.max((cost - bf).abs());
        assert!(w2lab::transport::validate_plan(&plan, &a, &b));
    }
    let elapsed = start.elapsed();
    assert!(worst < 1e-12, "worst |JV - brute force| = {worst:.3e}");
    assert!(elapsed.as_secs_f64() < 5.0, "runtime {elapsed:?} exceeds 5 s");
    println!(
        "ACCEPTANCE 01 ot-exactness: PASS (worst gap {worst:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn acceptance_02_kernel_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gammas = [-3.0, -2.5, -2.0, -1.0, 0.0];
    let mut worst_identity: f64 = 0.0;
    for _ in 0..10_000 {
        let z = [
            4.0 * rng.random::<f64>() - 2.0,
            4.0 * rng.random::<f64>() - 2.0,
            4.0 * rng.random::<f64>() - 2.0,
        ];
        let r2: f64 = z.iter().map(|a| a * a).sum();
        if r2 < 1e-6 {
            continue;
        }
        let gamma = gammas[rng.random_range(0..gammas.len())];
        let sig = landau_sigma(z, gamma);
        let phi = landau_phi(z, gamma);
        let scale = r2.powf((2.0 + gamma) / 2.0).max(1.0);
        for i in 0..3 {
            for j in 0..3 {
                let ss: f64 = (0..3).map(|k| sig[i][k] * sig[j][k]).sum();
                worst_identity = worst_identity.max((ss - phi[i][j]).abs() / scale);
            }
        }
        // P(z) z = 0 and b_j · z = 0
        let p = projection(z);
        for i in 0..3 {
            let pz: f64 = (0..3).map(|j| p[i][j] * z[j]).sum();
            assert!(pz.abs() < 1e-12, "P z != 0");
        }
        for j in 0..3 {
            let bj = b_field(j, z);
            let dot: f64 = bj.iter().zip(&z).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-12 * r2.sqrt().max(1.0), "b_j · z != 0");
        }
    }
    assert!(worst_identity <= 1e-12, "σσᵀ = Φ residual {worst_identity:.2e}");

    // numeric divergence of the b_j fields
    let mut worst_div: f64 = 0.0;
    for _ in 0..100 {
        let z = [
            4.0 * rng.random::<f64>() - 2.0,
            4.0 * rng.random::<f64>() - 2.0,
            4.0 * rng.random::<f64>() - 2.0,
        ];
        for j in 0..3 {
            let h = 1e-4;
            let mut div = 0.0;
            for i in 0..3 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                div += (b_field(j, zp)[i] - b_field(j, zm)[i]) / (2.0 * h);
            }
            worst_div = worst_div.max(div.abs());
        }
    }
    assert!(worst_div <= 1e-8, "div b_j = {worst_div:.2e}");

    // homogeneity exponents by ratio tests
    let mut worst_hom: f64 = 0.0;
    for _ in 0..500 {
        let z = [
            1.0 + rng.random::<f64>(),
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ];
        let lambda = 0.25 + 2.0 * rng.random::<f64>();
        let gamma = gammas[rng.random_range(0..gammas.len())];
        let zs = [lambda * z[0], lambda * z[1], lambda * z[2]];
        let rb = norm(&landau_b(zs, gamma)) / norm(&landau_b(z, gamma));
        worst_hom = worst_hom.max((rb - lambda.powf(1.0 + gamma)).abs() / rb.max(1e-12));
        let frob = |m: [[f64; 3]; 3]| -> f64 {
            m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
        };
        let rs = frob(landau_sigma(zs, gamma)) / frob(landau_sigma(z, gamma));
        worst_hom = worst_hom.max((rs - lambda.powf(1.0 + gamma / 2.0)).abs() / rs.max(1e-12));
    }
    assert!(worst_hom < 1e-10, "homogeneity ratio error {worst_hom:.2e}");
    println!("ACCEPTANCE 02 kernel-algebra: PASS (σσᵀ=Φ residual {worst_identity:.2e}, div {worst_div:.2e})");
}

#[test]
fn acceptance_03_commutator_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut point = [0.0f64; 12];
        for p in point.iter_mut() {
            *p = 4.0 * rng.random::<f64>() - 2.0;
        }
        for i in 0..3 {
            for j in 0..3 {
                let a = |_: &[f64]| lifted::e_hat(i).to_vec();
                let b = |p: &[f64]| {
                    lifted::lifted_fields([p[3], p[4], p[5]], [p[9], p[10], p[11]]).b_tilde[j]
                        .to_vec()
                };
                let got = lifted::lie_bracket(&a, &b, &point, 1e-4).unwrap();
                let want = lifted::fuzzy_commutator_expected(i, j);
                for q in 0..12 {
                    worst = worst.max((got[q] - want[q]).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-8, "fuzzy table worst error {worst:.2e}");

    let frame = lifted::MultiFrame::new(vec![1.0, 2.5]);
    let mut worst_multi: f64 = 0.0;
    for _ in 0..100 {
        let point: Vec<f64> =
            (0..frame.dim()).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        for i in 0..2 {
            for j in 0..2 {
                for q in 0..3 {
                    for k in 0..3 {
                        let fa = frame.clone();
                        let a = move |_: &[f64]| fa.e(i, q);
                        let fb = frame.clone();
                        let b = move |p: &[f64]| fb.b_field(k, i, j, p);
                        let got = lifted::lie_bracket(&a, &b, &point, 1e-4).unwrap();
                        let want = frame.commutator_expected(q, k, i, j);
                        for idx in 0..frame.dim() {
                            worst_multi = worst_multi.max((got[idx] - want[idx]).abs());
                        }
                    }
                }
            }
        }
    }
    assert!(worst_multi <= 1e-8, "multispecies table worst error {worst_multi:.2e}");
    // antisymmetry pattern of the fuzzy table
    for i in 0..3 {
        for j in 0..3 {
            let ij = lifted::fuzzy_commutator_expected(i, j);
            let ji = lifted::fuzzy_commutator_expected(j, i);
            for q in 0..12 {
                assert!((ij[q] + ji[q]).abs() < 1e-15, "table not antisymmetric");
            }
        }
    }
    println!(
        "ACCEPTANCE 03 commutator-tables: PASS (fuzzy {worst:.2e}, multispecies {worst_multi:.2e})"
    );
}

#[test]
fn acceptance_04_osgood_consistency() {
    // 50x50 grid restricted to branches 1-3
    let mut worst_rel: f64 = 0.0;
    let mut checked = 0usize;
    for i in 1..=50 {
        for j in 0..=50 {
            let x = i as f64 / 50.0 * 0.95;
            let y = j as f64 * 0.06; // up to 3
            if h_branch(x, y) == HBranch::Exponential {
                continue;
            }
            let h = h_bound(x, y);
            let ode = osgood_solve_const(x, 1.0, 1.0, y, 20_000).value;
            worst_rel = worst_rel.max((h - ode).abs() / h.max(1.0));
            checked += 1;
        }
    }
    assert!(checked > 1000, "grid mostly excluded ({checked})");
    assert!(worst_rel <= 1e-6, "H vs ODE oracle relative gap {worst_rel:.2e}");

    // branch 1 <-> 2 boundary continuity
    let mut worst_jump: f64 = 0.0;
    for j in 1..=40 {
        let y = j as f64 * 0.075;
        let xb = (-(y.exp())).exp();
        if xb < 1e-290 {
            continue;
        }
        let lo = h_bound(xb * (1.0 - 1e-12), y);
        let hi = h_bound(xb * (1.0 + 1e-12), y);
        worst_jump = worst_jump.max((lo - hi).abs());
    }
    assert!(worst_jump <= 1e-9, "branch 1<->2 jump {worst_jump:.2e}");

    // branch-4 discrepancy is documented as known in the selftest output
    let summary = selftest("osgood").unwrap();
    let line = summary
        .lines
        .iter()
        .find(|l| l.name.contains("branch4"))
        .expect("selftest must document the branch-4 discrepancy");
    assert!(line.pass && line.note.contains("KNOWN DISCREPANCY"));
    println!(
        "ACCEPTANCE 04 osgood-consistency: PASS (grid rel {worst_rel:.2e}, boundary jump {worst_jump:.2e}, branch 4 documented)"
    );
}

#[test]
fn acceptance_05_psi_inequalities() {
    for i in 0..=200 {
        let a = i as f64 * 0.05;
        assert!(a * psi(a) <= psi(a * a) + 1e-12, "aΨ(a) > Ψ(a²) at a = {a}");
        for j in 0..=200 {
            let b = j as f64 * 0.05;
            assert!(
                a * psi(b) <= psi(a * a) + psi(b * b) + 1e-12,
                "aΨ(b) > Ψ(a²)+Ψ(b²) at ({a},{b})"
            );
        }
    }
    let junction = (-1.0f64).exp();
    assert_eq!(psi(junction), junction, "Ψ(e⁻¹) must equal e⁻¹ exactly");
    println!("ACCEPTANCE 05 psi-inequalities: PASS (200x200 grid, junction exact)");
}

#[test]
fn acceptance_06_perfect_coupling() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let f0 = gaussian_cloud(512, 6, 6);
    let spec = builtin_model(
        "fuzzy-landau",
        &BuiltinParams { gamma: Some(-2.5), ..Default::default() },
    )
    .unwrap();
    let mut st = init_coupled(&f0, &f0, 0.35, 60).unwrap();
    assert_eq!(st.plan_cost(), 0.0);
    for step in 0..500 {
        step_coupled(&mut st, &spec, &spec, 1e-3).unwrap();
        assert_eq!(
            st.x.coords(),
            st.y.coords(),
            "clouds diverged bitwise at step {step}"
        );
        let cost = refresh_plan(&mut st).unwrap();
        assert_eq!(cost, 0.0, "nonzero d2sq at step {step}");
    }
    println!(
        "ACCEPTANCE 06 perfect-coupling: PASS (500 steps bitwise zero, {} s)",
        start.elapsed().as_secs()
    );
}

#[test]
fn acceptance_07_stability_slopes() {
    let _guard = heavy_lock();
    let start = Instant::now();
    // δ² ∈ {1e-5, 1e-4, 1e-3, 1e-2}
    let deltas: Vec<f64> = [1e-5f64, 1e-4, 1e-3, 1e-2].iter().map(|d| d.sqrt()).collect();

    let fuzzy_cfg = ExperimentConfig {
        model: ModelConfig::FuzzyLandau { gamma: -2.5, kappa: None },
        n_particles: 512,
        dt: 1e-3,
        t_end: 0.5,
        seed: 7,
        eps_cut: None,
        refresh_interval: 5,
        norm_interval: 100,
        snapshot_interval: 1_000_000,
        initial_f: standard_mixture(6),
        initial_g: TargetInitial::Shift { delta: 0.01 },
        output_dir: None,
        deltas: vec![],
    };
    let fuzzy = delta_scan(&fuzzy_cfg, &deltas).unwrap();
    assert!(!fuzzy.degenerate, "fuzzy scan degenerate: {fuzzy:?}");
    assert!(
        fuzzy.slope > 0.5 && fuzzy.slope <= 1.05,
        "fuzzy slope {} outside (0.5, 1.05]",
        fuzzy.slope
    );

    let ms_cfg = ExperimentConfig {
        model: ModelConfig::MultispeciesLandau {
            gamma: 0.0,
            n_species: Some(2),
            masses: Some(vec![1.0, 1.5]),
            coupling: None,
        },
        n_particles: 512,
        dt: 1e-3,
        t_end: 0.5,
        seed: 8,
        eps_cut: None,
        refresh_interval: 5,
        norm_interval: 100,
        snapshot_interval: 1_000_000,
        initial_f: standard_mixture(6),
        initial_g: TargetInitial::Shift { delta: 0.01 },
        output_dir: None,
        deltas: vec![],
    };
    let ms = delta_scan(&ms_cfg, &deltas).unwrap();
    assert!(!ms.degenerate);
    assert!(
        (ms.slope - 1.0).abs() <= 0.1,
        "multispecies γ=0 slope {} not within 1 ± 0.1",
        ms.slope
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "runtime {elapsed:?} exceeds 10 min");
    println!(
        "ACCEPTANCE 07 stability-slopes: PASS (fuzzy {:.3}, multispecies {:.3}, {} s)",
        fuzzy.slope,
        ms.slope,
        elapsed.as_secs()
    );
}

#[test]
fn acceptance_08_marginal_consistency() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let mut ratios_all = Vec::new();
    for (label, model, dim) in [
        ("heat", ModelConfig::Heat { dim: 2 }, 2usize),
        ("fuzzy", ModelConfig::FuzzyLandau { gamma: -2.5, kappa: None }, 6),
    ] {
        let spec = model.build().unwrap();
        let n = 512;
        let dt = 1e-3;
        let steps = 30;
        let eps = 0.35;
        let mut ratios = Vec::new();
        for pair in 0..20u64 {
            let base = 9000 + 10 * pair;
            // coupled run: f0, g0 independent samples of the same law
            let f0 = gaussian_cloud(n, dim, base);
            let g0 = gaussian_cloud(n, dim, base + 1);
            let mut st = init_coupled(&f0, &g0, eps, base + 2).unwrap();
            for _ in 0..steps {
                step_coupled(&mut st, &spec, &spec, dt).unwrap();
            }
            // two independent single runs
            let mut s1 = gaussian_cloud(n, dim, base + 3);
            let mut s2 = gaussian_cloud(n, dim, base + 4);
            let mut rng1 = ChaCha8Rng::seed_from_u64(base + 5);
            let mut rng2 = ChaCha8Rng::seed_from_u64(base + 6);
            for _ in 0..steps {
                step_single(&mut s1, &spec, dt, eps, &mut rng1).unwrap();
                step_single(&mut s2, &spec, dt, eps, &mut rng2).unwrap();
            }
            let (num, _) = w2_exact(&st.x, &s1).unwrap();
            let (den, _) = w2_exact(&s1, &s2).unwrap();
            ratios.push(num / den);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        assert!(
            median <= 1.5,
            "{label}: median W2 ratio {median:.3} exceeds 1.5 ({ratios:?})"
        );
        ratios_all.push((label, median));
    }
    println!(
        "ACCEPTANCE 08 marginal-consistency: PASS (medians {:?}, {} s)",
        ratios_all,
        start.elapsed().as_secs()
    );
}

#[test]
fn acceptance_09_heat_dissipation() {
    let grid = [0.0, 0.1, 0.25, 0.5];
    let rep = heat_dissipation_check(0.0, 1.0, 1.0, 2.0, &grid).unwrap();
    assert!(rep.monotone_non_increasing, "closed form not non-increasing");
    assert!(
        (rep.derivative_at_zero - (-1.0)).abs() < 1e-12,
        "derivative spot value {} != -1",
        rep.derivative_at_zero
    );
    assert!(rep.derivative_max_error < 1e-5);
    assert!(
        rep.empirical_within_tolerance,
        "empirical {:?} vs closed {:?}",
        rep.empirical, rep.closed_form
    );
    println!(
        "ACCEPTANCE 09 heat-dissipation: PASS (derivative@0 = {}, empirical within 5%)",
        rep.derivative_at_zero
    );
}

#[test]
fn acceptance_10_singular_integral_lemma() {
    let h = AnalyticDensity::UniformBall { dim: 3 };
    // center values vs the radial quadrature oracle
    let i1 = singular_integral_ball(h, 1.0, 0.0);
    let i2 = singular_integral_ball(h, 2.0, 0.0);
    assert!((i1 - 1.5).abs() <= 1e-3, "I1(0) = {i1}");
    assert!((i2 - 3.0).abs() <= 1e-3, "I2(0) = {i2}");
    let eps: Vec<f64> = (0..=11).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect();
    let mut slopes = Vec::new();
    for (alpha, beta) in [(2.0, 1.0), (3.0, 1.0), (3.0, 2.0)] {
        let rep = verify_sing_int_lemma(h, alpha, beta, &eps).unwrap();
        let slope = rep.slope.unwrap();
        assert!(
            (slope - (alpha - beta)).abs() <= 0.05,
            "(α,β)=({alpha},{beta}): slope {slope} vs {}",
            alpha - beta
        );
        assert!(rep.pass, "lemma verification failed: {}", rep.details);
        slopes.push(slope);
    }
    println!(
        "ACCEPTANCE 10 singular-integral-lemma: PASS (I1 {i1:.4}, I2 {i2:.4}, slopes {slopes:?})"
    );
}

#[test]
fn acceptance_11_soft_case_exponent() {
    let eps: Vec<f64> = (0..=10).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect();
    let mut slopes = Vec::new();
    for alpha in [0.5, 1.0, 1.5] {
        let spec = ModelSpec::synthetic_power_law(alpha).unwrap();
        let cloud = gaussian_cloud(1024, 3, 11);
        let rep = verify_soft_case_estimate(&spec, &cloud, &eps, EstimateMode::SigmaSq).unwrap();
        let slope = rep.slope.unwrap();
        assert!(
            (slope - alpha * alpha / 2.0).abs() <= 0.05,
            "α={alpha}: slope {slope} vs {}",
            alpha * alpha / 2.0
        );
        assert!(rep.pass, "soft-case verification failed at α={alpha}");
        slopes.push(slope);
    }
    println!("ACCEPTANCE 11 soft-case-exponent: PASS (slopes {slopes:?})");
}

#[test]
fn acceptance_12_weak_form_refinement() {
    let _guard = heavy_lock();
    // For exact-in-law heat sampling the residual is C(dt + N^{-1/2}) in
    // magnitude; a single trajectory realizes that scale with a fluctuation
    // of the same order, so each level's residual is measured as the mean
    // magnitude over independent replicate trajectories.
    let spec = ModelSpec::heat(2);
    let t_end = 0.4;
    let replicates = 64u64;
    let fns = [
        TestFunction::gaussian_bump(vec![0.0, 0.0], 1.5),
        TestFunction::cosine(vec![0.8, -0.5]),
        TestFunction::clipped_quadratic(2, 4.0),
    ];
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    for level in 0..3 {
        let dt = 0.04 / 2f64.powi(level);
        let n = 500 * 4usize.pow(level as u32);
        let steps = (t_end / dt).round() as usize;
        let mut acc = vec![0.0; fns.len()];
        for rep in 0..replicates {
            let mut cloud = gaussian_cloud(n, 2, 1200 + 100 * level as u64 + rep);
            let mut rng = ChaCha8Rng::seed_from_u64(9300 + 100 * level as u64 + rep);
            let mut traj = vec![cloud.clone()];
            for _ in 0..steps {
                step_single(&mut cloud, &spec, dt, 1.0, &mut rng).unwrap();
                traj.push(cloud.clone());
            }
            let res = w2lab::coupling::weak_form_residual(&traj, &spec, &fns, dt).unwrap();
            for (a, r) in acc.iter_mut().zip(&res) {
                *a += r / replicates as f64;
            }
        }
        residuals.push(acc);
    }
    for (fi, f) in fns.iter().enumerate() {
        for level in 1..3 {
            assert!(
                residuals[level][fi] < residuals[level - 1][fi],
                "{}: residual did not decrease at level {level}: {:?}",
                f.name,
                residuals.iter().map(|r| r[fi]).collect::<Vec<_>>()
            );
        }
    }
    println!("ACCEPTANCE 12 weak-form-refinement: PASS (mean residuals {residuals:?})");
}

#[test]
fn acceptance_13_euler_point_vortex() {
    let _guard = heavy_lock();
    let spec = builtin_model("euler2d", &BuiltinParams::default()).unwrap();
    let pts = vec![0.0, 0.0, 2.0, 0.0, 1.0, 1.6];
    let dt: f64 = 1e-4;
    let t_end: f64 = 1.0;
    let steps = (t_end / dt).round() as usize;
    let eps = 1e-9; // vortices stay well separated; cutoff never engages
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    // forward, reflect, forward again, reflect back: recovers the initial
    // state (conjugation by the reflection reverses the Biot-Savart flow)
    let reflect = |c: &ParticleCloud| -> ParticleCloud {
        let mut pts: Vec<f64> = c.coords().to_vec();
        for i in 0..c.len() {
            pts[2 * i + 1] = -pts[2 * i + 1];
        }
        ParticleCloud::new(2, pts, 0.0).unwrap()
    };
    let mut cloud = ParticleCloud::new(2, pts.clone(), 0.0).unwrap();
    for _ in 0..steps {
        step_single(&mut cloud, &spec, dt, eps, &mut rng).unwrap();
    }
    let mut back = reflect(&cloud);
    for _ in 0..steps {
        step_single(&mut back, &spec, dt, eps, &mut rng).unwrap();
    }
    let recovered = reflect(&back);
    let mut worst: f64 = 0.0;
    for (a, b) in recovered.coords().iter().zip(&pts) {
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-6, "reversibility error {worst:.2e}");

    // RK4 reference cross-check on the forward leg
    let reference = oracles::point_vortex_rk4(&pts, t_end, dt / 10.0);
    let mut em_err: f64 = 0.0;
    for (a, b) in cloud.coords().iter().zip(&reference) {
        em_err = em_err.max((a - b).abs());
    }
    assert!(em_err < 50.0 * dt, "EM vs RK4 reference error {em_err:.2e}");

    // perturbation stays below H(δ², Ĉ t) with Ĉ fitted on the first
    // quarter of the horizon and validated on the rest
    let delta = 1e-3;
    let dirs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
    let mut pert_pts = pts.clone();
    for (i, d) in dirs.iter().enumerate() {
        pert_pts[2 * i] += delta * d[0];
        pert_pts[2 * i + 1] += delta * d[1];
    }
    let mut a = ParticleCloud::new(2, pts.clone(), 0.0).unwrap();
    let mut b = ParticleCloud::new(2, pert_pts, 0.0).unwrap();
    let coarse_dt = 1e-3;
    let coarse_steps = (t_end / coarse_dt).round() as usize;
    let mut series = Vec::new();
    for s in 0..=coarse_steps {
        let (d2, _) = w2_exact(&a, &b).unwrap();
        series.push((s as f64 * coarse_dt, d2));
        if s < coarse_steps {
            step_single(&mut a, &spec, coarse_dt, eps, &mut rng).unwrap();
            step_single(&mut b, &spec, coarse_dt, eps, &mut rng).unwrap();
        }
    }
    let d2_0 = series[0].1;
    assert!((d2_0 - delta * delta).abs() < 1e-12);
    // fit the smallest Ĉ dominating the first quarter
    let quarter = coarse_steps / 4;
    let dominates = |c: f64, upto: usize| -> bool {
        series[..=upto].iter().all(|&(t, v)| h_bound(d2_0, c * t) >= v * (1.0 - 1e-12))
    };
    let mut hi = 1e-3;
    while !dominates(hi, quarter) {
        hi *= 2.0;
        assert!(hi < 1e9, "no dominating constant found");
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if dominates(mid, quarter) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let c_hat = hi;
    for &(t, v) in &series[quarter + 1..] {
        assert!(
            h_bound(d2_0, c_hat * t) >= v,
            "H bound with fitted Ĉ={c_hat:.4} violated at t={t}: bound {} < {v}",
            h_bound(d2_0, c_hat * t)
        );
    }
    println!(
        "ACCEPTANCE 13 euler-point-vortex: PASS (reversal {worst:.2e}, Ĉ = {c_hat:.4} validated on (T/4, T])"
    );
}

#[test]
fn acceptance_14_determinism() {
    let base = std::env::temp_dir().join(format!("w2lab_acc14_{}", std::process::id()));
    let mk = |tag: &str| -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig::FuzzyLandau { gamma: -2.5, kappa: None },
            n_particles: 48,
            dt: 1e-3,
            t_end: 0.03,
            seed: 14,
            eps_cut: None,
            refresh_interval: 3,
            norm_interval: 10,
            snapshot_interval: 10,
            initial_f: standard_mixture(6),
            initial_g: TargetInitial::Shift { delta: 0.02 },
            output_dir: Some(base.join(tag).to_string_lossy().into_owned()),
            deltas: vec![],
        }
    };
    run_experiment(&mk("a")).unwrap();
    run_experiment(&mk("b")).unwrap();
    let mut compared = 0;
    for file in ["report.json", "d2_series.csv"] {
        let a = std::fs::read(base.join("a").join(file)).unwrap();
        let b = std::fs::read(base.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} not byte-identical");
        compared += 1;
    }
    // every snapshot CSV byte-identical
    let snaps: Vec<_> = std::fs::read_dir(base.join("a/snapshots"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert!(snaps.len() >= 4);
    for entry in snaps {
        let name = entry.file_name();
        let a = std::fs::read(entry.path()).unwrap();
        let b = std::fs::read(base.join("b/snapshots").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} not byte-identical");
        compared += 1;
    }
    std::fs::remove_dir_all(&base).ok();
    println!("ACCEPTANCE 14 determinism: PASS ({compared} artifacts byte-identical)");
}

// supporting check used by criterion 8 scenarios: the plan-cost series at
// refresh points equals w2_exact on stored snapshots
#[test]
fn acceptance_aux_plan_cost_equals_exact_on_snapshots() {
    let f0 = gaussian_cloud(64, 6, 77);
    let g0 = gaussian_cloud(64, 6, 78);
    let spec = builtin_model(
        "fuzzy-landau",
        &BuiltinParams { gamma: Some(-2.5), ..Default::default() },
    )
    .unwrap();
    let mut st = init_coupled(&f0, &g0, 0.35, 79).unwrap();
    for _ in 0..10 {
        for _ in 0..5 {
            step_coupled(&mut st, &spec, &spec, 1e-3).unwrap();
        }
        let cost = refresh_plan(&mut st).unwrap();
        let (exact, _) = w2_exact(&st.x, &st.y).unwrap();
        assert!((cost - exact).abs() <= 1e-12 * (1.0 + exact));
        // stored snapshot round trip preserves the value bitwise
        let text_x = st.x.to_csv_string();
        let text_y = st.y.to_csv_string();
        let rx = ParticleCloud::from_csv_str(&text_x).unwrap();
        let ry = ParticleCloud::from_csv_str(&text_y).unwrap();
        let (re, _) = w2_exact(&rx, &ry).unwrap();
        assert_eq!(re, exact);
    }
    println!("ACCEPTANCE aux plan-cost-vs-snapshots: PASS");
    let _ = Mat::zeros(1, 1);
    let _ = dist_sq(&[0.0], &[0.0]);
}
