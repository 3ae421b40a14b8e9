//! Log-Lipschitz stability machinery: the modulus Ψ(x) = max(-x log x, x),
//! the explicit two-argument bound H, the derived modulus of continuity ω,
//! and an RK4 oracle for the Osgood differential inequality
//! ρ' = C m(t) Ψ(ρ).
//!
//! H is implemented branch-for-branch as printed, with ties resolved to the
//! first matching branch. Branch 4 (x ≥ 1/e, x ≤ e^{y-1}) is known to
//! disagree with forward integration of ρ' = Ψ(ρ), which stays in the linear
//! branch and yields x e^y; it is kept verbatim, excluded from the
//! consistency suite, and flagged by the selftest. The ODE oracle is the
//! ground truth used for stability bounds.

const INV_E: f64 = 0.36787944117144233; // e^{-1}

/// Ψ(x) = max(-x log x, x): -x log x on [0, 1/e], x on [1/e, ∞).
///
/// Continuous, increasing, Ψ(0) = 0. Panics on negative input.
pub fn psi(x: f64) -> f64 {
    assert!(x >= 0.0, "psi: negative input {x}");
    if x < f64::MIN_POSITIVE {
        0.0
    } else if x < INV_E {
        -x * x.ln()
    } else {
        x
    }
}

/// Which of the four printed branches of H applies at (x, y).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HBranch {
    /// x^{e^{-y}} on { x ≤ 1/e, x ≤ e^{-e^y} }
    Power,
    /// e^{y-1}/(-ln x) on { x ≤ 1/e, x ≥ e^{-e^y} }
    InverseLog,
    /// x e^y on { x ≥ 1/e, x ≥ e^{y-1} }
    Linear,
    /// e^{-(1/x) e^{-y-1}} on { x ≥ 1/e, x ≤ e^{y-1} }; inconsistent with
    /// the ODE oracle, see module docs.
    Exponential,
}

pub fn h_branch(x: f64, y: f64) -> HBranch {
    assert!(x >= 0.0 && y >= 0.0, "h_bound: negative argument ({x}, {y})");
    let e_pow_y = y.exp();
    if x <= INV_E && x <= (-e_pow_y).exp() {
        HBranch::Power
    } else if x <= INV_E {
        HBranch::InverseLog
    } else if x >= (y - 1.0).exp() {
        HBranch::Linear
    } else {
        HBranch::Exponential
    }
}

/// The explicit bound H(x, y) ≥ 0 with H(0, ·) ≡ 0.
pub fn h_bound(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    match h_branch(x, y) {
        HBranch::Power => ((-y).exp() * x.ln()).exp(),
        HBranch::InverseLog => (y - 1.0).exp() / (-x.ln()),
        HBranch::Linear => x * y.exp(),
        HBranch::Exponential => (-(1.0 / x) * (-y - 1.0).exp()).exp(),
    }
}

/// Modulus of continuity ω(x) = H(x, C · max{‖·‖_{L¹_t L^p}, m₂(f), m₂(g), T}).
pub fn modulus_omega(x: f64, c: f64, norm_l1t: f64, m2f: f64, m2g: f64, t_horizon: f64) -> f64 {
    assert!(
        x >= 0.0 && c >= 0.0 && norm_l1t >= 0.0 && m2f >= 0.0 && m2g >= 0.0 && t_horizon >= 0.0,
        "modulus_omega: negative argument"
    );
    let y = c * norm_l1t.max(m2f).max(m2g).max(t_horizon);
    h_bound(x, y)
}

/// Result of integrating the Osgood ODE. `blowup_time` is set when the
/// solution left f64 range before `t_end`; `value` is then +∞.
#[derive(Debug, Clone, Copy)]
pub struct OsgoodOutcome {
    pub value: f64,
    pub blowup_time: Option<f64>,
}

/// RK4 integration of ρ' = c · m(t) · Ψ(ρ), ρ(0) = x0, up to t_end.
///
/// `m` must be ≥ 1 pointwise (callers take a max with 1). The output is
/// monotone non-decreasing in x0 and t_end.
pub fn osgood_solve(
    x0: f64,
    m: &dyn Fn(f64) -> f64,
    c: f64,
    t_end: f64,
    steps: usize,
) -> OsgoodOutcome {
    assert!(x0 >= 0.0 && c >= 0.0 && t_end >= 0.0 && steps >= 1);
    if x0 == 0.0 || t_end == 0.0 || c == 0.0 {
        return OsgoodOutcome { value: x0, blowup_time: None };
    }
    let dt = t_end / steps as f64;
    let mut rho = x0;
    let rhs = |t: f64, r: f64| -> f64 {
        let mt = m(t);
        debug_assert!(mt >= 1.0, "osgood integrand below 1 at t={t}: {mt}");
        c * mt * psi(r.max(0.0))
    };
    for i in 0..steps {
        let t = i as f64 * dt;
        let k1 = rhs(t, rho);
        let k2 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k1);
        let k3 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k2);
        let k4 = rhs(t + dt, rho + dt * k3);
        rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !rho.is_finite() {
            return OsgoodOutcome { value: f64::INFINITY, blowup_time: Some(t + dt) };
        }
    }
    OsgoodOutcome { value: rho, blowup_time: None }
}

/// Convenience wrapper for a constant integrand m ≡ m_const.
pub fn osgood_solve_const(x0: f64, m_const: f64, c: f64, t_end: f64, steps: usize) -> OsgoodOutcome {
    osgood_solve(x0, &|_| m_const, c, t_end, steps)
}
