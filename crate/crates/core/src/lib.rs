//! Interacting-particle laboratory for 2-Wasserstein stability of nonlinear
//! Fokker-Planck dynamics with singular interaction kernels.
//!
//! The crate is organized around one equation class,
//!
//! ```text
//! d/dt ∫φ dμ = ∫ [ (c + b∗μ)·∇φ + (M + A∗μ):D²φ ] dμ,    A = σσᵀ, M = 𝔪𝔪ᵀ,
//! ```
//!
//! whose instances (fuzzy Landau, multispecies Landau, 2D Euler vorticity,
//! Vlasov-Poisson, Keller-Segel) are built from closed-form kernels in
//! [`kernels`] and wrapped as [`model::ModelSpec`]s. On top of that sit
//!
//! * [`transport`] — exact and entropic optimal transport between equal-size
//!   uniform empirical measures,
//! * [`coupling`] — Euler-Maruyama discretization of the optimal-plan-indexed
//!   coupled SDE pair with shared noise, plus Picard and weak-form diagnostics,
//! * [`osgood`] — the log-Lipschitz modulus Ψ, the explicit bound H, the
//!   modulus ω and an RK4 oracle for the Osgood differential inequality,
//! * [`estimates`] — singular-integral evaluation and empirical verification
//!   of the coefficient estimates behind the stability bounds,
//! * [`harness`] — experiment orchestration, bound fitting and reporting.
//!
//! Everything is deterministic per seed: identical config + seed produces
//! byte-identical artifacts.

pub mod coupling;
pub mod estimates;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod osgood;
pub mod transport;

mod par;
