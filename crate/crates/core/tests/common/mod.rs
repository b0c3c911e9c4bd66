//! Closed forms for the Ornstein–Uhlenbeck case `b ≡ 0` on `[0,π]`.
//!
//! With `λ_k = k²` each coefficient is Gaussian:
//! `X_k(t) ~ N(e^{-λ_k t} x_k, λ_k^{-γ}(1 - e^{-2λ_k t})/(2λ_k))`.
#![allow(dead_code)]

use std::sync::Arc;

use spdelab::reaction::ReactionSpec;
use spdelab::solver::{MildSolver, SolverConfig};
use spdelab::spectral::{Domain, DomainSpec};

pub fn ou_solver(gamma: f64, modes: usize, dt: f64, horizon: f64) -> (Arc<Domain>, MildSolver) {
    let d = Domain::new(DomainSpec::dirichlet_1d(gamma, modes).unwrap()).unwrap();
    let s = MildSolver::new(&d, &ReactionSpec::zero(), &SolverConfig::new(dt, horizon)).unwrap();
    (d, s)
}

pub fn allen_cahn_solver(gamma: f64, modes: usize, dt: f64, horizon: f64) -> (Arc<Domain>, MildSolver) {
    let d = Domain::new(DomainSpec::dirichlet_1d(gamma, modes).unwrap()).unwrap();
    let s = MildSolver::new(&d, &ReactionSpec::allen_cahn(), &SolverConfig::new(dt, horizon)).unwrap();
    (d, s)
}

/// Variance of the wave-number-`k` coefficient at time `t`.
pub fn sigma2(k: usize, gamma: f64, t: f64) -> f64 {
    let lam = (k * k) as f64;
    lam.powf(-gamma) * (1.0 - (-2.0 * lam * t).exp()) / (2.0 * lam)
}

/// `E cos(a X_k(t) + b)` from `x_k = x`.
pub fn cos_pt(k: usize, gamma: f64, t: f64, a: f64, b: f64, x: f64) -> f64 {
    let m = (-((k * k) as f64) * t).exp() * x;
    (-a * a * sigma2(k, gamma, t) / 2.0).exp() * (a * m + b).cos()
}

/// `∂_x E cos(a X_k(t) + b)` times the direction coefficient `h`.
pub fn cos_grad(k: usize, gamma: f64, t: f64, a: f64, b: f64, x: f64, h: f64) -> f64 {
    let decay = (-((k * k) as f64) * t).exp();
    -a * decay * h * (-a * a * sigma2(k, gamma, t) / 2.0).exp() * (a * decay * x + b).sin()
}

/// Composite Simpson rule on `[lo, hi]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `|a - b| ≤ k·se`, with a readable failure message.
pub fn within(a: f64, b: f64, se: f64, k: f64, what: &str) {
    assert!((a - b).abs() <= k * se, "{what}: {a} vs {b}, |diff| = {:.3e} > {k}·{se:.3e}", (a - b).abs());
}
