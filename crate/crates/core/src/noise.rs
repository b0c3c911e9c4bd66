//! Reproducible cylindrical Wiener noise and exact Ornstein–Uhlenbeck steps.
//!
//! Every step of every trajectory draws one block of `3·n` standard normals
//! from a generator keyed by `(seed, trajectory, step)`:
//!
//! ```text
//! key = splitmix64(splitmix64(splitmix64(seed) ^ trajectory) ^ step)
//! rng = Xoshiro256PlusPlus::seed_from_u64(key)
//! z   = [z1_0, z2_0, z3_0, z1_1, z2_1, z3_1, …]          // ziggurat normals
//! ```
//!
//! Mode `k` uses the triple at `3k..3k+3`, so the first `m` modes of a
//! block are a prefix of it. Decoupled dynamics can stop drawing early
//! without changing the low modes.
//!
//! Per mode the block is mapped to the exact joint law of
//!
//! ```text
//! ΔW = ∫_0^h dβ,   η = λ^{-γ/2} ∫_0^h e^{-λ(h-s)} dβ,   J = ∫_0^h e^{-λs} dβ
//! ```
//!
//! so a Brownian increment, the convolution increment it generates and the
//! exponentially weighted increment used by the gradient weight all come from
//! one path. The key formula is part of the stable interface.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{domain_err, Result};
use crate::quad::composite_legendre;
use crate::spectral::Domain;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_key(seed: u64, trajectory: u64, step: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ trajectory) ^ step)
}

/// Counter-based noise source for one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    trajectory: u64,
    step: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory: u64) -> Self {
        Self { seed, trajectory, step: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory(&self) -> u64 {
        self.trajectory
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Fill `out` (length `3·n`) with the block for the current step and advance.
    pub fn next_block(&mut self, out: &mut [f64]) {
        Self::fill_block(self.seed, self.trajectory, self.step, out);
        self.step += 1;
    }

    /// Advance without drawing.
    pub fn skip(&mut self, steps: u64) {
        self.step += steps;
    }

    pub fn fill_block(seed: u64, trajectory: u64, step: u64, out: &mut [f64]) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(stream_key(seed, trajectory, step));
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
}

/// `n` i.i.d. `N(0, Δt)` draws; the first third of the step block scaled by `√Δt`.
///
/// These are exactly the `ΔW` produced by [`OuKernel::apply`] for the same step.
pub fn wiener_increments(stream: &mut NoiseStream, dt: f64, modes: usize) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return domain_err(format!("Wiener increment needs dt > 0, got {dt}"));
    }
    let mut z = vec![0.0; 3 * modes];
    stream.next_block(&mut z);
    let s = dt.sqrt();
    Ok(z.chunks_exact(3).map(|c| c[0] * s).collect())
}

/// Lower-triangular factor of the per-mode `(ΔW, η, J)` covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Factor {
    l11: f64,
    l21: f64,
    l22: f64,
    l31: f64,
    l32: f64,
    l33: f64,
}

/// Exact one-step transition data for the diagonal OU system at step `dt`.
#[derive(Debug, Clone)]
pub struct OuKernel {
    dt: f64,
    decay: Vec<f64>,
    factor: Vec<Factor>,
    var_eta: Vec<f64>,
    cov_eta_j: Vec<f64>,
}

/// One step of per-mode noise.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub dw: Vec<f64>,
    pub eta: Vec<f64>,
    pub j: Vec<f64>,
}

impl StepNoise {
    pub fn zeros(n: usize) -> Self {
        Self { dw: vec![0.0; n], eta: vec![0.0; n], j: vec![0.0; n] }
    }
}

const PANELS: usize = 8;
const ORDER: usize = 16;

impl OuKernel {
    pub fn new(domain: &Domain, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return domain_err(format!("OU kernel needs dt > 0, got {dt}"));
        }
        let (s, w) = composite_legendre(0.0, dt, PANELS, ORDER);
        let n = domain.n_modes();
        let mut decay = Vec::with_capacity(n);
        let mut factor = Vec::with_capacity(n);
        let mut var_eta = Vec::with_capacity(n);
        let mut cov_eta_j = Vec::with_capacity(n);
        for (&lambda, &c) in domain.eigenvalues().iter().zip(domain.color_multipliers()) {
            decay.push((-lambda * dt).exp());
            factor.push(factorize(lambda, c, dt, &s, &w));
            var_eta.push(c * c * ou_variance(lambda, dt));
            cov_eta_j.push(c * dt * (-lambda * dt).exp());
        }
        Ok(Self { dt, decay, factor, var_eta, cov_eta_j })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `e^{-λ_k dt}`.
    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// `Var η_k = λ^{-γ}(1 - e^{-2λ dt})/(2λ)`.
    pub fn var_eta(&self) -> &[f64] {
        &self.var_eta
    }

    /// `Cov(η_k, J_k) = λ^{-γ/2} dt e^{-λ dt}`.
    pub fn cov_eta_j(&self) -> &[f64] {
        &self.cov_eta_j
    }

    /// Map a normal block to the step noise. A block of `3m` values fills
    /// the first `m` modes only.
    pub fn apply(&self, z: &[f64], out: &mut StepNoise) {
        debug_assert!(z.len() % 3 == 0 && z.len() <= 3 * self.decay.len());
        for (k, c) in z.chunks_exact(3).enumerate() {
            let f = &self.factor[k];
            out.dw[k] = f.l11 * c[0];
            out.eta[k] = f.l21 * c[0] + f.l22 * c[1];
            out.j[k] = f.l31 * c[0] + f.l32 * c[1] + f.l33 * c[2];
        }
    }

    /// Covariance matrix of `(ΔW, η, J)` for mode `k` implied by the factor.
    pub fn covariance(&self, k: usize) -> [[f64; 3]; 3] {
        let f = &self.factor[k];
        let rows = [[f.l11, 0.0, 0.0], [f.l21, f.l22, 0.0], [f.l31, f.l32, f.l33]];
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|m| rows[i][m] * rows[j][m]).sum();
            }
        }
        c
    }
}

/// `(1 - e^{-2λh})/(2λ)`, with the `λ = 0` limit `h`.
pub fn ou_variance(lambda: f64, h: f64) -> f64 {
    if lambda == 0.0 {
        h
    } else {
        -(-2.0 * lambda * h).exp_m1() / (2.0 * lambda)
    }
}

/// `(1 - e^{-λh})/λ`, with the `λ = 0` limit `h`.
fn phi1(lambda: f64, h: f64) -> f64 {
    if lambda == 0.0 {
        h
    } else {
        -(-lambda * h).exp_m1() / lambda
    }
}

/// Gram–Schmidt on `u = 1`, `v = c e^{-λ(h-s)}`, `w = e^{-λs}` in `L²(0,h)`.
///
/// Residuals are formed pointwise on the quadrature nodes, which keeps the
/// nearly collinear small-`λh` case accurate.
fn factorize(lambda: f64, c: f64, h: f64, s: &[f64], w: &[f64]) -> Factor {
    let sq = h.sqrt();
    let l11 = sq;
    let l21 = c * phi1(lambda, h) / sq;
    let l31 = phi1(lambda, h) / sq;
    if lambda == 0.0 {
        return Factor { l11, l21, l22: 0.0, l31, l32: 0.0, l33: 0.0 };
    }
    let e1 = 1.0 / sq;
    let r2: Vec<f64> = s.iter().map(|&si| c * (-lambda * (h - si)).exp() - l21 * e1).collect();
    let l22 = r2.iter().zip(w).map(|(r, wi)| wi * r * r).sum::<f64>().sqrt();
    let wv: Vec<f64> = s.iter().map(|&si| (-lambda * si).exp()).collect();
    let (l32, e2): (f64, Vec<f64>) = if l22 > 0.0 {
        let e2: Vec<f64> = r2.iter().map(|r| r / l22).collect();
        (wv.iter().zip(&e2).zip(w).map(|((a, b), wi)| wi * a * b).sum(), e2)
    } else {
        (0.0, vec![0.0; s.len()])
    };
    let l33 = wv
        .iter()
        .zip(&e2)
        .zip(w)
        .map(|((a, b), wi)| {
            let r = a - l31 * e1 - l32 * b;
            wi * r * r
        })
        .sum::<f64>()
        .sqrt();
    Factor { l11, l21, l22, l31, l32, l33 }
}

/// Per-mode stochastic convolution `W_A(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionState {
    pub w: Vec<f64>,
    pub time: f64,
}

impl ConvolutionState {
    pub fn new(modes: usize) -> Self {
        Self { w: vec![0.0; modes], time: 0.0 }
    }

    /// Advance by one kernel step, consuming one block of `stream`.
    pub fn advance(&mut self, kernel: &OuKernel, stream: &mut NoiseStream, scratch: &mut [f64], noise: &mut StepNoise) {
        stream.next_block(scratch);
        kernel.apply(scratch, noise);
        for ((w, d), e) in self.w.iter_mut().zip(kernel.decay()).zip(&noise.eta) {
            *w = d * *w + e;
        }
        self.time += kernel.dt();
    }
}

/// `w_k ← e^{-λ_k Δt} w_k + η_k` with the exact increment.
///
/// The zero mode of a coloured Neumann problem cannot occur here: such a
/// [`Domain`] is rejected at construction.
pub fn convolution_step(
    state: &ConvolutionState,
    dt: f64,
    domain: &Arc<Domain>,
    stream: &mut NoiseStream,
) -> Result<ConvolutionState> {
    if state.w.len() != domain.n_modes() {
        return domain_err("convolution state does not match the domain");
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let kernel = OuKernel::new(domain, dt)?;
    let n = domain.n_modes();
    let mut scratch = vec![0.0; 3 * n];
    let mut noise = StepNoise::zeros(n);
    let mut next = state.clone();
    next.advance(&kernel, stream, &mut scratch, &mut noise);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Boundary, DomainSpec};
    use approx::assert_relative_eq;

    fn domain(gamma: f64, k: usize) -> Arc<Domain> {
        Domain::new(DomainSpec::dirichlet_1d(gamma, k).unwrap()).unwrap()
    }

    fn closed_form_cov(lambda: f64, c: f64, h: f64) -> [[f64; 3]; 3] {
        let a = phi1(lambda, h);
        let vj = ou_variance(lambda, h);
        let ve = c * c * vj;
        let ej = c * h * (-lambda * h).exp();
        [[h, c * a, a], [c * a, ve, ej], [a, ej, vj]]
    }

    #[test]
    fn factor_reproduces_closed_form_covariance() {
        for gamma in [0.0, 1.0 / 3.0, 1.0] {
            let dom = domain(gamma, 64);
            for h in [1e-6, 1e-3, 1e-2, 0.012] {
                let ker = OuKernel::new(&dom, h).unwrap();
                for k in 0..dom.n_modes() {
                    let got = ker.covariance(k);
                    let want = closed_form_cov(dom.eigenvalues()[k], dom.color_multipliers()[k], h);
                    for i in 0..3 {
                        for j in 0..3 {
                            let scale = (want[i][i] * want[j][j]).sqrt();
                            assert!(
                                (got[i][j] - want[i][j]).abs() <= 1e-9 * scale,
                                "gamma {gamma} h {h} k {k} ({i},{j}): {} vs {}",
                                got[i][j],
                                want[i][j]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn neumann_zero_mode_is_degenerate_brownian() {
        let dom = Domain::new(DomainSpec::new(1, Boundary::Neumann, 0.0, 4, 16).unwrap()).unwrap();
        let ker = OuKernel::new(&dom, 0.01).unwrap();
        let c = ker.covariance(0);
        for row in c {
            for v in row {
                assert_relative_eq!(v, 0.01, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn increments_are_deterministic_and_counter_based() {
        let mut a = NoiseStream::new(42, 7);
        let mut b = NoiseStream::new(42, 7);
        let x1 = wiener_increments(&mut a, 0.01, 8).unwrap();
        let x2 = wiener_increments(&mut a, 0.01, 8).unwrap();
        assert_eq!(x1, wiener_increments(&mut b, 0.01, 8).unwrap());
        assert_eq!(x2, wiener_increments(&mut b, 0.01, 8).unwrap());
        assert_ne!(x1, x2);
        let mut c = NoiseStream::new(42, 8);
        assert_ne!(x1, wiener_increments(&mut c, 0.01, 8).unwrap());
        // skipping reaches the same counter state
        let mut d = NoiseStream::new(42, 7);
        d.skip(1);
        assert_eq!(x2, wiener_increments(&mut d, 0.01, 8).unwrap());
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let mut s = NoiseStream::new(1, 0);
        assert!(wiener_increments(&mut s, 0.0, 4).is_err());
        assert!(wiener_increments(&mut s, -1.0, 4).is_err());
        assert!(OuKernel::new(&domain(0.0, 4), 0.0).is_err());
    }

    #[test]
    fn wiener_increment_matches_kernel_dw() {
        let dom = domain(1.0 / 3.0, 8);
        let ker = OuKernel::new(&dom, 0.02).unwrap();
        let mut s1 = NoiseStream::new(5, 3);
        let mut s2 = s1.clone();
        let dw = wiener_increments(&mut s1, 0.02, 8).unwrap();
        let mut z = vec![0.0; 24];
        s2.next_block(&mut z);
        let mut out = StepNoise::zeros(8);
        ker.apply(&z, &mut out);
        for (a, b) in dw.iter().zip(&out.dw) {
            assert_relative_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_step_leaves_state_unchanged() {
        let dom = domain(0.0, 4);
        let st = ConvolutionState { w: vec![1.0, 2.0, 3.0, 4.0], time: 0.5 };
        let mut s = NoiseStream::new(0, 0);
        assert_eq!(convolution_step(&st, 0.0, &dom, &mut s).unwrap(), st);
        assert_eq!(s.step(), 0);
        // tiny steps barely move the state
        let next = convolution_step(&st, 1e-14, &dom, &mut s).unwrap();
        for (a, b) in next.w.iter().zip(&st.w) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn sample_moments_of_increments() {
        let dt = 0.01;
        let mut s = NoiseStream::new(2024, 0);
        let n = 1_000_000usize;
        let modes = 100;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n / modes {
            for v in wiener_increments(&mut s, dt, modes).unwrap() {
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() <= 4.0 * (dt / n as f64).sqrt());
        assert!((var / dt - 1.0).abs() <= 0.01);
    }
}
