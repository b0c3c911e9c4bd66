mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use spdelab::noise::NoiseStream;
use spdelab::profile::{Profile, TestFunction};
use spdelab::reaction::ReactionSpec;
use spdelab::semigroup::{bel_gradient, estimate_pt, McOptions};
use spdelab::solver::{MildSolver, SolverConfig};
use spdelab::spectral::{Domain, DomainSpec, SpectralField};
use spdelab::stats::Moments;

#[test]
fn tangent_flow_matches_coupled_finite_difference() {
    let (d, s) = allen_cahn_solver(1.0 / 3.0, 16, 1e-3, 0.5);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let low: Vec<usize> = (0..6).collect();
    let x = SpectralField::random(&d, &low, 1.0, &mut rng).unwrap();
    let h = SpectralField::random(&d, &low, 1.0, &mut rng).unwrap();
    let eps = 1e-5;
    for traj in 0..4 {
        let tangent = s.run(&x, std::slice::from_ref(&h), &mut NoiseStream::new(1, traj)).unwrap().tangents.remove(0);
        let (p, m) = s.run_pair(&x.axpy(eps, &h), &x.axpy(-eps, &h), &mut NoiseStream::new(1, traj)).unwrap();
        let fd = p.x.sub(&m.x).scaled(0.5 / eps);
        let err = fd.sub(&tangent).sup_norm() / tangent.sup_norm();
        assert!(err < 1e-6, "trajectory {traj}: relative tangent error {err:e}");
    }
}

#[test]
fn gradient_weight_is_a_centred_martingale_with_ito_variance() {
    // For b ≡ 0 the tangent is e^{-λ_k s} h_k, so
    // E M(t)² = Σ_k λ_k^γ h_k² (1 - e^{-2λ_k t})/(2λ_k).
    let gamma = 1.0 / 3.0;
    let (d, s) = ou_solver(gamma, 8, 1e-2, 0.5);
    let h = SpectralField::new(&d, vec![0.5, -0.3, 0.2, 0.1, 0.0, 0.05, 0.0, 0.0]).unwrap();
    let x = SpectralField::zeros(&d);
    let mut m = Moments::default();
    let mut sq = Moments::default();
    for traj in 0..20_000 {
        let st = s.run(&x, std::slice::from_ref(&h), &mut NoiseStream::new(8, traj)).unwrap();
        m.push(st.bel[0]);
        sq.push(st.bel[0] * st.bel[0]);
    }
    let exact: f64 = h
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, hk)| {
            let k = i + 1;
            let lam = (k * k) as f64;
            lam.powf(gamma) * hk * hk * sigma2(k, 0.0, 0.5)
        })
        .sum();
    within(m.mean, 0.0, m.stderr(), 4.0, "E M(t)");
    within(sq.mean, exact, sq.stderr(), 4.0, "E M(t)²");
}

#[test]
fn deterministic_flow_converges_at_first_order() {
    let d = Domain::new(DomainSpec::dirichlet_1d(0.0, 16).unwrap()).unwrap();
    let x = SpectralField::mode(&d, &[1], 2.0).unwrap().add(&SpectralField::mode(&d, &[3], -1.0).unwrap());
    let end = |dt: f64| {
        let mut cfg = SolverConfig::new(dt, 0.5);
        cfg.noise = false;
        let s = MildSolver::new(&d, &ReactionSpec::allen_cahn(), &cfg).unwrap();
        s.run(&x, &[], &mut NoiseStream::new(0, 0)).unwrap().x
    };
    let reference = end(1e-5);
    let errs: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| end(dt).sub(&reference).sup_norm()).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.7..2.3).contains(&ratio), "error ratio {ratio} for errors {errs:?}");
    }
}

#[test]
fn holder_contraction_of_the_semigroup() {
    // |P(t)f(x) - P(t)f(y)| ≤ e^{αηt}[f]_α‖x - y‖^α with η = 1 for z - z³
    let (d, s) = allen_cahn_solver(0.0, 16, 1e-2, 1.0);
    let eta = ReactionSpec::allen_cahn().one_sided_lipschitz();
    let f = TestFunction::single(0, Profile::Cusp { alpha: 0.5 });
    let (alpha, c) = f.holder_constant().unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
    let low: Vec<usize> = (0..8).collect();
    for p in 0..5 {
        let x = SpectralField::random(&d, &low, 1.0, &mut rng).unwrap();
        let y = x.add(&SpectralField::random(&d, &low, 0.05, &mut rng).unwrap());
        for t in [0.25, 1.0] {
            let opts = McOptions::new(4_000, 40 + p);
            let (a, b) = (estimate_pt(&s, &f, &x, t, &opts).unwrap(), estimate_pt(&s, &f, &y, t, &opts).unwrap());
            let bound = (alpha * eta * t).exp() * c * x.sub(&y).l2_norm().powf(alpha);
            let diff = (a.value - b.value).abs();
            assert!(diff <= bound + 4.0 * a.stderr.hypot(b.stderr), "pair {p}, t = {t}: {diff} > {bound}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Doubling or halving the direction scales every tangent and weight
    /// increment by an exact power of two, so the estimate scales bitwise.
    #[test]
    fn gradient_is_bitwise_linear_under_power_of_two_scaling(j in -4i32..=4, seed in 0u64..1_000) {
        let (d, s) = allen_cahn_solver(1.0 / 3.0, 8, 1e-2, 0.2);
        let x = SpectralField::mode(&d, &[1], 0.3).unwrap();
        let h = SpectralField::mode(&d, &[2], 0.7).unwrap();
        let f = TestFunction::cosine(0, 1.0, 0.5);
        let opts = McOptions::new(64, seed);
        let c = 2f64.powi(j);
        let g1 = bel_gradient(&s, &f, &x, &h, 0.2, &opts).unwrap();
        let g2 = bel_gradient(&s, &f, &x, &h.scaled(c), 0.2, &opts).unwrap();
        prop_assert_eq!((g1.value * c).to_bits(), g2.value.to_bits());
    }
}
