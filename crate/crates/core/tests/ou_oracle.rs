mod common;

use common::*;
use spdelab::profile::{Profile, TestFunction};
use spdelab::semigroup::{
    bel_gradient_many, estimate_pt_many, evolution_mild, resolvent, resolvent_gradient, McOptions, Modulation,
    QuadratureBudget, SourceTerm,
};
use spdelab::regularity::{Probe, ResolventTarget, StencilTarget};
use spdelab::spectral::SpectralField;

const TIMES: [f64; 3] = [0.1, 0.5, 1.0];

#[test]
fn semigroup_and_gradient_match_gaussian_closed_form() {
    for (i, gamma) in [0.0, 1.0 / 3.0, 1.0].into_iter().enumerate() {
        let (d, s) = ou_solver(gamma, 16, 1e-2, 1.0);
        let x = SpectralField::mode(&d, &[1], 0.7).unwrap();
        let h = SpectralField::unit_mode(&d, 0).unwrap();
        let f = TestFunction::cosine(0, 1.3, 0.2);
        let opts = McOptions::new(20_000, 100 + i as u64);
        let pt = estimate_pt_many(&s, &f, &x, &TIMES, &opts).unwrap();
        let gr = bel_gradient_many(&s, &f, &x, &h, &TIMES, &opts).unwrap();
        for (j, &t) in TIMES.iter().enumerate() {
            within(pt[j].value, cos_pt(1, gamma, t, 1.3, 0.2, 0.7), pt[j].stderr, 4.0, "P(t)f");
            within(gr[j].value, cos_grad(1, gamma, t, 1.3, 0.2, 0.7, h.coeffs()[0]), gr[j].stderr, 4.0, "DP(t)f h");
        }
    }
}

#[test]
fn semigroup_property_on_cosines() {
    // P(s)cos(a·+b) = e^{-a²σ²(s)/2} cos(a e^{-s} · + b), so
    // P(t)P(s)f can be estimated directly and compared with P(t+s)f.
    let (gamma, a, b, x0, s_, t) = (1.0 / 3.0, 1.5, -0.4, 0.9, 0.3, 0.4);
    let (d, s) = ou_solver(gamma, 8, 1e-2, 1.0);
    let x = SpectralField::mode(&d, &[1], x0).unwrap();
    let f = TestFunction::cosine(0, a, b);
    let mut ps_f = TestFunction::cosine(0, a * (-s_ as f64).exp(), b);
    ps_f.terms[0].weight = (-a * a * sigma2(1, gamma, s_) / 2.0).exp();
    let opts = McOptions::new(20_000, 5);
    let lhs = estimate_pt_many(&s, &f, &x, &[s_ + t], &opts).unwrap().remove(0);
    let rhs = estimate_pt_many(&s, &ps_f, &x, &[t], &McOptions::new(20_000, 6)).unwrap().remove(0);
    within(lhs.value, rhs.value, lhs.stderr.hypot(rhs.stderr), 4.0, "P(t+s)f vs P(t)P(s)f");
    within(lhs.value, cos_pt(1, gamma, s_ + t, a, b, x0), lhs.stderr, 4.0, "closed form");
}

#[test]
fn resolvent_matches_laplace_transform_of_closed_form() {
    let (gamma, lambda, a, b, x0) = (0.0, 1.0, 1.0, 0.3, 0.5);
    let (d, s) = ou_solver(gamma, 8, 2e-2, 1.0);
    let x = SpectralField::mode(&d, &[1], x0).unwrap();
    let h = SpectralField::unit_mode(&d, 0).unwrap();
    let f = TestFunction::cosine(0, a, b);
    let budget = QuadratureBudget { paths: 4096, seed: 9, tolerance: 1e-3, ..Default::default() };
    // the gradient integrand is bounded here, so plain Simpson is accurate
    let u_exact = simpson(|t| (-lambda * t).exp() * cos_pt(1, gamma, t, a, b, x0), 0.0, 40.0, 40_000);
    let du_exact = simpson(|t| (-lambda * t).exp() * cos_grad(1, gamma, t, a, b, x0, h.coeffs()[0]), 0.0, 40.0, 40_000);
    let u = resolvent(&s, &f, &x, lambda, &budget).unwrap();
    let du = resolvent_gradient(&s, &f, &x, &h, lambda, &budget).unwrap();
    assert!(u.quadrature_error < budget.tolerance && du.quadrature_error < 10.0 * budget.tolerance, "{u:?} {du:?}");
    within(u.value, u_exact, u.stderr.hypot(u.quadrature_error), 4.0, "u");
    within(du.value, du_exact, du.stderr.hypot(du.quadrature_error), 4.0, "Du h");
}

#[test]
fn evolution_with_time_constant_source() {
    // v(t) = P(t)f + ∫_0^t P(τ)g dτ with f = g
    let (gamma, t, a, b, x0) = (1.0, 0.8, 1.0, 0.0, 0.4);
    let (d, s) = ou_solver(gamma, 8, 2e-2, 1.0);
    let x = SpectralField::mode(&d, &[1], x0).unwrap();
    let f = TestFunction::cosine(0, a, b);
    let g = SourceTerm { base: f.clone(), modulation: Modulation::Constant };
    let budget = QuadratureBudget { paths: 4096, seed: 21, ..Default::default() };
    let v = evolution_mild(&s, &f, &g, t, &x, &budget).unwrap();
    let exact = cos_pt(1, gamma, t, a, b, x0) + simpson(|tau| cos_pt(1, gamma, tau, a, b, x0), 0.0, t, 2_000);
    within(v.value, exact, v.stderr.hypot(v.source_part.quadrature_error), 4.0, "v(t)");
}

#[test]
fn cusp_second_differences_match_exact_resolvent() {
    // Du for b ≡ 0, γ = 0, λ = 1, f = cusp_{1/2}(⟨x, e_1⟩) along h = e_1/‖e_1‖∞,
    // from the hypergeometric form of E|μ + Z|^p and adaptive quadrature in t.
    // (r, forward Du(2r) - 2Du(r) + Du(0), centred Du(r) - 2Du(0) + Du(-r))
    const FROZEN: [(f64, f64, f64); 4] = [
        (0.0625, -1.1972e-2, -5.4060e-2),
        (0.03125, -5.9703e-3, -2.1060e-2),
        (0.015625, -2.5865e-3, -7.9434e-3),
        (0.0078125, -1.0378e-3, -2.9339e-3),
    ];
    let (d, s) = ou_solver(0.0, 4, 2e-2, 1.0);
    let h = SpectralField::unit_mode(&d, 0).unwrap();
    let f = TestFunction::single(0, Profile::Cusp { alpha: 0.5 });
    let budget = QuadratureBudget { paths: 4096, seed: 77, tolerance: 1e-4, ..Default::default() };
    let target = ResolventTarget { solver: &s, f: &f, lambda: 1.0, budget, gradient: true };
    let probe = Probe { base: SpectralField::zeros(&d), direction: h };
    for (i, (r, forward, centred)) in FROZEN.into_iter().enumerate() {
        let vals = target.evaluate(&probe, &[-r, 0.0, r, 2.0 * r], i).unwrap();
        let (fw, se_fw) = vals.combo(&[0.0, 1.0, -2.0, 1.0]);
        let (ce, se_ce) = vals.combo(&[1.0, -2.0, 1.0, 0.0]);
        // quadrature and truncation bias stays below 2% of the difference
        within(fw, forward, se_fw.hypot(0.02 * forward), 4.0, "forward second difference of Du");
        within(ce, centred, se_ce.hypot(0.02 * centred), 4.0, "centred second difference of Du");
    }
}
