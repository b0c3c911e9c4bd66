//! Hölder and Zygmund moduli across dyadic scales, with log-log exponent fits.
//!
//! A probe is a base point `x` and a unit direction `g`. A target is
//! evaluated on the stencil `x + o·g` for all offsets a seminorm needs, with
//! coupled noise, so a difference has the variance of the difference. Per
//! scale `r` the statistic is the maximum over probes of
//!
//! ```text
//! Hölder:   |T(x + r g) - T(x)|
//! Zygmund:  |T(y + 2r g) - 2 T(y + r g) + T(y)|,  y ∈ {x, x - r g}
//! ```
//!
//! and the fitted exponent is the OLS slope of `ln stat` against `ln r` over
//! unmasked scales. A scale is masked when `4·stderr > 0.25·stat`.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::fingerprint::fingerprint;
use crate::noise::splitmix64;
use crate::profile::{Profile, TestFunction};
use crate::reaction::ReactionSpec;
use crate::semigroup::{
    integrate_stencil, resolvent_horizon, run_fingerprint, Allocation, Modulation, QuadratureBudget, Quantity, SourceTerm,
    StencilIntegral, TimeGrid,
};
use crate::solver::{MildSolver, SolverConfig};
use crate::spectral::{Domain, DomainSpec, SpectralField};
use crate::stats::ols;

/// Dyadic scales `2^{-1}, …, 2^{-7}`.
pub fn default_scales() -> Vec<f64> {
    dyadic_scales(1, 7)
}

/// `2^{-from}, …, 2^{-to}`.
pub fn dyadic_scales(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|j| 2f64.powi(-j)).collect()
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub base: SpectralField,
    /// Step direction; gradient targets also differentiate along it.
    pub direction: SpectralField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seminorm {
    Holder,
    Zygmund,
}

impl Seminorm {
    /// Offsets needed for `scales`, sorted and deduplicated.
    fn offsets(self, scales: &[f64]) -> Vec<f64> {
        let mut o = vec![0.0];
        for &r in scales {
            o.push(r);
            if self == Seminorm::Zygmund {
                o.push(2.0 * r);
                o.push(-r);
            }
        }
        o.sort_by(f64::total_cmp);
        o.dedup();
        o
    }

    /// Stencil coefficient vectors at scale `r`; the statistic of a probe
    /// is the largest of their absolute values.
    fn coefficients(self, offsets: &[f64], r: f64) -> Vec<Vec<f64>> {
        let at = |o: f64| offsets.iter().position(|v| *v == o).expect("offset present");
        let stencil = |terms: &[(f64, f64)]| {
            let mut c = vec![0.0; offsets.len()];
            for &(o, w) in terms {
                c[at(o)] += w;
            }
            c
        };
        match self {
            Seminorm::Holder => vec![stencil(&[(r, 1.0), (0.0, -1.0)])],
            Seminorm::Zygmund => vec![
                stencil(&[(2.0 * r, 1.0), (r, -2.0), (0.0, 1.0)]),
                stencil(&[(r, 1.0), (0.0, -2.0), (-r, 1.0)]),
            ],
        }
    }
}

/// Target values on a stencil, with their joint error structure.
#[derive(Debug, Clone)]
pub struct StencilValues {
    values: Vec<f64>,
    integral: Option<StencilIntegral>,
}

impl StencilValues {
    pub fn exact(values: Vec<f64>) -> Self {
        Self { values, integral: None }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ c_j T_j` and its standard error.
    pub fn combo(&self, c: &[f64]) -> (f64, f64) {
        match &self.integral {
            Some(si) => si.combo(c),
            None => (c.iter().zip(&self.values).map(|(a, v)| a * v).sum(), 0.0),
        }
    }
}

impl From<StencilIntegral> for StencilValues {
    fn from(si: StencilIntegral) -> Self {
        Self { values: si.values.clone(), integral: Some(si) }
    }
}

/// Something that can be evaluated along `probe.base + o·probe.direction`.
pub trait StencilTarget: Sync {
    /// Short name used in reports, e.g. `Du`.
    fn label(&self) -> String;
    fn evaluate(&self, probe: &Probe, offsets: &[f64], probe_index: usize) -> Result<StencilValues>;
    /// Identifies the target in report fingerprints.
    fn fingerprint(&self) -> String {
        fingerprint(&self.label())
    }
}

fn stencil_points(probe: &Probe, offsets: &[f64]) -> Vec<SpectralField> {
    offsets.iter().map(|&o| probe.base.axpy(o, &probe.direction)).collect()
}

/// A deterministic function of the state.
pub struct ClosedForm<F> {
    pub label: String,
    pub f: F,
}

impl<F: Fn(&SpectralField) -> f64 + Sync> StencilTarget for ClosedForm<F> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn evaluate(&self, probe: &Probe, offsets: &[f64], _: usize) -> Result<StencilValues> {
        Ok(StencilValues::exact(stencil_points(probe, offsets).iter().map(|x| (self.f)(x)).collect()))
    }
}

/// Seed for probe `i`: probes are independent, stencil members coupled.
fn probe_seed(seed: u64, i: usize) -> u64 {
    splitmix64(seed ^ splitmix64(i as u64 + 1))
}

/// `u = R(λ,N)f` or its derivative along the probe direction.
pub struct ResolventTarget<'a> {
    pub solver: &'a MildSolver,
    pub f: &'a TestFunction,
    pub lambda: f64,
    pub budget: QuadratureBudget,
    pub gradient: bool,
}

impl ResolventTarget<'_> {
    fn grid(&self) -> Result<TimeGrid> {
        let b = &self.budget;
        let t_max = resolvent_horizon(self.lambda, self.f.sup_norm(), b.tolerance, b.t_min);
        TimeGrid::laplace(self.lambda, b.t_min, t_max, b.ratio, b.max_spacing)
    }
}

impl StencilTarget for ResolventTarget<'_> {
    fn label(&self) -> String {
        if self.gradient { "Du" } else { "u" }.to_string()
    }

    fn evaluate(&self, probe: &Probe, offsets: &[f64], probe_index: usize) -> Result<StencilValues> {
        let q = if self.gradient { Quantity::Gradient(probe.direction.clone()) } else { Quantity::Value };
        let mut b = self.budget.clone();
        b.seed = probe_seed(self.budget.seed, probe_index);
        let si = integrate_stencil(self.solver, self.f, &stencil_points(probe, offsets), &q, &self.grid()?, &b)?;
        Ok(si.into())
    }

    fn fingerprint(&self) -> String {
        run_fingerprint(
            self.solver,
            self.budget.seed,
            &format!("{};lambda={:e};f={}", self.label(), self.lambda, serde_json::to_string(self.f).unwrap_or_default()),
        )
    }
}

/// `v₂(t,·) = ∫_0^t P(t-s) g(s,·) ds` or its derivative along the probe direction.
pub struct EvolutionTarget<'a> {
    pub solver: &'a MildSolver,
    pub source: &'a SourceTerm,
    pub t: f64,
    pub budget: QuadratureBudget,
    pub gradient: bool,
}

impl StencilTarget for EvolutionTarget<'_> {
    fn label(&self) -> String {
        if self.gradient { "Dv2" } else { "v2" }.to_string()
    }

    fn evaluate(&self, probe: &Probe, offsets: &[f64], probe_index: usize) -> Result<StencilValues> {
        let q = if self.gradient { Quantity::Gradient(probe.direction.clone()) } else { Quantity::Value };
        let mut b = self.budget.clone();
        b.seed = probe_seed(self.budget.seed, probe_index);
        let m = self.source.modulation;
        let t = self.t;
        let grid = TimeGrid::new(move |tau| m.eval(t - tau), b.t_min.min(t / 4.0), t, b.ratio, b.max_spacing)?;
        let si = integrate_stencil(self.solver, &self.source.base, &stencil_points(probe, offsets), &q, &grid, &b)?;
        Ok(si.into())
    }

    fn fingerprint(&self) -> String {
        run_fingerprint(
            self.solver,
            self.budget.seed,
            &format!("{};t={:e};g={}", self.label(), self.t, serde_json::to_string(self.source).unwrap_or_default()),
        )
    }
}

/// What the fit is compared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    /// Predicted log-log slope of the statistic.
    pub slope: f64,
    /// The reported exponent is `slope - shift` (for example `1` when second
    /// differences of `Du` stand for a Hölder exponent of `D²u`).
    pub shift: f64,
    /// Name of the reported quantity, e.g. `Du Hölder`.
    pub name: String,
    pub tolerance: f64,
    pub min_r2: f64,
}

impl Expectation {
    pub fn new(name: &str, slope: f64) -> Self {
        Self { slope, shift: 0.0, name: name.to_string(), tolerance: 0.15, min_r2: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub r: f64,
    pub statistic: f64,
    /// Standard error of the maximising probe's difference.
    pub stderr: f64,
    pub probe: usize,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub target: String,
    pub seminorm: Seminorm,
    pub scales: Vec<ScaleRow>,
    pub fitted_slope: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub r2: Option<f64>,
    pub fitted_scales: usize,
    pub expectation: Expectation,
    pub measured_exponent: Option<f64>,
    pub predicted_exponent: f64,
    pub verdict: Verdict,
    pub fingerprint: String,
}

impl RegularityReport {
    /// Per-scale table with columns `r,statistic,stderr,probe,masked`.
    pub fn scales_csv(&self) -> String {
        let mut out = String::from("r,statistic,stderr,probe,masked\n");
        for s in &self.scales {
            out.push_str(&format!("{:e},{:e},{:e},{},{}\n", s.r, s.statistic, s.stderr, s.probe, s.masked));
        }
        out
    }
}

/// The mask rule: a scale is dropped when `4·stderr > 0.25·statistic`.
pub fn is_masked(statistic: f64, stderr: f64) -> bool {
    4.0 * stderr > 0.25 * statistic
}

fn profile(
    seminorm: Seminorm,
    target: &dyn StencilTarget,
    scales: &[f64],
    probes: &[Probe],
    expectation: &Expectation,
) -> Result<RegularityReport> {
    if scales.is_empty() || scales.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return domain_err("scales must be positive");
    }
    if probes.is_empty() {
        return domain_err("no probes");
    }
    let offsets = seminorm.offsets(scales);
    let mut rows: Vec<ScaleRow> =
        scales.iter().map(|&r| ScaleRow { r, statistic: 0.0, stderr: 0.0, probe: 0, masked: false }).collect();
    for (i, probe) in probes.iter().enumerate() {
        let vals = target.evaluate(probe, &offsets, i)?;
        for row in rows.iter_mut() {
            for c in seminorm.coefficients(&offsets, row.r) {
                let (v, se) = vals.combo(&c);
                if (i == 0 && row.statistic == 0.0 && row.stderr == 0.0) || v.abs() > row.statistic {
                    row.statistic = v.abs();
                    row.stderr = se;
                    row.probe = i;
                }
            }
        }
    }
    for row in rows.iter_mut() {
        row.masked = is_masked(row.statistic, row.stderr);
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| !r.masked && r.statistic > 0.0).map(|r| (r.r.ln(), r.statistic.ln())).unzip();
    let fit = if lx.len() >= 3 { ols(&lx, &ly) } else { None };
    let verdict = match fit {
        None => Verdict::Inconclusive,
        Some(f) if (f.slope - expectation.slope).abs() <= expectation.tolerance && f.r2 >= expectation.min_r2 => {
            Verdict::Pass
        }
        Some(_) => Verdict::Fail,
    };
    Ok(RegularityReport {
        target: target.label(),
        seminorm,
        scales: rows,
        fitted_slope: fit.map(|f| f.slope),
        ci95: fit.map(|f| f.ci95),
        r2: fit.map(|f| f.r2),
        fitted_scales: lx.len(),
        measured_exponent: fit.map(|f| f.slope - expectation.shift),
        predicted_exponent: expectation.slope - expectation.shift,
        expectation: expectation.clone(),
        verdict,
        fingerprint: fingerprint(&format!(
            "{};{:?};scales={:?};probes={}",
            target.fingerprint(),
            seminorm,
            scales,
            probes.len()
        )),
    })
}

/// First differences `|T(x+rg) - T(x)|` against `r`.
pub fn holder_profile(target: &dyn StencilTarget, scales: &[f64], probes: &[Probe], expectation: &Expectation) -> Result<RegularityReport> {
    profile(Seminorm::Holder, target, scales, probes, expectation)
}

/// Second differences `|T(x+2rg) - 2T(x+rg) + T(x)|` against `r`.
pub fn zygmund_profile(target: &dyn StencilTarget, scales: &[f64], probes: &[Probe], expectation: &Expectation) -> Result<RegularityReport> {
    profile(Seminorm::Zygmund, target, scales, probes, expectation)
}

/// Which difference of which quantity carries the predicted exponent
/// `β = α + 2/(1+γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub beta: f64,
    pub gradient: bool,
    pub seminorm: Seminorm,
    pub expectation: Expectation,
    /// Scales used unless the budget overrides them.
    pub scales: Vec<f64>,
}

/// Zygmund of `D^{β-1}u` for integer `β`; Hölder of `u` or `Du` with
/// exponent `β` or `β-1` below 2; second differences of `Du` above 2.
///
/// Above 2 the singular part of `Du` is `C|x|^{β-1}` on one coordinate,
/// competing with a smooth `Bx²` that vanishes more slowly than any
/// truncation effect. Those plans use `2^{-3}, …, 2^{-9}`.
pub fn plan(gamma: f64, alpha: Option<f64>) -> Result<Plan> {
    if !(0.0..=1.0).contains(&gamma) {
        return domain_err(format!("gamma {gamma} outside [0, 1]"));
    }
    let a = alpha.unwrap_or(0.0);
    if !(0.0..1.0).contains(&a) {
        return domain_err(format!("alpha {a} outside [0, 1)"));
    }
    let beta = a + 2.0 / (1.0 + gamma);
    let integer = (beta - beta.round()).abs() < 1e-9;
    let (gradient, seminorm, expectation) = if integer && beta.round() == 1.0 {
        (false, Seminorm::Zygmund, Expectation::new("u Zygmund", 1.0))
    } else if integer && beta.round() == 2.0 {
        (true, Seminorm::Zygmund, Expectation::new("Du Zygmund", 1.0))
    } else if beta < 1.0 {
        (false, Seminorm::Holder, Expectation::new("u Hölder", beta))
    } else if beta < 2.0 {
        (true, Seminorm::Holder, Expectation::new("Du Hölder", beta - 1.0))
    } else {
        let mut e = Expectation::new("D2u Hölder", beta - 1.0);
        e.shift = 1.0;
        (true, Seminorm::Zygmund, e)
    };
    let scales = if beta > 2.0 && !integer { dyadic_scales(3, 9) } else { default_scales() };
    Ok(Plan { beta, gradient, seminorm, expectation, scales })
}

/// Desk-scale campaign settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchauderBudget {
    pub modes: usize,
    pub dt: f64,
    pub lambda: f64,
    pub paths_per_probe: usize,
    pub seed: u64,
    /// Wave numbers probed (and carried by the test function).
    pub probe_modes: Vec<usize>,
    /// Overrides the plan's scales.
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    pub t_min: f64,
    pub ratio: f64,
    pub max_spacing: f64,
    /// Resolvent truncation tolerance.
    pub tolerance: f64,
    pub allocation: Allocation,
    /// Also measure `v₂(t,·)` at this time.
    pub evolution_time: Option<f64>,
    /// Skip the stationary report (evolution only).
    #[serde(default)]
    pub skip_stationary: bool,
}

impl Default for SchauderBudget {
    fn default() -> Self {
        Self {
            modes: 32,
            dt: 0.02,
            lambda: 1.0,
            paths_per_probe: 4096,
            seed: 0,
            probe_modes: vec![1, 2, 4, 8, 16, 32],
            scales: None,
            t_min: 1e-6,
            ratio: 2f64.powf(0.25),
            max_spacing: 0.25,
            tolerance: 1e-3,
            allocation: Allocation::Proportional,
            evolution_time: None,
            skip_stationary: false,
        }
    }
}

impl SchauderBudget {
    pub fn total_paths(&self) -> usize {
        self.paths_per_probe * self.probe_modes.len() * (usize::from(!self.skip_stationary) + usize::from(self.evolution_time.is_some()))
    }

    fn quadrature(&self) -> QuadratureBudget {
        QuadratureBudget {
            paths: self.paths_per_probe,
            seed: self.seed,
            tolerance: self.tolerance,
            t_min: self.t_min,
            ratio: self.ratio,
            max_spacing: self.max_spacing,
            allocation: self.allocation,
            rao_blackwell: true,
        }
    }
}

/// Test function for a campaign: an average over the probe modes of a
/// bounded rough (`sign`) or bounded `α`-Hölder profile.
pub fn campaign_test_function(alpha: Option<f64>, flat_modes: &[usize]) -> TestFunction {
    match alpha {
        None => TestFunction::average(Profile::Step, flat_modes),
        Some(alpha) => TestFunction::average(Profile::Cusp { alpha }, flat_modes),
    }
}

/// Probes at `x = 0` along sup-normalised pure modes.
pub fn mode_probes(domain: &std::sync::Arc<Domain>, flat_modes: &[usize]) -> Result<Vec<Probe>> {
    flat_modes
        .iter()
        .map(|&k| Ok(Probe { base: SpectralField::zeros(domain), direction: SpectralField::unit_mode(domain, k)? }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchauderBundle {
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub plan: Plan,
    pub reports: Vec<RegularityReport>,
}

impl SchauderBundle {
    pub fn passed(&self) -> bool {
        !self.reports.is_empty() && self.reports.iter().all(|r| r.verdict == Verdict::Pass)
    }
}

/// Measure the regularity of the resolvent (and optionally of the
/// evolution source part) for `b` given by `reaction` on `[0,π]`.
pub fn verify_schauder(gamma: f64, alpha: Option<f64>, reaction: &ReactionSpec, budget: &SchauderBudget) -> Result<SchauderBundle> {
    let plan = plan(gamma, alpha)?;
    let domain = Domain::new(DomainSpec::dirichlet_1d(gamma, budget.modes)?)?;
    let flat: Vec<usize> = budget
        .probe_modes
        .iter()
        .map(|&k| domain.flat_index(&[k]))
        .collect::<Result<_>>()?;
    let f = campaign_test_function(alpha, &flat);
    let probes = mode_probes(&domain, &flat)?;
    let horizon = resolvent_horizon(budget.lambda, f.sup_norm(), budget.tolerance, budget.t_min)
        .max(budget.evolution_time.unwrap_or(0.0));
    let solver = MildSolver::new(&domain, reaction, &SolverConfig::new(budget.dt, horizon))?;
    let scales = budget.scales.as_ref().unwrap_or(&plan.scales);
    let run = |target: &dyn StencilTarget, e: &Expectation| match plan.seminorm {
        Seminorm::Holder => holder_profile(target, scales, &probes, e),
        Seminorm::Zygmund => zygmund_profile(target, scales, &probes, e),
    };
    let mut reports = Vec::new();
    if !budget.skip_stationary {
        let target = ResolventTarget { solver: &solver, f: &f, lambda: budget.lambda, budget: budget.quadrature(), gradient: plan.gradient };
        reports.push(run(&target, &plan.expectation)?);
    }
    if let Some(t) = budget.evolution_time {
        let source = SourceTerm { base: f.clone(), modulation: Modulation::Constant };
        let mut q = budget.quadrature();
        q.seed ^= 0xe70_1u64;
        let target = EvolutionTarget { solver: &solver, source: &source, t, budget: q, gradient: plan.gradient };
        let mut e = plan.expectation.clone();
        e.name = e.name.replacen('u', "v2", 1);
        reports.push(run(&target, &e)?);
    }
    Ok(SchauderBundle { gamma, alpha, plan, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dom() -> Arc<Domain> {
        Domain::new(DomainSpec::dirichlet_1d(0.0, 4).unwrap()).unwrap()
    }

    fn coord(x: &SpectralField) -> f64 {
        x.coeffs()[0]
    }

    fn probes_1d(bases: &[f64]) -> Vec<Probe> {
        let d = dom();
        bases
            .iter()
            .map(|&b| Probe {
                base: SpectralField::mode(&d, &[1], b).unwrap(),
                direction: SpectralField::mode(&d, &[1], 1.0).unwrap(),
            })
            .collect()
    }

    #[test]
    fn linear_target_has_exponent_one() {
        let t = ClosedForm { label: "x1".into(), f: coord };
        let r = holder_profile(&t, &default_scales(), &probes_1d(&[0.0]), &Expectation::new("u Hölder", 1.0)).unwrap();
        assert_relative_eq!(r.fitted_slope.unwrap(), 1.0, epsilon = 1e-10);
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.scales.iter().all(|s| !s.masked));
    }

    #[test]
    fn square_root_cusp() {
        let t = ClosedForm { label: "sqrt".into(), f: |x: &SpectralField| coord(x).abs().sqrt().min(1.0) };
        let r = holder_profile(&t, &default_scales(), &probes_1d(&[0.0]), &Expectation::new("u Hölder", 0.5)).unwrap();
        assert!((r.fitted_slope.unwrap() - 0.5).abs() <= 0.05);
    }

    #[test]
    fn affine_second_difference_vanishes() {
        let t = ClosedForm { label: "affine".into(), f: |x: &SpectralField| 2.0 * coord(x) + 1.0 };
        let r = zygmund_profile(&t, &[0.5, 0.25, 0.125], &probes_1d(&[0.0]), &Expectation::new("u Zygmund", 1.0)).unwrap();
        assert!(r.scales.iter().all(|s| s.statistic == 0.0));
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn absolute_value_is_zygmund() {
        let scales = default_scales();
        let bases: Vec<f64> = scales.iter().map(|r| -r).collect();
        let t = ClosedForm { label: "abs".into(), f: |x: &SpectralField| coord(x).abs() };
        let r = zygmund_profile(&t, &scales, &probes_1d(&bases), &Expectation::new("u Zygmund", 1.0)).unwrap();
        assert!((r.fitted_slope.unwrap() - 1.0).abs() <= 0.1);
        assert!(r.scales_csv().starts_with("r,statistic,stderr,probe,masked\n"));
    }

    #[test]
    fn calibration_on_power_profiles() {
        for beta in [0.25, 0.5, 0.75, 1.0] {
            let t = ClosedForm { label: "pow".into(), f: move |x: &SpectralField| coord(x).abs().powf(beta) };
            let r = holder_profile(&t, &default_scales(), &probes_1d(&[0.0]), &Expectation::new("u Hölder", beta)).unwrap();
            assert!((r.fitted_slope.unwrap() - beta).abs() <= 0.05, "beta {beta}: {:?}", r.fitted_slope);
        }
    }

    #[test]
    fn plans_follow_beta() {
        let p = plan(0.0, None).unwrap();
        assert!(p.gradient && p.seminorm == Seminorm::Zygmund && p.expectation.slope == 1.0);
        let p = plan(1.0 / 3.0, None).unwrap();
        assert!(p.gradient && p.seminorm == Seminorm::Holder);
        assert_relative_eq!(p.expectation.slope, 0.5, epsilon = 1e-12);
        let p = plan(1.0, None).unwrap();
        assert!(!p.gradient && p.seminorm == Seminorm::Zygmund);
        let p = plan(1.0 / 3.0, Some(0.25)).unwrap();
        assert_relative_eq!(p.expectation.slope, 0.75, epsilon = 1e-12);
        let p = plan(0.0, Some(0.5)).unwrap();
        assert!(p.gradient && p.seminorm == Seminorm::Zygmund);
        assert_relative_eq!(p.expectation.slope, 1.5, epsilon = 1e-12);
        assert_relative_eq!(p.expectation.slope - p.expectation.shift, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zygmund_offsets_cover_doubled_scales() {
        let o = Seminorm::Zygmund.offsets(&default_scales());
        assert_eq!(o.len(), 16);
        assert_eq!(o[0], -0.5);
        assert_eq!(*o.last().unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn mask_rule(stat in 0.0f64..10.0, se in 0.0f64..1.0) {
            prop_assert_eq!(is_masked(stat, se), se > stat / 16.0);
        }
    }
}
