//! Experiment configuration: one TOML file with nested blocks.
//!
//! Every block has defaults except `domain` and `solver`. Unknown keys are
//! rejected so that a typo cannot silently fall back to a default.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpdeError};
use crate::fingerprint::fingerprint;
use crate::profile::TestFunction;
use crate::reaction::{validate_dissipativity, ReactionSpec};
use crate::regularity::SchauderBudget;
use crate::semigroup::{Allocation, McOptions, QuadratureBudget, SourceTerm, Modulation};
use crate::solver::{MildSolver, SolverConfig};
use crate::spectral::{Boundary, Domain, DomainSpec, SpectralField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub dim: usize,
    #[serde(default = "dirichlet")]
    pub boundary: Boundary,
    pub gamma: f64,
    pub modes: usize,
    /// Grid intervals per axis; `4 * modes` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

fn dirichlet() -> Boundary {
    Boundary::Dirichlet
}

impl DomainBlock {
    pub fn spec(&self) -> DomainSpec {
        DomainSpec {
            dim: self.dim,
            boundary: self.boundary,
            gamma: self.gamma,
            modes: self.modes,
            grid: self.grid.unwrap_or(4 * self.modes),
        }
    }
}

/// Either `polynomial = [p0, p1, ...]` for `b(z) = Σ p_k z^k`, or the
/// general form with `m`, `coefficients` and an optional certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReactionBlock {
    Polynomial { polynomial: Vec<f64> },
    General(ReactionSpec),
}

impl Default for ReactionBlock {
    fn default() -> Self {
        ReactionBlock::Polynomial { polynomial: vec![0.0, 0.0] }
    }
}

impl ReactionBlock {
    pub fn spec(&self) -> Result<ReactionSpec> {
        match self {
            ReactionBlock::Polynomial { polynomial } => ReactionSpec::from_polynomial(polynomial),
            ReactionBlock::General(spec) => {
                spec.check_shape()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub dt: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorBlock {
    pub paths: usize,
    pub lambda: f64,
    /// Resolvent truncation tolerance.
    pub tolerance: f64,
    pub t_min: f64,
    pub ratio: f64,
    pub max_spacing: f64,
    pub allocation: Allocation,
    pub rao_blackwell: bool,
    /// Observation times for simulate, semigroup and gradient.
    pub times: Vec<f64>,
    /// Finite-difference step for the gradient cross-check; 0 disables it.
    pub eps: f64,
    /// Initial point, as spectral coefficients (flat order, zero-padded).
    pub initial: Vec<f64>,
    /// Flat mode of the sup-normalised gradient direction.
    pub direction_mode: usize,
}

impl Default for EstimatorBlock {
    fn default() -> Self {
        let q = QuadratureBudget::default();
        Self {
            paths: 4096,
            lambda: 1.0,
            tolerance: q.tolerance,
            t_min: q.t_min,
            ratio: q.ratio,
            max_spacing: q.max_spacing,
            allocation: q.allocation,
            rao_blackwell: true,
            times: vec![0.1, 0.5, 1.0],
            eps: 0.0,
            initial: Vec::new(),
            direction_mode: 0,
        }
    }
}

/// Which regularity statement a campaign measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Stationary,
    Evolution,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignBlock {
    #[serde(default = "stationary")]
    pub target: Target,
    /// Hölder exponent of the datum; absent means bounded and rough.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default = "probe_modes")]
    pub probe_modes: Vec<usize>,
    #[serde(default = "paths_per_probe")]
    pub paths_per_probe: usize,
    /// Time at which the evolution gradient is measured.
    #[serde(default = "one")]
    pub evolution_time: f64,
}

fn stationary() -> Target {
    Target::Stationary
}

fn probe_modes() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}

fn paths_per_probe() -> usize {
    1024
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainBlock,
    #[serde(default)]
    pub reaction: ReactionBlock,
    pub solver: SolverBlock,
    #[serde(default)]
    pub estimator: EstimatorBlock,
    /// Test function `f`; `cos(⟨x, e_1⟩)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<TestFunction>,
    /// Source term for the evolution problem; `f` itself when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<CampaignBlock>,
}

/// Every violated clause of a configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(SpdeError::InvalidConfig(self.violations.join("; ")))
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SpdeError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hash of the canonical serialisation, after any overrides.
    pub fn fingerprint(&self) -> String {
        fingerprint(&serde_json::to_string(self).expect("config serialises"))
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let spec = self.domain.spec();
        v.extend(spec.violations());
        match self.reaction.spec().and_then(|r| validate_dissipativity(&r)) {
            Ok(_) => {}
            Err(e) => v.push(format!("reaction: {e}")),
        }
        let n_modes = match spectrum_probe(&spec) {
            Some(domain) => {
                v.extend(SolverConfig::new(self.solver.dt, self.solver.horizon).violations(domain.lambda_max()));
                Some(domain.n_modes())
            }
            None => None,
        };
        self.estimator_violations(n_modes, &mut v);
        if let Some(c) = &self.campaign {
            campaign_violations(c, &spec, self.solver.horizon, &mut v);
        }
        v.sort();
        v.dedup();
        ValidationReport { violations: v }
    }

    fn estimator_violations(&self, n_modes: Option<usize>, v: &mut Vec<String>) {
        let e = &self.estimator;
        if e.paths < 2 {
            v.push(format!("estimator.paths = {} must be >= 2", e.paths));
        }
        if !(e.lambda > 0.0 && e.lambda.is_finite()) {
            v.push(format!("estimator.lambda = {} must be positive", e.lambda));
        }
        if !(e.tolerance > 0.0) {
            v.push(format!("estimator.tolerance = {} must be positive", e.tolerance));
        }
        if !(e.t_min > 0.0) {
            v.push(format!("estimator.t_min = {} must be positive", e.t_min));
        }
        if !(e.ratio > 1.0 && e.ratio.is_finite()) {
            v.push(format!("estimator.ratio = {} must exceed 1", e.ratio));
        }
        if !(e.max_spacing > 0.0) {
            v.push(format!("estimator.max_spacing = {} must be positive", e.max_spacing));
        }
        if e.times.is_empty() || e.times.iter().any(|t| !(*t > 0.0 && *t <= self.solver.horizon)) {
            v.push(format!("estimator.times must be non-empty and lie in (0, {}]", self.solver.horizon));
        }
        if e.times.windows(2).any(|w| w[1] <= w[0]) {
            v.push("estimator.times must be increasing".into());
        }
        if !(0.0..=1e-2).contains(&e.eps) {
            v.push(format!("estimator.eps = {} not in [0, 1e-2]", e.eps));
        }
        if let Some(n) = n_modes {
            if e.initial.len() > n {
                v.push(format!("estimator.initial has {} coefficients, more than {n} modes", e.initial.len()));
            }
            if e.direction_mode >= n {
                v.push(format!("estimator.direction_mode {} >= {n}", e.direction_mode));
            }
            for (name, f) in [("test_function", self.test_function.as_ref()), ("source", self.source.as_ref().map(|s| &s.base))] {
                if let Some(Err(err)) = f.map(|f| f.validate(n)) {
                    v.push(format!("{name}: {err}"));
                }
            }
        }
    }

    pub fn domain(&self) -> Result<Arc<Domain>> {
        Domain::new(self.domain.spec())
    }

    pub fn reaction_spec(&self) -> Result<ReactionSpec> {
        self.reaction.spec()
    }

    pub fn solver(&self) -> Result<MildSolver> {
        MildSolver::new(&self.domain()?, &self.reaction_spec()?, &SolverConfig::new(self.solver.dt, self.solver.horizon))
    }

    pub fn test_function(&self) -> TestFunction {
        self.test_function.clone().unwrap_or_else(|| TestFunction::cosine(0, 1.0, 0.0))
    }

    pub fn source(&self) -> SourceTerm {
        self.source
            .clone()
            .unwrap_or_else(|| SourceTerm { base: self.test_function(), modulation: Modulation::Constant })
    }

    pub fn initial(&self, domain: &Arc<Domain>) -> Result<SpectralField> {
        let mut c = self.estimator.initial.clone();
        c.resize(domain.n_modes(), 0.0);
        SpectralField::new(domain, c)
    }

    pub fn direction(&self, domain: &Arc<Domain>) -> Result<SpectralField> {
        SpectralField::unit_mode(domain, self.estimator.direction_mode)
    }

    pub fn mc_options(&self) -> McOptions {
        McOptions { paths: self.estimator.paths, seed: self.seed, rao_blackwell: self.estimator.rao_blackwell }
    }

    pub fn quadrature(&self) -> QuadratureBudget {
        let e = &self.estimator;
        QuadratureBudget {
            paths: e.paths,
            seed: self.seed,
            tolerance: e.tolerance,
            t_min: e.t_min,
            ratio: e.ratio,
            max_spacing: e.max_spacing,
            allocation: e.allocation,
            rao_blackwell: e.rao_blackwell,
        }
    }

    /// Campaign budget; the campaign block must be present.
    pub fn schauder_budget(&self) -> Result<SchauderBudget> {
        let c = self
            .campaign
            .as_ref()
            .ok_or_else(|| SpdeError::InvalidConfig("regularity needs a [campaign] block".into()))?;
        let e = &self.estimator;
        Ok(SchauderBudget {
            modes: self.domain.modes,
            dt: self.solver.dt,
            lambda: e.lambda,
            paths_per_probe: c.paths_per_probe,
            seed: self.seed,
            probe_modes: c.probe_modes.clone(),
            scales: c.scales.clone(),
            t_min: e.t_min,
            ratio: e.ratio,
            max_spacing: e.max_spacing,
            tolerance: e.tolerance,
            allocation: e.allocation,
            evolution_time: (c.target != Target::Stationary).then_some(c.evolution_time),
            skip_stationary: c.target == Target::Evolution,
        })
    }
}

/// The spectrum of `spec` with the colour and grid relaxed, so the time-step
/// cap is checked even when the domain itself is rejected.
fn spectrum_probe(spec: &DomainSpec) -> Option<Arc<Domain>> {
    if !(1..=3).contains(&spec.dim) || spec.modes == 0 {
        return None;
    }
    let relaxed = DomainSpec {
        gamma: if spec.boundary == Boundary::Dirichlet { 1.0 } else { 0.0 },
        grid: spec.grid.max(4 * spec.modes),
        ..spec.clone()
    };
    Domain::new(relaxed).ok()
}

fn campaign_violations(c: &CampaignBlock, spec: &DomainSpec, horizon: f64, v: &mut Vec<String>) {
    if spec.dim != 1 || spec.boundary != Boundary::Dirichlet {
        v.push("campaign runs on the one-dimensional Dirichlet domain only".into());
    }
    if let Some(a) = c.alpha {
        if !(0.0..1.0).contains(&a) {
            v.push(format!("campaign.alpha = {a} not in [0, 1)"));
        }
    }
    if let Some(s) = &c.scales {
        if s.len() < 3 || s.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            v.push("campaign.scales needs at least 3 values in (0, 1]".into());
        }
    }
    if c.probe_modes.is_empty() || c.probe_modes.iter().any(|&k| k == 0 || k > spec.modes) {
        v.push(format!("campaign.probe_modes must be non-empty wave numbers in 1..={}", spec.modes));
    }
    if c.paths_per_probe < 32 {
        v.push(format!("campaign.paths_per_probe = {} must be >= 32", c.paths_per_probe));
    }
    if c.target != Target::Stationary && !(c.evolution_time > 0.0 && c.evolution_time <= horizon) {
        v.push(format!("campaign.evolution_time = {} not in (0, {horizon}]", c.evolution_time));
    }
}
