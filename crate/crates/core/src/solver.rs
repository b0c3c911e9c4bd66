//! Exponential Euler integration of the mild equation with exact noise,
//! the first variation and the running gradient weight.
//!
//! One step of size `h` from `t_n`:
//!
//! ```text
//! X_{n+1} = e^{-λh}(X_n + h F(X_n)) + η_n
//! ξ_{n+1} = e^{-λh}(ξ_n + h b'(X_n) ξ_n)
//! M_{n+1} = M_n + Σ_k λ_k^{γ/2} ξ_{n,k} J_{n,k},    J = ∫_0^h e^{-λs} dβ
//! ```
//!
//! `J` is the increment along the linear part of the tangent flow, which
//! makes the weight exact for linear drifts.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpdeError};
use crate::noise::{NoiseStream, OuKernel, StepNoise};
use crate::reaction::{validate_dissipativity, Nemytskii, ReactionSpec};
use crate::spectral::{Domain, SpectralField};
use crate::stats::ols;

/// Paths whose sup-norm exceeds this are reported as blow-up.
pub const BLOW_UP_GUARD: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub tangents: usize,
    /// Switch the noise off for deterministic runs.
    #[serde(default = "default_true")]
    pub noise: bool,
}

fn default_true() -> bool {
    true
}

impl SolverConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self { dt, horizon, tangents: 0, noise: true }
    }

    pub fn violations(&self, lambda_max: f64) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("dt = {} must be positive", self.dt));
        }
        if !(self.horizon >= self.dt) {
            v.push(format!("horizon {} must be >= dt {}", self.horizon, self.dt));
        }
        if self.dt * lambda_max > 50.0 {
            v.push(format!("dt * lambda_max = {} exceeds 50", self.dt * lambda_max));
        }
        v
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let v = self.violations(domain.lambda_max());
        if v.is_empty() {
            Ok(())
        } else {
            Err(SpdeError::InvalidConfig(v.join("; ")))
        }
    }
}

/// A time grid with precomputed kernels and marked observation nodes.
#[derive(Debug, Clone)]
pub struct Schedule {
    kernels: Vec<Arc<OuKernel>>,
    steps: Vec<usize>,
    /// `node_after[s] = Some(i)` when node `i` is reached after step `s`.
    node_after: Vec<Option<usize>>,
    nodes: Vec<f64>,
}

impl Schedule {
    /// Steps of at most `dt_max` hitting every node exactly.
    pub fn with_nodes(domain: &Domain, dt_max: f64, nodes: &[f64]) -> Result<Self> {
        Self::build(domain, nodes, |_, gap| {
            let n = ((gap / dt_max) - 1e-9).ceil().max(1.0) as usize;
            vec![gap / n as f64; n]
        })
    }

    pub fn uniform(domain: &Domain, dt: f64, horizon: f64) -> Result<Self> {
        Self::with_nodes(domain, dt, &[horizon])
    }

    /// Geometrically growing steps `first, first·ratio, …` capped at `dt_max`.
    pub fn geometric(domain: &Domain, first: f64, ratio: f64, dt_max: f64, nodes: &[f64]) -> Result<Self> {
        if !(first > 0.0 && ratio >= 1.0) {
            return Err(SpdeError::InvalidConfig("geometric schedule needs first > 0, ratio >= 1".into()));
        }
        Self::build(domain, nodes, |start, gap| {
            let mut out = Vec::new();
            let mut t = start;
            let end = start + gap;
            let mut h = if start == 0.0 { first } else { (first * ratio).max(start * (ratio - 1.0)) };
            while t < end {
                // rounded so that nearby steps share a kernel
                let hq = quantize(h.min(dt_max));
                if t + hq >= end * (1.0 - 1e-12) {
                    out.push(end - t);
                    break;
                }
                out.push(hq);
                t += hq;
                h *= ratio;
            }
            out
        })
    }

    fn build(domain: &Domain, nodes: &[f64], split: impl Fn(f64, f64) -> Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.windows(2).any(|w| !(w[1] > w[0])) || !(nodes[0] > 0.0) {
            return Err(SpdeError::InvalidConfig("nodes must be positive and strictly increasing".into()));
        }
        let mut cache: HashMap<u64, usize> = HashMap::new();
        let mut kernels = Vec::new();
        let mut steps = Vec::new();
        let mut node_after = Vec::new();
        let mut t = 0.0;
        for (i, &node) in nodes.iter().enumerate() {
            let sizes = split(t, node - t);
            for h in sizes {
                let idx = match cache.get(&h.to_bits()) {
                    Some(&idx) => idx,
                    None => {
                        kernels.push(Arc::new(OuKernel::new(domain, h)?));
                        cache.insert(h.to_bits(), kernels.len() - 1);
                        kernels.len() - 1
                    }
                };
                steps.push(idx);
                node_after.push(None);
            }
            *node_after.last_mut().expect("at least one step") = Some(i);
            t = node;
        }
        Ok(Self { kernels, steps, node_after, nodes: nodes.to_vec() })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn n_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel(&self, step: usize) -> &OuKernel {
        &self.kernels[self.steps[step]]
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("non-empty")
    }
}

/// Round to 12 significant bits so nearby step sizes share a kernel; the
/// final step of each gap absorbs the remainder exactly.
fn quantize(h: f64) -> f64 {
    let bits = h.to_bits() & !((1u64 << 40) - 1);
    f64::from_bits(bits)
}

/// Primal path, tangent paths and gradient weights of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub time: f64,
    pub x: SpectralField,
    pub tangents: Vec<SpectralField>,
    /// `M^{(i)}(t) = Σ_k ∫_0^t λ_k^{γ/2} ξ^{(i)}_k dβ_k`.
    pub bel: Vec<f64>,
    pub steps: u64,
}

impl TrajectoryState {
    pub fn new(x: &SpectralField, directions: &[SpectralField]) -> Self {
        Self {
            time: 0.0,
            x: x.clone(),
            tangents: directions.to_vec(),
            bel: vec![0.0; directions.len()],
            steps: 0,
        }
    }
}

/// Deterministic part of the next step: `e^{-λh}(X + hF(X))` and the
/// tangent analogues.
#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub mean: Vec<f64>,
    pub tangent_mean: Vec<Vec<f64>>,
}

/// Data passed to observers right before the step that reaches a node.
pub struct NodeEvent<'a> {
    pub node: usize,
    pub time: f64,
    pub kernel: &'a OuKernel,
    /// Member states at the start of the step.
    pub pre: &'a [TrajectoryState],
    pub prepared: &'a [Prepared],
    pub noise: &'a StepNoise,
    /// Modes advanced in this run; entries above are stale.
    pub modes: usize,
}

/// Reusable buffers for one worker.
#[derive(Debug, Clone)]
pub struct Workspace {
    grid: Vec<f64>,
    potential: Vec<f64>,
    drift: Vec<f64>,
    z: Vec<f64>,
    noise: StepNoise,
    prepared: Vec<Prepared>,
}

impl Workspace {
    pub fn new(solver: &MildSolver) -> Self {
        let n = solver.domain.n_modes();
        let g = solver.nemytskii.grid_len();
        Self {
            grid: vec![0.0; g],
            potential: vec![0.0; g],
            drift: vec![0.0; n],
            z: vec![0.0; 3 * n],
            noise: StepNoise::zeros(n),
            prepared: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MildSolver {
    domain: Arc<Domain>,
    nemytskii: Nemytskii,
    reaction: ReactionSpec,
    config: SolverConfig,
}

impl MildSolver {
    pub fn new(domain: &Arc<Domain>, reaction: &ReactionSpec, config: &SolverConfig) -> Result<Self> {
        config.validate(domain)?;
        validate_dissipativity(reaction)?;
        Ok(Self {
            domain: Arc::clone(domain),
            nemytskii: Nemytskii::new(reaction, domain)?,
            reaction: reaction.clone(),
            config: config.clone(),
        })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn reaction(&self) -> &ReactionSpec {
        &self.reaction
    }

    pub fn is_linear_free(&self) -> bool {
        self.nemytskii.is_zero()
    }

    /// Uniform schedule up to the configured horizon.
    pub fn default_schedule(&self) -> Result<Schedule> {
        Schedule::uniform(&self.domain, self.config.dt, self.config.horizon)
    }

    pub fn schedule_for(&self, nodes: &[f64]) -> Result<Schedule> {
        Schedule::with_nodes(&self.domain, self.config.dt, nodes)
    }

    /// Fill `out` with the deterministic part of the step from `state`.
    pub fn prepare(&self, state: &TrajectoryState, kernel: &OuKernel, ws: &mut Workspace, out: &mut Prepared) {
        self.prepare_modes(state, kernel, ws, out, self.domain.n_modes());
    }

    /// `Some(c)` when the drift is `F(x) = c x`, so modes evolve independently.
    pub fn diagonal_rate(&self) -> Option<f64> {
        self.nemytskii.linear_rate()
    }

    /// As [`prepare`](Self::prepare); with diagonal drift only the first `m`
    /// modes are updated.
    fn prepare_modes(&self, state: &TrajectoryState, kernel: &OuKernel, ws: &mut Workspace, out: &mut Prepared, m: usize) {
        let n = self.domain.n_modes();
        let h = kernel.dt();
        let decay = kernel.decay();
        let x = state.x.coeffs();
        out.mean.resize(n, 0.0);
        out.tangent_mean.resize(state.tangents.len(), Vec::new());
        if let Some(c) = self.nemytskii.linear_rate() {
            for k in 0..m {
                out.mean[k] = decay[k] * (x[k] + h * (c * x[k]));
            }
            for (tm, t) in out.tangent_mean.iter_mut().zip(&state.tangents) {
                tm.resize(n, 0.0);
                for ((o, d), v) in tm.iter_mut().zip(decay).zip(t.coeffs()).take(m) {
                    *o = d * (v + h * (c * v));
                }
            }
            return;
        }
        let need_potential = !state.tangents.is_empty();
        if need_potential {
            self.nemytskii.apply_with_potential(x, &mut ws.grid, &mut ws.potential, &mut ws.drift);
        } else {
            self.nemytskii.apply_into(x, &mut ws.grid, &mut ws.drift);
        }
        for k in 0..n {
            out.mean[k] = decay[k] * (x[k] + h * ws.drift[k]);
        }
        for (tm, t) in out.tangent_mean.iter_mut().zip(&state.tangents) {
            tm.resize(n, 0.0);
            self.nemytskii.tangent_drift(&ws.potential, t.coeffs(), &mut ws.grid, &mut ws.drift);
            for k in 0..n {
                tm[k] = decay[k] * (t.coeffs()[k] + h * ws.drift[k]);
            }
        }
    }

    /// Apply noise to a prepared step.
    pub fn commit(&self, state: &mut TrajectoryState, prepared: &Prepared, kernel: &OuKernel, noise: Option<&StepNoise>) -> Result<()> {
        self.commit_modes(state, prepared, kernel, noise, self.domain.n_modes())
    }

    fn commit_modes(&self, state: &mut TrajectoryState, prepared: &Prepared, kernel: &OuKernel, noise: Option<&StepNoise>, m: usize) -> Result<()> {
        let weights = &self.domain.bel_weights()[..m];
        if let Some(noise) = noise {
            for (b, t) in state.bel.iter_mut().zip(&state.tangents) {
                *b += t.coeffs().iter().zip(weights).zip(&noise.j).map(|((a, w), j)| a * w * j).sum::<f64>();
            }
            for ((x, mu), e) in state.x.coeffs_mut()[..m].iter_mut().zip(&prepared.mean).zip(&noise.eta) {
                *x = mu + e;
            }
        } else {
            state.x.coeffs_mut()[..m].copy_from_slice(&prepared.mean[..m]);
        }
        for (t, tm) in state.tangents.iter_mut().zip(&prepared.tangent_mean) {
            t.coeffs_mut()[..m].copy_from_slice(&tm[..m]);
        }
        state.time += kernel.dt();
        state.steps += 1;
        self.guard(state)
    }

    fn guard(&self, state: &TrajectoryState) -> Result<()> {
        let x = state.x.coeffs();
        let finite = x.iter().all(|v| v.is_finite()) && state.bel.iter().all(|v| v.is_finite());
        let blow = |sup: f64| SpdeError::BlowUp { time: state.time, sup_norm: sup };
        if !finite {
            return Err(blow(f64::INFINITY));
        }
        let basis_sup = (2.0 / std::f64::consts::PI).sqrt().powi(self.domain.dim() as i32);
        let bound: f64 = x.iter().map(|v| v.abs()).sum::<f64>() * basis_sup;
        if bound > BLOW_UP_GUARD {
            let sup = state.x.sup_norm();
            if sup > BLOW_UP_GUARD {
                return Err(blow(sup));
            }
        }
        Ok(())
    }

    /// One step of size `kernel.dt()`, drawing from `stream`.
    pub fn step(&self, state: &mut TrajectoryState, kernel: &OuKernel, stream: &mut NoiseStream, ws: &mut Workspace) -> Result<()> {
        let mut prepared = Prepared::default();
        self.prepare(state, kernel, ws, &mut prepared);
        if self.config.noise {
            stream.next_block(&mut ws.z);
            kernel.apply(&ws.z, &mut ws.noise);
            self.commit(state, &prepared, kernel, Some(&ws.noise))
        } else {
            self.commit(state, &prepared, kernel, None)
        }
    }

    /// Advance coupled members along `schedule`, all driven by `stream`.
    ///
    /// `observe` runs before every step that ends on a node, with the
    /// pre-step states, their prepared means and the step noise. Returning
    /// `false` ends the run without taking that step.
    pub fn run_coupled<O>(
        &self,
        states: &mut [TrajectoryState],
        schedule: &Schedule,
        stream: &mut NoiseStream,
        ws: &mut Workspace,
        observe: O,
    ) -> Result<()>
    where
        O: FnMut(&NodeEvent<'_>) -> Result<bool>,
    {
        self.run_coupled_active(states, schedule, stream, ws, self.domain.n_modes(), observe)
    }

    /// As [`run_coupled`](Self::run_coupled), promising that the observer
    /// reads only modes below `active`. With diagonal drift the higher modes
    /// are then neither drawn nor advanced; the lower ones are bitwise the
    /// same as in a full run. [`NodeEvent::modes`] reports the count used.
    pub fn run_coupled_active<O>(
        &self,
        states: &mut [TrajectoryState],
        schedule: &Schedule,
        stream: &mut NoiseStream,
        ws: &mut Workspace,
        active: usize,
        mut observe: O,
    ) -> Result<()>
    where
        O: FnMut(&NodeEvent<'_>) -> Result<bool>,
    {
        let n = self.domain.n_modes();
        let m = if self.diagonal_rate().is_some() { active.clamp(1, n) } else { n };
        let mut prepared = std::mem::take(&mut ws.prepared);
        prepared.resize(states.len(), Prepared::default());
        let zero = StepNoise::zeros(n);
        let result = (|| {
            for s in 0..schedule.n_steps() {
                let kernel = schedule.kernel(s);
                for (st, p) in states.iter().zip(prepared.iter_mut()) {
                    self.prepare_modes(st, kernel, ws, p, m);
                }
                if self.config.noise {
                    stream.next_block(&mut ws.z[..3 * m]);
                    kernel.apply(&ws.z[..3 * m], &mut ws.noise);
                }
                let noise = if self.config.noise { &ws.noise } else { &zero };
                if let Some(node) = schedule.node_after[s] {
                    let go_on = observe(&NodeEvent {
                        node,
                        time: schedule.nodes[node],
                        kernel,
                        pre: states,
                        prepared: &prepared,
                        noise,
                        modes: m,
                    })?;
                    if !go_on {
                        return Ok(());
                    }
                }
                for (st, p) in states.iter_mut().zip(&prepared) {
                    self.commit_modes(st, p, kernel, self.config.noise.then_some(noise), m)?;
                }
            }
            Ok(())
        })();
        ws.prepared = prepared;
        result
    }

    /// Endpoint state at the configured horizon.
    pub fn run(&self, x: &SpectralField, directions: &[SpectralField], stream: &mut NoiseStream) -> Result<TrajectoryState> {
        let schedule = self.default_schedule()?;
        let mut ws = Workspace::new(self);
        let mut st = vec![TrajectoryState::new(x, directions)];
        self.run_coupled(&mut st, &schedule, stream, &mut ws, |_| Ok(true))?;
        Ok(st.pop().expect("one member"))
    }

    /// Two trajectories from `x` and `y` driven by the same noise.
    pub fn run_pair(
        &self,
        x: &SpectralField,
        y: &SpectralField,
        stream: &mut NoiseStream,
    ) -> Result<(TrajectoryState, TrajectoryState)> {
        let schedule = self.default_schedule()?;
        let mut ws = Workspace::new(self);
        let mut st = vec![TrajectoryState::new(x, &[]), TrajectoryState::new(y, &[])];
        self.run_coupled(&mut st, &schedule, stream, &mut ws, |_| Ok(true))?;
        let b = st.pop().expect("two members");
        let a = st.pop().expect("two members");
        Ok((a, b))
    }

    /// Sup-norms of one coupled ensemble at every node of `schedule`
    /// (post-step), indexed `[node][member]`.
    pub fn sup_norms_at_nodes(
        &self,
        starts: &[SpectralField],
        schedule: &Schedule,
        stream: &mut NoiseStream,
    ) -> Result<Vec<Vec<f64>>> {
        self.after_nodes(starts, schedule, stream, |states| states.iter().map(|st| st.x.sup_norm()).collect())
    }

    /// `observe(states)` after every step that ends on a node.
    pub fn after_nodes<T>(
        &self,
        starts: &[SpectralField],
        schedule: &Schedule,
        stream: &mut NoiseStream,
        mut observe: impl FnMut(&[TrajectoryState]) -> T,
    ) -> Result<Vec<T>> {
        let mut ws = Workspace::new(self);
        let mut states: Vec<TrajectoryState> = starts.iter().map(|x| TrajectoryState::new(x, &[])).collect();
        let mut prepared = vec![Prepared::default(); states.len()];
        let mut out = Vec::with_capacity(schedule.nodes().len());
        for s in 0..schedule.n_steps() {
            let kernel = schedule.kernel(s);
            for (st, p) in states.iter().zip(prepared.iter_mut()) {
                self.prepare(st, kernel, &mut ws, p);
            }
            if self.config.noise {
                stream.next_block(&mut ws.z);
                kernel.apply(&ws.z, &mut ws.noise);
            }
            for (st, p) in states.iter_mut().zip(&prepared) {
                self.commit(st, p, kernel, self.config.noise.then_some(&ws.noise))?;
            }
            if schedule.node_after[s].is_some() {
                out.push(observe(&states));
            }
        }
        Ok(out)
    }
}

/// Worst ratio `‖X(t,x) - X(t,y)‖ / (e^{ηt}‖x - y‖)` over coupled pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub times: Vec<f64>,
    pub eta: f64,
    pub pairs: usize,
    /// Largest ratio at each time.
    pub max_ratio: Vec<f64>,
    pub slack: f64,
    /// Pairs with ratio above `1 + slack`, per time.
    pub violations: Vec<usize>,
}

/// Pathwise Lipschitz bound of the flow over `pairs` random coupled pairs
/// with `‖x‖ ≤ 1` and `‖x - y‖ ≤ max_gap` (sup norms on the grid).
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_flow_probe(
    domain: &Arc<Domain>,
    reaction: &ReactionSpec,
    config: &SolverConfig,
    pairs: usize,
    max_gap: f64,
    times: &[f64],
    slack: f64,
    seed: u64,
) -> Result<LipschitzReport> {
    use rand::{Rng, SeedableRng};
    use rayon::prelude::*;
    let solver = MildSolver::new(domain, reaction, config)?;
    let eta = reaction.one_sided_lipschitz();
    let schedule = solver.schedule_for(times)?;
    let low: Vec<usize> = (0..domain.n_modes().min(8)).collect();
    let ratios: Vec<Vec<f64>> = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(crate::noise::stream_key(seed, p as u64, u64::MAX));
            let x = SpectralField::random(domain, &low, 1.0, &mut rng)?;
            let gap = max_gap * rng.random_range(0.1..1.0);
            let y = x.add(&SpectralField::random(domain, &low, gap, &mut rng)?);
            let d0 = x.sub(&y).sup_norm();
            let mut stream = NoiseStream::new(seed, p as u64);
            solver.after_nodes(&[x, y], &schedule, &mut stream, |st| {
                let d = st[0].x.sub(&st[1].x).sup_norm();
                d / ((eta * st[0].time).exp() * d0)
            })
        })
        .collect::<Result<_>>()?;
    let nt = times.len();
    let max_ratio = (0..nt).map(|i| ratios.iter().map(|r| r[i]).fold(0.0, f64::max)).collect();
    let violations = (0..nt).map(|i| ratios.iter().filter(|r| r[i] > 1.0 + slack).count()).collect();
    Ok(LipschitzReport { times: times.to_vec(), eta, pairs, max_ratio, slack, violations })
}

/// Sup-norm decay table for large initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub times: Vec<f64>,
    /// Initial sup-norm of each probe.
    pub probe_sups: Vec<f64>,
    /// `values[i][p]`: sup-norm of probe `p` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    /// Max over probes at each time.
    pub max: Vec<f64>,
    /// `-slope` of `log max` against `log t`.
    pub fitted_exponent: f64,
    /// Prediction `1/(2m)`.
    pub predicted_exponent: f64,
}

/// Sup over a probe set of `‖X(t,x)‖` on a time grid, with a geometric
/// schedule so that stiff large data are integrated stably.
pub fn dissipative_bound_probe(
    domain: &Arc<Domain>,
    reaction: &ReactionSpec,
    config: &SolverConfig,
    probes: &[SpectralField],
    times: &[f64],
    seed: u64,
) -> Result<DecayTable> {
    if reaction.m < 1 {
        return Err(SpdeError::InvalidConfig("dissipative bound probe needs m >= 1".into()));
    }
    let solver = MildSolver::new(domain, reaction, config)?;
    let schedule = Schedule::geometric(domain, 1e-7, 1.25, config.dt, times)?;
    let mut stream = NoiseStream::new(seed, 0);
    let values = solver.sup_norms_at_nodes(probes, &schedule, &mut stream)?;
    let max: Vec<f64> = values.iter().map(|row| row.iter().cloned().fold(0.0, f64::max)).collect();
    let lx: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = max.iter().map(|v| v.ln()).collect();
    let fitted_exponent = ols(&lx, &ly).map_or(f64::NAN, |f| -f.slope);
    Ok(DecayTable {
        times: times.to_vec(),
        probe_sups: probes.iter().map(SpectralField::sup_norm).collect(),
        values,
        max,
        fitted_exponent,
        predicted_exponent: 1.0 / (2.0 * reaction.m as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DomainSpec;
    use approx::assert_relative_eq;

    fn dom(gamma: f64, k: usize) -> Arc<Domain> {
        Domain::new(DomainSpec::dirichlet_1d(gamma, k).unwrap()).unwrap()
    }

    fn quiet(dt: f64, t: f64) -> SolverConfig {
        SolverConfig { dt, horizon: t, tangents: 0, noise: false }
    }

    #[test]
    fn config_constraints() {
        let d = dom(0.0, 64);
        assert!(SolverConfig::new(1e-3, 1.0).validate(&d).is_ok());
        assert!(SolverConfig::new(0.02, 1.0).validate(&d).is_err());
        assert!(SolverConfig::new(0.1, 0.01).validate(&d).is_err());
        assert!(SolverConfig::new(0.0, 1.0).validate(&d).is_err());
    }

    #[test]
    fn pure_heat_flow() {
        let d = dom(0.0, 8);
        let s = MildSolver::new(&d, &ReactionSpec::zero(), &quiet(0.01, 1.0)).unwrap();
        let x = SpectralField::mode(&d, &[1], 1.0).unwrap();
        let h = SpectralField::mode(&d, &[2], 1.0).unwrap();
        let end = s.run(&x, &[h], &mut NoiseStream::new(0, 0)).unwrap();
        assert_relative_eq!(end.x.coeffs()[0], (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(end.tangents[0].coeffs()[1], (-4.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(end.time, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_damping_is_first_order() {
        let d = dom(0.0, 4);
        let x = SpectralField::new(&d, vec![1.0, 0.5, 0.25, 0.125]).unwrap();
        let err = |dt: f64| {
            let s = MildSolver::new(&d, &ReactionSpec::linear(-1.0), &quiet(dt, 1.0)).unwrap();
            let end = s.run(&x, &[], &mut NoiseStream::new(0, 0)).unwrap();
            (0..4)
                .map(|k| {
                    let lam = ((k + 1) * (k + 1)) as f64;
                    (end.x.coeffs()[k] - x.coeffs()[k] * (-(lam + 1.0)).exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.01), err(0.005));
        assert!(e1 < 0.01);
        assert!(e1 / e2 > 1.8, "ratio {}", e1 / e2);
    }

    #[test]
    fn equal_starts_give_identical_paths() {
        let d = dom(1.0 / 3.0, 8);
        let s = MildSolver::new(&d, &ReactionSpec::allen_cahn(), &SolverConfig::new(0.01, 0.5)).unwrap();
        let x = SpectralField::new(&d, (0..8).map(|k| 0.3 / (k as f64 + 1.0)).collect()).unwrap();
        let (a, b) = s.run_pair(&x, &x, &mut NoiseStream::new(9, 1)).unwrap();
        assert_eq!(a.x.coeffs(), b.x.coeffs());
    }

    #[test]
    fn schedule_hits_nodes_and_shares_kernels() {
        let d = dom(0.0, 4);
        let s = Schedule::with_nodes(&d, 0.01, &[0.05, 0.1, 1.0]).unwrap();
        assert_eq!(s.n_steps(), 5 + 5 + 90);
        assert!(s.n_kernels() <= 3);
        let t: f64 = (0..s.n_steps()).map(|i| s.kernel(i).dt()).sum();
        assert_relative_eq!(t, 1.0, epsilon = 1e-12);
        let g = Schedule::geometric(&d, 1e-6, 1.5, 0.01, &[0.1, 1.0]).unwrap();
        let t: f64 = (0..g.n_steps()).map(|i| g.kernel(i).dt()).sum();
        assert_relative_eq!(t, 1.0, epsilon = 1e-12);
        assert!(g.kernel(0).dt() <= 1e-6);
        assert!(Schedule::with_nodes(&d, 0.01, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn unstable_reaction_rejected() {
        let d = dom(0.0, 4);
        let up = ReactionSpec::from_polynomial(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            MildSolver::new(&d, &up, &SolverConfig::new(0.01, 1.0)),
            Err(SpdeError::Dissipativity { .. })
        ));
    }

    #[test]
    fn blow_up_is_reported() {
        let d = dom(0.0, 4);
        let s = MildSolver::new(&d, &ReactionSpec::linear(2000.0), &quiet(0.01, 1.0)).unwrap();
        let x = SpectralField::mode(&d, &[1], 1.0).unwrap();
        assert!(matches!(s.run(&x, &[], &mut NoiseStream::new(0, 0)), Err(SpdeError::BlowUp { .. })));
    }

    #[test]
    fn decay_probe_needs_superlinear_damping() {
        let d = dom(0.0, 8);
        let probes = [SpectralField::mode(&d, &[1], 1.0).unwrap()];
        assert!(dissipative_bound_probe(&d, &ReactionSpec::zero(), &quiet(0.01, 1.0), &probes, &[0.1], 0).is_err());
    }

    #[test]
    fn truncated_run_matches_full_on_low_modes() {
        let d = dom(1.0 / 3.0, 16);
        let s = MildSolver::new(&d, &ReactionSpec::linear(-0.5), &SolverConfig::new(0.01, 1.0)).unwrap();
        let sched = s.schedule_for(&[0.3, 0.7]).unwrap();
        let x = SpectralField::random(&d, &(0..16).collect::<Vec<_>>(), 1.0, &mut <rand_xoshiro::Xoshiro256PlusPlus as rand::SeedableRng>::seed_from_u64(3)).unwrap();
        let h = SpectralField::unit_mode(&d, 2).unwrap();
        let run = |active: usize| {
            let mut st = vec![TrajectoryState::new(&x, std::slice::from_ref(&h))];
            let mut ws = Workspace::new(&s);
            let mut seen = Vec::new();
            s.run_coupled_active(&mut st, &sched, &mut NoiseStream::new(9, 4), &mut ws, active, |ev| {
                seen.push((ev.prepared[0].mean[..3].to_vec(), ev.pre[0].bel.clone(), ev.noise.j[..3].to_vec()));
                Ok(true)
            })
            .unwrap();
            (seen, st[0].x.coeffs()[..3].to_vec(), st[0].bel.clone())
        };
        assert_eq!(run(3), run(16));
    }

    #[test]
    fn flow_is_lipschitz_for_allen_cahn() {
        let d = dom(0.0, 16);
        let r = lipschitz_flow_probe(&d, &ReactionSpec::allen_cahn(), &SolverConfig::new(1e-3, 1.0), 20, 0.1, &[0.5, 1.0], 0.05, 7).unwrap();
        assert_eq!(r.eta, 1.0);
        assert!(r.violations.iter().all(|v| *v == 0), "{r:?}");
        assert!(r.max_ratio.iter().all(|m| *m > 0.0 && *m <= 1.05));
    }
}
