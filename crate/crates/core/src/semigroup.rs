//! Monte Carlo estimators for the transition semigroup and its gradient.
//!
//! All estimators run coupled ensembles: every member of a stencil sees the
//! same noise path. At an observation time the last step is integrated
//! analytically: with the pre-step mean `μ`, per-mode variance `v` and
//! `c = Cov(η, J)`,
//!
//! ```text
//! E[f(X_{n+1}) | F_n]         = c_0 + Σ_i w_i Φ_i(μ_{k_i}, v_{k_i})
//! E[(f - b) M_{n+1} | F_n]    = (E[f|F_n] - b) M_n
//!                               + Σ_i w_i ∂_μΦ_i λ_{k_i}^{γ/2} ξ_{n,k_i} c_{k_i}
//! ```
//!
//! where `b = f(x)` is a deterministic baseline. Gradients are
//! `(1/t) E[(f(X_t) - b) M_t]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result, SpdeError};
use crate::fingerprint::fingerprint;
use crate::profile::{CompiledTest, TestFunction};
use crate::quad::gauss_legendre;
use crate::solver::{MildSolver, Schedule, TrajectoryState, Workspace};
use crate::spectral::SpectralField;
use crate::stats::{ols, Moments};
use crate::noise::NoiseStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub t: f64,
    pub fingerprint: String,
}

/// Sample count, seed and whether the last step is integrated analytically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub rao_blackwell: bool,
}

fn yes() -> bool {
    true
}

impl McOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, seed, rao_blackwell: true }
    }
}

/// Fingerprint tying an estimate to the seed, discretisation and model.
pub fn run_fingerprint(solver: &MildSolver, seed: u64, extra: &str) -> String {
    let spec = solver.domain().spec();
    fingerprint(&format!(
        "seed={seed};dt={:e};K={};M={};d={};bc={};gamma={:e};reaction={};{extra}",
        solver.config().dt,
        spec.modes,
        spec.grid,
        spec.dim,
        spec.boundary,
        spec.gamma,
        serde_json::to_string(solver.reaction()).unwrap_or_default(),
    ))
}

/// Members of a coupled evaluation and the tangent directions each carries.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub members: Vec<SpectralField>,
    pub directions: Vec<SpectralField>,
    /// Deterministic baseline subtracted from `f` in gradient weights.
    pub baseline: f64,
}

/// Node-wise conditional estimates along one noise path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub members: usize,
    pub dirs: usize,
    /// Nodes actually reached (a path may stop early).
    pub nodes_reached: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
}

impl PathRecord {
    pub fn value(&self, node: usize, member: usize) -> f64 {
        self.value[node * self.members + member]
    }

    pub fn grad(&self, node: usize, member: usize, dir: usize) -> f64 {
        self.grad[(node * self.members + member) * self.dirs + dir]
    }
}

/// A test function, a schedule and a seed: everything needed to run paths.
pub struct Ensemble<'a> {
    solver: &'a MildSolver,
    test: CompiledTest,
    schedule: &'a Schedule,
    seed: u64,
    rao_blackwell: bool,
}

impl<'a> Ensemble<'a> {
    pub fn new(solver: &'a MildSolver, f: &TestFunction, schedule: &'a Schedule, seed: u64, rao_blackwell: bool) -> Result<Self> {
        f.validate(solver.domain().n_modes())?;
        Ok(Self { solver, test: f.compile(), schedule, seed, rao_blackwell })
    }

    /// Run trajectory `traj` up to node `last_node` (inclusive).
    pub fn run_path(&self, stencil: &Stencil, traj: u64, last_node: usize, ws: &mut Workspace) -> Result<PathRecord> {
        let nn = self.schedule.nodes().len();
        let nm = stencil.members.len();
        let nd = stencil.directions.len();
        let mut rec = PathRecord {
            members: nm,
            dirs: nd,
            nodes_reached: 0,
            value: vec![0.0; nn * nm],
            grad: vec![0.0; nn * nm * nd],
        };
        let mut states: Vec<TrajectoryState> =
            stencil.members.iter().map(|x| TrajectoryState::new(x, &stencil.directions)).collect();
        let mut stream = NoiseStream::new(self.seed, traj);
        let noise_on = self.solver.config().noise;
        let bw = self.solver.domain().bel_weights();
        let c = stencil.baseline;
        let mut extra = vec![0.0; nd];
        let mut xnew = vec![0.0; self.solver.domain().n_modes()];
        let test = &self.test;
        let rb = self.rao_blackwell;
        let active = self.active_modes(stencil);
        self.solver.run_coupled_active(&mut states, self.schedule, &mut stream, ws, active, |ev| {
            let t = ev.time;
            let var = ev.kernel.var_eta();
            let cov = ev.kernel.cov_eta_j();
            for m in 0..nm {
                let pre = &ev.pre[m];
                let mean = &ev.prepared[m].mean;
                let vi = ev.node * nm + m;
                let gi = vi * nd;
                if !noise_on {
                    rec.value[vi] = test.eval(mean);
                    continue;
                }
                if rb {
                    let mut ef = test.constant;
                    extra.iter_mut().for_each(|e| *e = 0.0);
                    for (k, w, p) in &test.terms {
                        let (phi, dphi) = p.smooth(mean[*k], var[*k]);
                        ef += w * phi;
                        let s = w * dphi * bw[*k] * cov[*k];
                        for (e, tan) in extra.iter_mut().zip(&pre.tangents) {
                            *e += s * tan.coeffs()[*k];
                        }
                    }
                    rec.value[vi] = ef;
                    for d in 0..nd {
                        rec.grad[gi + d] = ((ef - c) * pre.bel[d] + extra[d]) / t;
                    }
                } else {
                    for ((o, mu), e) in xnew.iter_mut().zip(mean).zip(&ev.noise.eta) {
                        *o = mu + e;
                    }
                    let fx = test.eval(&xnew);
                    rec.value[vi] = fx;
                    for d in 0..nd {
                        let tan = pre.tangents[d].coeffs();
                        let dm: f64 =
                            tan.iter().zip(bw).zip(&ev.noise.j).take(ev.modes).map(|((a, w), j)| a * w * j).sum();
                        rec.grad[gi + d] = (fx - c) * (pre.bel[d] + dm) / t;
                    }
                }
            }
            rec.nodes_reached = ev.node + 1;
            Ok(ev.node < last_node)
        })?;
        Ok(rec)
    }

    /// One past the highest mode read by the test function or carried by a
    /// direction.
    fn active_modes(&self, stencil: &Stencil) -> usize {
        let terms = self.test.terms.iter().map(|(k, _, _)| k + 1).max().unwrap_or(0);
        let dirs = stencil
            .directions
            .iter()
            .filter_map(|h| h.coeffs().iter().rposition(|v| *v != 0.0))
            .map(|k| k + 1)
            .max()
            .unwrap_or(0);
        terms.max(dirs)
    }

    /// Map every path in `0..n` through `f`, in trajectory order.
    pub fn map_paths<T, F, L>(&self, stencil: &Stencil, n: usize, last_node: L, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(PathRecord) -> T + Sync,
        L: Fn(usize) -> usize + Sync,
    {
        let solver = self.solver;
        (0..n)
            .into_par_iter()
            .map_init(
                || Workspace::new(solver),
                |ws, p| self.run_path(stencil, p as u64, last_node(p), ws).map(&f),
            )
            .collect()
    }

    pub fn last_node(&self) -> usize {
        self.schedule.nodes().len() - 1
    }
}

fn check_paths(paths: usize) -> Result<()> {
    if paths < 2 {
        return Err(SpdeError::InvalidConfig(format!("need at least 2 paths, got {paths}")));
    }
    Ok(())
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return domain_err("observation times must be positive and increasing");
    }
    Ok(())
}

fn estimates_from(moments: &[Moments], times: &[f64], fp: &str) -> Vec<SemigroupEstimate> {
    moments
        .iter()
        .zip(times)
        .map(|(m, &t)| SemigroupEstimate { value: m.mean, stderr: m.stderr(), n: m.n as usize, t, fingerprint: fp.to_string() })
        .collect()
}

/// Per-node moments of a scalar extracted from each path.
fn node_moments(records: &[Vec<f64>], nodes: usize) -> Vec<Moments> {
    let mut out = vec![Moments::default(); nodes];
    for r in records {
        for (m, v) in out.iter_mut().zip(r) {
            m.push(*v);
        }
    }
    out
}

/// `P(t)f(x)` at each of `times` from one set of paths.
pub fn estimate_pt_many(solver: &MildSolver, f: &TestFunction, x: &SpectralField, times: &[f64], opts: &McOptions) -> Result<Vec<SemigroupEstimate>> {
    check_times(times)?;
    check_paths(opts.paths)?;
    let schedule = solver.schedule_for(times)?;
    let ens = Ensemble::new(solver, f, &schedule, opts.seed, opts.rao_blackwell)?;
    let stencil = Stencil { members: vec![x.clone()], directions: Vec::new(), baseline: 0.0 };
    let nn = times.len();
    let recs = ens.map_paths(&stencil, opts.paths, |_| nn - 1, |r| (0..nn).map(|i| r.value(i, 0)).collect::<Vec<_>>())?;
    let fp = run_fingerprint(solver, opts.seed, "pt");
    Ok(estimates_from(&node_moments(&recs, nn), times, &fp))
}

/// `P(t)f(x) = E f(X(t,x))`; exact at `t = 0`.
pub fn estimate_pt(solver: &MildSolver, f: &TestFunction, x: &SpectralField, t: f64, opts: &McOptions) -> Result<SemigroupEstimate> {
    if t == 0.0 {
        f.validate(x.domain().n_modes())?;
        return Ok(SemigroupEstimate {
            value: f.eval(x.coeffs()),
            stderr: 0.0,
            n: 0,
            t,
            fingerprint: run_fingerprint(solver, opts.seed, "pt"),
        });
    }
    Ok(estimate_pt_many(solver, f, x, &[t], opts)?.remove(0))
}

/// `DP(t)f(x)h` at each of `times` by the Bismut–Elworthy–Li formula.
pub fn bel_gradient_many(
    solver: &MildSolver,
    f: &TestFunction,
    x: &SpectralField,
    h: &SpectralField,
    times: &[f64],
    opts: &McOptions,
) -> Result<Vec<SemigroupEstimate>> {
    check_times(times)?;
    check_paths(opts.paths)?;
    if !solver.config().noise {
        return domain_err("the gradient weight needs noise");
    }
    let schedule = solver.schedule_for(times)?;
    let ens = Ensemble::new(solver, f, &schedule, opts.seed, opts.rao_blackwell)?;
    let stencil = Stencil { members: vec![x.clone()], directions: vec![h.clone()], baseline: f.eval(x.coeffs()) };
    let nn = times.len();
    let recs = ens.map_paths(&stencil, opts.paths, |_| nn - 1, |r| (0..nn).map(|i| r.grad(i, 0, 0)).collect::<Vec<_>>())?;
    let fp = run_fingerprint(solver, opts.seed, "bel");
    Ok(estimates_from(&node_moments(&recs, nn), times, &fp))
}

pub fn bel_gradient(
    solver: &MildSolver,
    f: &TestFunction,
    x: &SpectralField,
    h: &SpectralField,
    t: f64,
    opts: &McOptions,
) -> Result<SemigroupEstimate> {
    if !(t > 0.0) {
        return domain_err(format!("gradient needs t > 0, got {t}"));
    }
    Ok(bel_gradient_many(solver, f, x, h, &[t], opts)?.remove(0))
}

/// Coupled central difference `(P(t)f(x+εh) - P(t)f(x-εh)) / 2ε`.
pub fn fd_gradient(
    solver: &MildSolver,
    f: &TestFunction,
    x: &SpectralField,
    h: &SpectralField,
    times: &[f64],
    eps: f64,
    opts: &McOptions,
) -> Result<Vec<SemigroupEstimate>> {
    check_times(times)?;
    check_paths(opts.paths)?;
    let schedule = solver.schedule_for(times)?;
    let ens = Ensemble::new(solver, f, &schedule, opts.seed, opts.rao_blackwell)?;
    let stencil = Stencil { members: vec![x.axpy(eps, h), x.axpy(-eps, h)], directions: Vec::new(), baseline: 0.0 };
    let nn = times.len();
    let recs = ens.map_paths(&stencil, opts.paths, |_| nn - 1, |r| {
        (0..nn).map(|i| (r.value(i, 0) - r.value(i, 1)) / (2.0 * eps)).collect::<Vec<_>>()
    })?;
    let fp = run_fingerprint(solver, opts.seed, &format!("fd;eps={eps:e}"));
    Ok(estimates_from(&node_moments(&recs, nn), times, &fp))
}

/// `D²P(t)f(x)(h, k)` as a coupled central difference of gradients in `k`.
#[allow(clippy::too_many_arguments)]
pub fn bel_second_difference(
    solver: &MildSolver,
    f: &TestFunction,
    x: &SpectralField,
    h: &SpectralField,
    k: &SpectralField,
    t: f64,
    eps: f64,
    opts: &McOptions,
) -> Result<SemigroupEstimate> {
    if !(t > 0.0) {
        return domain_err(format!("second difference needs t > 0, got {t}"));
    }
    if !(eps > 0.0 && eps <= 1e-2) {
        return domain_err(format!("finite-difference step {eps} outside (0, 1e-2]"));
    }
    check_paths(opts.paths)?;
    let schedule = solver.schedule_for(&[t])?;
    let ens = Ensemble::new(solver, f, &schedule, opts.seed, opts.rao_blackwell)?;
    let stencil = Stencil {
        members: vec![x.axpy(eps, k), x.axpy(-eps, k)],
        directions: vec![h.clone()],
        baseline: f.eval(x.coeffs()),
    };
    let vals = ens.map_paths(&stencil, opts.paths, |_| 0, |r| (r.grad(0, 0, 0) - r.grad(0, 1, 0)) / (2.0 * eps))?;
    let m = Moments::from_slice(&vals);
    Ok(SemigroupEstimate {
        value: m.mean,
        stderr: m.stderr(),
        n: vals.len(),
        t,
        fingerprint: run_fingerprint(solver, opts.seed, &format!("d2;eps={eps:e}")),
    })
}

/// A base point and the directions probed there.
#[derive(Debug, Clone)]
pub struct ProbePoint {
    pub x: SpectralField,
    pub directions: Vec<SpectralField>,
}

/// `sup` over probes of `|DP(t)f(x)h|` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProbe {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error of the maximising estimate.
    pub stderr: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Smallest `C` with `values ≤ C t^{exponent}` for the supplied exponent.
    pub c_bound: f64,
    pub exponent: f64,
    pub fingerprint: String,
}

/// Gradient decay table. `exponent` is the reference power used for
/// `c_bound` (for example `-(1+γ)/2`).
pub fn gradient_decay_probe(
    solver: &MildSolver,
    f: &TestFunction,
    probes: &[ProbePoint],
    times: &[f64],
    exponent: f64,
    opts: &McOptions,
) -> Result<DecayProbe> {
    check_times(times)?;
    check_paths(opts.paths)?;
    let schedule = solver.schedule_for(times)?;
    let ens = Ensemble::new(solver, f, &schedule, opts.seed, opts.rao_blackwell)?;
    let nn = times.len();
    let mut best = vec![(0.0f64, 0.0f64); nn];
    for probe in probes {
        let nd = probe.directions.len();
        let stencil = Stencil {
            members: vec![probe.x.clone()],
            directions: probe.directions.clone(),
            baseline: f.eval(probe.x.coeffs()),
        };
        let recs = ens.map_paths(&stencil, opts.paths, |_| nn - 1, |r| {
            (0..nn).flat_map(|i| (0..nd).map(move |d| (i, d))).map(|(i, d)| r.grad(i, 0, d)).collect::<Vec<_>>()
        })?;
        let mom = node_moments(&recs, nn * nd);
        for i in 0..nn {
            for d in 0..nd {
                let m = &mom[i * nd + d];
                if m.mean.abs() > best[i].0 {
                    best[i] = (m.mean.abs(), m.stderr());
                }
            }
        }
    }
    let values: Vec<f64> = best.iter().map(|b| b.0).collect();
    let lx: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.max(1e-300).ln()).collect();
    let fit = ols(&lx, &ly);
    let c_bound = values.iter().zip(times).map(|(v, t)| v / t.powf(exponent)).fold(0.0, f64::max);
    Ok(DecayProbe {
        times: times.to_vec(),
        stderr: best.iter().map(|b| b.1).collect(),
        values,
        slope: fit.map_or(f64::NAN, |f| f.slope),
        intercept: fit.map_or(f64::NAN, |f| f.intercept),
        r2: fit.map_or(f64::NAN, |f| f.r2),
        c_bound,
        exponent,
        fingerprint: run_fingerprint(solver, opts.seed, "decay"),
    })
}

/// Positive quadrature nodes with hat-function weights against a kernel.
///
/// The point `τ = 0` is an implicit extra node with weight `zero_weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub zero_weight: f64,
    /// Weights of the rule that drops every other interior node (zero for
    /// dropped nodes); used to estimate the discretisation error.
    pub coarse_weights: Vec<f64>,
    pub coarse_zero_weight: f64,
}

impl TimeGrid {
    /// Nodes `t_min, t_min·r, …` (spacing capped at `max_spacing`) up to `t_max`.
    pub fn new(kernel: impl Fn(f64) -> f64, t_min: f64, t_max: f64, ratio: f64, max_spacing: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min && ratio > 1.0 && max_spacing > 0.0) {
            return Err(SpdeError::InvalidConfig(format!(
                "time grid needs 0 < t_min < t_max, ratio > 1 (t_min {t_min}, t_max {t_max}, ratio {ratio})"
            )));
        }
        let mut nodes = vec![t_min];
        loop {
            let last = *nodes.last().expect("non-empty");
            let next = (last * ratio).min(last + max_spacing);
            if next >= t_max * (1.0 - 1e-9) {
                break;
            }
            nodes.push(next);
        }
        // avoid a sliver interval at the end
        if nodes.len() > 1 && t_max - nodes[nodes.len() - 1] < 0.25 * (nodes[nodes.len() - 1] - nodes[nodes.len() - 2]) {
            nodes.pop();
        }
        nodes.push(t_max);
        let (zero_weight, weights) = hat_weights(&kernel, &nodes);
        let keep: Vec<usize> = (0..nodes.len()).filter(|&i| i % 2 == 0 || i == nodes.len() - 1).collect();
        let sub: Vec<f64> = keep.iter().map(|&i| nodes[i]).collect();
        let (coarse_zero_weight, cw) = hat_weights(&kernel, &sub);
        let mut coarse_weights = vec![0.0; nodes.len()];
        for (&i, w) in keep.iter().zip(cw) {
            coarse_weights[i] = w;
        }
        Ok(Self { nodes, weights, zero_weight, coarse_weights, coarse_zero_weight })
    }

    /// Kernel `e^{-λτ}`.
    pub fn laplace(lambda: f64, t_min: f64, t_max: f64, ratio: f64, max_spacing: f64) -> Result<Self> {
        Self::new(|t| (-lambda * t).exp(), t_min, t_max, ratio, max_spacing)
    }

    pub fn t_max(&self) -> f64 {
        *self.nodes.last().expect("non-empty")
    }
}

/// Exact-to-rounding integrals of the piecewise-linear interpolant (through
/// `0` and `points`) against `kernel`, by 8-point Gauss–Legendre per interval.
fn hat_weights(kernel: &impl Fn(f64) -> f64, points: &[f64]) -> (f64, Vec<f64>) {
    let (gx, gw) = gauss_legendre(8);
    let mut all = vec![0.0; points.len() + 1];
    let mut prev = 0.0;
    for (i, &p) in points.iter().enumerate() {
        let h = p - prev;
        let (mut left, mut right) = (0.0, 0.0);
        for (x, w) in gx.iter().zip(&gw) {
            let s = 0.5 * (1.0 + x);
            let a = kernel(prev + s * h) * 0.5 * h * w;
            left += a * (1.0 - s);
            right += a * s;
        }
        all[i] += left;
        all[i + 1] += right;
        prev = p;
    }
    let zero = all.remove(0);
    (zero, all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Every path runs to the last node.
    Uniform,
    /// Nested: node `i` gets samples in proportion to weight × integrand
    /// bound, rounded down to `paths / 2^j`.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureBudget {
    pub paths: usize,
    pub seed: u64,
    /// Target total error; sets the truncation time `T_max`.
    pub tolerance: f64,
    pub t_min: f64,
    pub ratio: f64,
    pub max_spacing: f64,
    pub allocation: Allocation,
    #[serde(default = "yes")]
    pub rao_blackwell: bool,
}

impl Default for QuadratureBudget {
    fn default() -> Self {
        Self {
            paths: 4096,
            seed: 0,
            tolerance: 1e-2,
            t_min: 1e-6,
            ratio: 2f64.powf(0.25),
            max_spacing: 0.25,
            allocation: Allocation::Proportional,
            rao_blackwell: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEstimate {
    pub t: f64,
    pub weight: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
}

/// `∫ a(τ) G(τ) dτ` with its error budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventEstimate {
    pub value: f64,
    /// Monte Carlo component.
    pub stderr: f64,
    /// Discount rate; `0` for the undiscounted source integral of an evolution.
    pub lambda: f64,
    pub nodes: Vec<NodeEstimate>,
    /// Bound on the neglected tail beyond `T_max`.
    pub tail_bound: f64,
    /// Size of the `[0, t_min]` contribution (treated as a rectangle).
    pub head_truncation: f64,
    /// `|Q - Q_coarse| / 3`.
    pub discretization: f64,
    /// `tail + head + discretisation`.
    pub quadrature_error: f64,
    /// `sqrt(stderr² + quadrature_error²)`.
    pub total_error: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
    pub fingerprint: String,
}

/// What to integrate in time.
#[derive(Debug, Clone)]
pub enum Quantity {
    /// `P(τ)f(x)`, with `P(0)f(x) = f(x)` known exactly.
    Value,
    /// `DP(τ)f(x)h`.
    Gradient(SpectralField),
}

/// Allocation of paths per node, non-increasing in the node index.
fn allocation(grid: &TimeGrid, quantity: &Quantity, gamma: f64, budget: &QuadratureBudget) -> Vec<usize> {
    let n = grid.nodes.len();
    if budget.allocation == Allocation::Uniform {
        return vec![budget.paths; n];
    }
    let bound = |t: f64| match quantity {
        Quantity::Value => 1.0,
        Quantity::Gradient(_) => t.min(1.0).powf(-(1.0 + gamma) / 2.0),
    };
    let raw: Vec<f64> = grid.nodes.iter().zip(&grid.weights).map(|(&t, w)| w.abs() * bound(t)).collect();
    let mut run = vec![0.0; n];
    let mut acc = 0.0f64;
    for i in (0..n).rev() {
        acc = acc.max(raw[i]);
        run[i] = acc;
    }
    let top = run[0].max(f64::MIN_POSITIVE);
    let floor = budget.paths.min(32);
    run.iter()
        .map(|r| {
            let mut m = budget.paths;
            while m / 2 >= floor && (m / 2) as f64 >= budget.paths as f64 * r / top {
                m /= 2;
            }
            m
        })
        .collect()
}

/// Time integrals of one quantity at every member of a coupled stencil.
///
/// Path `p` contributes `y_p = Σ_{i ≤ L_p} w_i g_{i,p} / n_i`, where `L_p` is
/// the last node it reached and `n_i` the number of paths at node `i`, so
/// `Σ_p y_p` is the quadrature of the node means. Paths with the same `L_p`
/// are i.i.d., which gives the variance of any linear combination of members.
#[derive(Debug, Clone)]
pub struct StencilIntegral {
    /// Quadrature value per member.
    pub values: Vec<f64>,
    /// The same with the coarse rule.
    pub coarse: Vec<f64>,
    /// Node moments of the first member.
    pub nodes: Vec<NodeEstimate>,
    members: usize,
    contributions: Vec<f64>,
    strata: Vec<(usize, usize)>,
}

impl StencilIntegral {
    /// `Σ_j c_j value_j` and its Monte Carlo standard error.
    pub fn combo(&self, c: &[f64]) -> (f64, f64) {
        assert_eq!(c.len(), self.members, "one coefficient per member");
        let value = c.iter().zip(&self.values).map(|(a, v)| a * v).sum();
        let mut variance = 0.0;
        for &(a, b) in &self.strata {
            let mut m = Moments::default();
            for y in self.contributions[a * self.members..b * self.members].chunks_exact(self.members) {
                m.push(c.iter().zip(y).map(|(a, v)| a * v).sum());
            }
            variance += m.variance() * (b - a) as f64;
        }
        (value, variance.sqrt())
    }

    pub fn stderr(&self, member: usize) -> f64 {
        let mut c = vec![0.0; self.members];
        c[member] = 1.0;
        self.combo(&c).1
    }
}

/// Coupled time integrals of `quantity` at each of `members`.
pub fn integrate_stencil(
    solver: &MildSolver,
    f: &TestFunction,
    members: &[SpectralField],
    quantity: &Quantity,
    grid: &TimeGrid,
    budget: &QuadratureBudget,
) -> Result<StencilIntegral> {
    check_paths(budget.paths)?;
    if members.is_empty() {
        return domain_err("stencil has no members");
    }
    let schedule = solver.schedule_for(&grid.nodes)?;
    let ens = Ensemble::new(solver, f, &schedule, budget.seed, budget.rao_blackwell)?;
    let base_values: Vec<f64> = members.iter().map(|x| f.eval(x.coeffs())).collect();
    let (directions, gradient) = match quantity {
        Quantity::Value => (Vec::new(), false),
        Quantity::Gradient(h) => {
            if !solver.config().noise {
                return domain_err("the gradient weight needs noise");
            }
            (vec![h.clone()], true)
        }
    };
    let stencil = Stencil { members: members.to_vec(), directions, baseline: base_values[0] };
    let alloc = allocation(grid, quantity, solver.domain().gamma(), budget);
    let nn = grid.nodes.len();
    let nm = members.len();
    let last_of = |p: usize| (0..nn).rev().find(|&i| p < alloc[i]).unwrap_or(0);

    // the head interval is a rectangle for gradients; values know G(0)
    let mut w = grid.weights.clone();
    let mut wc = grid.coarse_weights.clone();
    if gradient {
        w[0] += grid.zero_weight;
        wc[0] += grid.coarse_zero_weight;
    }
    let recs = ens.map_paths(&stencil, budget.paths, last_of, |r| {
        let mut y = vec![0.0; 2 * nm];
        let mut first = Vec::with_capacity(r.nodes_reached);
        for i in 0..r.nodes_reached {
            for j in 0..nm {
                let g = if gradient { r.grad(i, j, 0) } else { r.value(i, j) };
                y[j] += w[i] * g / alloc[i] as f64;
                y[nm + j] += wc[i] * g / alloc[i] as f64;
            }
            first.push(if gradient { r.grad(i, 0, 0) } else { r.value(i, 0) });
        }
        (y, first)
    })?;

    let mut values: Vec<f64> = (0..nm).map(|j| recs.iter().map(|(y, _)| y[j]).sum()).collect();
    let mut coarse: Vec<f64> = (0..nm).map(|j| recs.iter().map(|(y, _)| y[nm + j]).sum()).collect();
    if !gradient {
        for j in 0..nm {
            values[j] += grid.zero_weight * base_values[j];
            coarse[j] += grid.coarse_zero_weight * base_values[j];
        }
    }
    let mut moments = vec![Moments::default(); nn];
    for (_, first) in &recs {
        for (m, v) in moments.iter_mut().zip(first) {
            m.push(*v);
        }
    }
    let nodes = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .zip(&moments)
        .map(|((&t, &weight), m)| NodeEstimate { t, weight, estimate: m.mean, stderr: m.stderr(), n: m.n as usize })
        .collect();
    let mut strata = Vec::new();
    let mut start = 0;
    while start < budget.paths {
        let last = last_of(start);
        let end = (start..budget.paths).find(|&p| last_of(p) != last).unwrap_or(budget.paths);
        strata.push((start, end));
        start = end;
    }
    let contributions = recs.iter().flat_map(|(y, _)| y[..nm].iter().copied()).collect();
    Ok(StencilIntegral { values, coarse, nodes, members: nm, contributions, strata })
}

/// Time integral of `a(τ)·G(τ)` over `grid` by coupled Monte Carlo at the nodes.
pub fn integrate(
    solver: &MildSolver,
    f: &TestFunction,
    x: &SpectralField,
    quantity: &Quantity,
    grid: &TimeGrid,
    tail_bound: impl Fn(&[NodeEstimate]) -> f64,
    budget: &QuadratureBudget,
) -> Result<ResolventEstimate> {
    let si = integrate_stencil(solver, f, std::slice::from_ref(x), quantity, grid, budget)?;
    let gradient = matches!(quantity, Quantity::Gradient(_));
    let value = si.values[0];
    let stderr = si.stderr(0);
    let head_truncation = if gradient { grid.zero_weight * si.nodes[0].estimate.abs() } else { 0.0 };
    let tail = tail_bound(&si.nodes);
    let discretization = (value - si.coarse[0]).abs() / 3.0;
    let quadrature_error = tail + head_truncation + discretization;
    let total_error = (stderr * stderr + quadrature_error * quadrature_error).sqrt();
    Ok(ResolventEstimate {
        value,
        stderr,
        lambda: 0.0,
        nodes: si.nodes,
        tail_bound: tail,
        head_truncation,
        discretization,
        quadrature_error,
        total_error,
        tolerance: budget.tolerance,
        within_tolerance: total_error <= budget.tolerance,
        fingerprint: run_fingerprint(solver, budget.seed, if gradient { "integral-grad" } else { "integral" }),
    })
}

/// `T_max` with `e^{-λT} ‖f‖∞ / λ ≤ tol / 10`.
pub fn resolvent_horizon(lambda: f64, sup_f: f64, tolerance: f64, t_min: f64) -> f64 {
    let t = (sup_f.max(1e-300) * 10.0 / (lambda * tolerance)).ln() / lambda;
    t.max(4.0 * t_min)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain_err(format!("resolvent needs lambda > 0, got {lambda}"));
    }
    Ok(())
}

/// `u = R(λ,N)f(x) = ∫_0^∞ e^{-λt} P(t)f(x) dt`.
pub fn resolvent(solver: &MildSolver, f: &TestFunction, x: &SpectralField, lambda: f64, budget: &QuadratureBudget) -> Result<ResolventEstimate> {
    check_lambda(lambda)?;
    let sup = f.sup_norm();
    let t_max = resolvent_horizon(lambda, sup, budget.tolerance, budget.t_min);
    let grid = TimeGrid::laplace(lambda, budget.t_min, t_max, budget.ratio, budget.max_spacing)?;
    let tail = (-lambda * t_max).exp() * sup / lambda;
    let mut est = integrate(solver, f, x, &Quantity::Value, &grid, |_| tail, budget)?;
    est.lambda = lambda;
    Ok(est)
}

/// `Du(x)h = ∫_0^∞ e^{-λt} DP(t)f(x)h dt`.
pub fn resolvent_gradient(
    solver: &MildSolver,
    f: &TestFunction,
    x: &SpectralField,
    h: &SpectralField,
    lambda: f64,
    budget: &QuadratureBudget,
) -> Result<ResolventEstimate> {
    check_lambda(lambda)?;
    let t_max = resolvent_horizon(lambda, f.sup_norm(), budget.tolerance, budget.t_min);
    let grid = TimeGrid::laplace(lambda, budget.t_min, t_max, budget.ratio, budget.max_spacing)?;
    let decay = (-lambda * t_max).exp() / lambda;
    let tail = move |nodes: &[NodeEstimate]| {
        let last = nodes.last().expect("non-empty");
        decay * (last.estimate.abs() + 2.0 * last.stderr)
    };
    let mut est = integrate(solver, f, x, &Quantity::Gradient(h.clone()), &grid, tail, budget)?;
    est.lambda = lambda;
    Ok(est)
}

/// Time profile of a source term `g(s, x) = a(s) · base(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulation {
    Constant,
    /// `a(s) = cos(ω s + φ)`.
    Cos { omega: f64, phase: f64 },
}

impl Modulation {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Modulation::Constant => 1.0,
            Modulation::Cos { omega, phase } => (omega * s + phase).cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub base: TestFunction,
    pub modulation: Modulation,
}

/// `v(t,x) = P(t)f(x) + ∫_0^t P(t-s) g(s,·)(x) ds`, split into its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionEstimate {
    pub value: f64,
    pub stderr: f64,
    pub t: f64,
    pub initial_part: SemigroupEstimate,
    pub source_part: ResolventEstimate,
}

fn source_grid(g: &SourceTerm, t: f64, budget: &QuadratureBudget) -> Result<TimeGrid> {
    let m = g.modulation;
    // τ = t - s
    TimeGrid::new(move |tau| m.eval(t - tau), budget.t_min.min(t / 4.0), t, budget.ratio, budget.max_spacing)
}

/// Evolution mild solution; `f` and the source use independent noise.
pub fn evolution_mild(
    solver: &MildSolver,
    f: &TestFunction,
    g: &SourceTerm,
    t: f64,
    x: &SpectralField,
    budget: &QuadratureBudget,
) -> Result<EvolutionEstimate> {
    if !(t >= 0.0) {
        return domain_err(format!("evolution needs t >= 0, got {t}"));
    }
    let opts = McOptions { paths: budget.paths, seed: budget.seed, rao_blackwell: budget.rao_blackwell };
    let initial_part = estimate_pt(solver, f, x, t, &opts)?;
    let source_part = if t == 0.0 {
        zero_integral(budget)
    } else {
        let grid = source_grid(g, t, budget)?;
        let mut b = budget.clone();
        b.seed = budget.seed ^ 0x5eed_0f_50_u64;
        integrate(solver, &g.base, x, &Quantity::Value, &grid, |_| 0.0, &b)?
    };
    Ok(EvolutionEstimate {
        value: initial_part.value + source_part.value,
        stderr: initial_part.stderr.hypot(source_part.stderr),
        t,
        initial_part,
        source_part,
    })
}

/// `D_x v(t,x)h`, the spatial gradient of the evolution mild solution.
pub fn evolution_gradient(
    solver: &MildSolver,
    f: &TestFunction,
    g: &SourceTerm,
    t: f64,
    x: &SpectralField,
    h: &SpectralField,
    budget: &QuadratureBudget,
) -> Result<EvolutionEstimate> {
    if !(t > 0.0) {
        return domain_err(format!("evolution gradient needs t > 0, got {t}"));
    }
    let opts = McOptions { paths: budget.paths, seed: budget.seed, rao_blackwell: budget.rao_blackwell };
    let initial_part = bel_gradient(solver, f, x, h, t, &opts)?;
    let grid = source_grid(g, t, budget)?;
    let mut b = budget.clone();
    b.seed = budget.seed ^ 0x5eed_0f_50_u64;
    let source_part = integrate(solver, &g.base, x, &Quantity::Gradient(h.clone()), &grid, |_| 0.0, &b)?;
    Ok(EvolutionEstimate {
        value: initial_part.value + source_part.value,
        stderr: initial_part.stderr.hypot(source_part.stderr),
        t,
        initial_part,
        source_part,
    })
}

fn zero_integral(budget: &QuadratureBudget) -> ResolventEstimate {
    ResolventEstimate {
        value: 0.0,
        stderr: 0.0,
        lambda: 0.0,
        nodes: Vec::new(),
        tail_bound: 0.0,
        head_truncation: 0.0,
        discretization: 0.0,
        quadrature_error: 0.0,
        total_error: 0.0,
        tolerance: budget.tolerance,
        within_tolerance: true,
        fingerprint: String::new(),
    }
}

/// Per-node audit table with columns `t,weight,estimate,stderr,n`.
pub fn nodes_csv(est: &ResolventEstimate) -> String {
    let mut out = String::from("t,weight,estimate,stderr,n\n");
    for n in &est.nodes {
        out.push_str(&format!("{:e},{:e},{:e},{:e},{}\n", n.t, n.weight, n.estimate, n.stderr, n.n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Profile;
    use crate::reaction::ReactionSpec;
    use crate::solver::SolverConfig;
    use crate::spectral::{Domain, DomainSpec};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn ou(gamma: f64, k: usize, dt: f64, t: f64) -> (Arc<Domain>, MildSolver) {
        let d = Domain::new(DomainSpec::dirichlet_1d(gamma, k).unwrap()).unwrap();
        let s = MildSolver::new(&d, &ReactionSpec::zero(), &SolverConfig::new(dt, t)).unwrap();
        (d, s)
    }

    #[test]
    fn value_at_time_zero_is_exact() {
        let (d, s) = ou(0.0, 4, 0.01, 1.0);
        let x = SpectralField::mode(&d, &[1], 0.3).unwrap();
        let f = TestFunction::cosine(0, 1.0, 0.0);
        let e = estimate_pt(&s, &f, &x, 0.0, &McOptions::new(10, 0)).unwrap();
        assert_eq!(e.value, 0.3f64.cos());
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn gradient_rejects_zero_time() {
        let (d, s) = ou(0.0, 4, 0.01, 1.0);
        let x = SpectralField::zeros(&d);
        let f = TestFunction::cosine(0, 1.0, 0.0);
        assert!(bel_gradient(&s, &f, &x, &x, 0.0, &McOptions::new(10, 0)).is_err());
    }

    #[test]
    fn constant_function_has_zero_gradient_and_exact_value() {
        let (d, s) = ou(1.0 / 3.0, 8, 0.01, 1.0);
        let x = SpectralField::mode(&d, &[2], 0.5).unwrap();
        let h = SpectralField::unit_mode(&d, 0).unwrap();
        let f = TestFunction::constant(2.5);
        let opts = McOptions::new(200, 4);
        let g = bel_gradient(&s, &f, &x, &h, 0.5, &opts).unwrap();
        assert_eq!(g.value, 0.0);
        let p = estimate_pt(&s, &f, &x, 0.5, &opts).unwrap();
        assert_eq!(p.value, 2.5);
    }

    #[test]
    fn path_estimates_do_not_depend_on_thread_count() {
        let (d, s) = ou(0.0, 8, 0.01, 0.5);
        let x = SpectralField::mode(&d, &[1], 0.2).unwrap();
        let h = SpectralField::unit_mode(&d, 0).unwrap();
        let f = TestFunction::average(Profile::Step, &[0, 1, 3]);
        let opts = McOptions::new(300, 11);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bel_gradient_many(&s, &f, &x, &h, &[0.1, 0.5], &opts).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rao_blackwell_and_plain_agree_on_ou() {
        let (d, s) = ou(0.0, 4, 0.02, 0.3);
        let x = SpectralField::mode(&d, &[1], 0.4).unwrap();
        let h = SpectralField::unit_mode(&d, 0).unwrap();
        let f = TestFunction::cosine(0, 1.0, 0.0);
        let mut opts = McOptions::new(20_000, 1);
        let a = bel_gradient(&s, &f, &x, &h, 0.3, &opts).unwrap();
        opts.rao_blackwell = false;
        let b = bel_gradient(&s, &f, &x, &h, 0.3, &opts).unwrap();
        assert!((a.value - b.value).abs() < 4.0 * a.stderr.hypot(b.stderr));
        assert!(a.stderr < b.stderr);
    }

    #[test]
    fn hat_weights_integrate_linear_functions() {
        let g = TimeGrid::laplace(1.0, 1e-3, 5.0, 1.3, 0.5).unwrap();
        let total: f64 = g.zero_weight + g.weights.iter().sum::<f64>();
        assert_relative_eq!(total, 1.0 - (-5.0f64).exp(), epsilon = 1e-12);
        let first: f64 = g.nodes.iter().zip(&g.weights).map(|(t, w)| t * w).sum();
        // ∫_0^5 t e^{-t} dt = 1 - 6 e^{-5}
        assert_relative_eq!(first, 1.0 - 6.0 * (-5.0f64).exp(), epsilon = 2e-3);
        assert_relative_eq!(*g.nodes.last().unwrap(), 5.0);
        assert!(g.nodes.windows(2).all(|w| w[1] - w[0] <= 0.5 + 1e-12));
    }

    #[test]
    fn resolvent_of_constant() {
        let (d, s) = ou(0.0, 4, 0.05, 1.0);
        let x = SpectralField::zeros(&d);
        let f = TestFunction::constant(3.0);
        let b = QuadratureBudget { paths: 64, tolerance: 1e-4, ..Default::default() };
        let r = resolvent(&s, &f, &x, 2.0, &b).unwrap();
        assert!((r.value - 1.5).abs() <= r.tail_bound + 1e-12, "{} vs 1.5", r.value);
        assert!(r.total_error >= r.stderr.max(r.quadrature_error));
        assert!(nodes_csv(&r).starts_with("t,weight,estimate,stderr,n\n"));
    }

    #[test]
    fn proportional_allocation_is_nested() {
        let g = TimeGrid::laplace(1.0, 1e-6, 8.0, 2f64.powf(0.25), 0.25).unwrap();
        let b = QuadratureBudget { paths: 1024, ..Default::default() };
        let h = SpectralField::zeros(&Domain::new(DomainSpec::dirichlet_1d(0.0, 2).unwrap()).unwrap());
        let a = allocation(&g, &Quantity::Gradient(h), 0.0, &b);
        assert_eq!(a[0], 1024);
        assert!(a.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.iter().all(|&n| n >= 32 && 1024 % n == 0));
    }

    #[test]
    fn evolution_with_constant_source() {
        let (d, s) = ou(0.0, 4, 0.05, 1.0);
        let x = SpectralField::mode(&d, &[1], 0.7).unwrap();
        let g = SourceTerm { base: TestFunction::constant(2.0), modulation: Modulation::Constant };
        let b = QuadratureBudget { paths: 16, ..Default::default() };
        let v = evolution_mild(&s, &TestFunction::constant(0.0), &g, 0.8, &x, &b).unwrap();
        assert_relative_eq!(v.value, 1.6, epsilon = 1e-12);
    }
}
