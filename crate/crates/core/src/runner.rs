//! Subcommand orchestration and artifact output.
//!
//! A run produces its artifacts in memory first, so identical
//! `(config, seed)` pairs can be compared byte for byte before anything
//! touches the disk. Every artifact carries the config fingerprint, the
//! code version and the seed: CSV files in a leading `#` line, JSON files as
//! top-level keys.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Result, SpdeError};
use crate::fingerprint::CODE_VERSION;
use crate::noise::{ou_variance, NoiseStream};
use crate::regularity::{verify_schauder, SchauderBundle, Verdict};
use crate::semigroup::{
    bel_gradient_many, estimate_pt_many, evolution_gradient, evolution_mild, fd_gradient, nodes_csv, resolvent,
    resolvent_gradient, EvolutionEstimate, ResolventEstimate, SemigroupEstimate,
};
use crate::stats::Moments;

/// Version tag of every CSV and JSON layout written here.
pub const SCHEMA_VERSION: u32 = 1;

/// Modes whose moments `simulate` reports.
const SIMULATE_MODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Semigroup,
    Gradient,
    Resolvent,
    Evolution,
    Regularity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Semigroup => "semigroup",
            Command::Gradient => "gradient",
            Command::Resolvent => "resolvent",
            Command::Evolution => "evolution",
            Command::Regularity => "regularity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// Predicted against measured exponent, one per regularity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentRow {
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub target: String,
    pub quantity: String,
    pub predicted: f64,
    pub measured: Option<f64>,
    pub r2: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunResult {
    Simulate { rows: Vec<MomentRow> },
    Semigroup { estimates: Vec<SemigroupEstimate> },
    Gradient { bel: Vec<SemigroupEstimate>, fd: Option<Vec<SemigroupEstimate>> },
    Resolvent { value: ResolventEstimate, gradient: ResolventEstimate },
    Evolution { value: Vec<EvolutionEstimate>, gradient: Vec<EvolutionEstimate> },
    Regularity { bundle: SchauderBundle },
}

/// The `report.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: Command,
    pub code_version: String,
    pub seed: u64,
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub exponents: Vec<ExponentRow>,
    pub result: RunResult,
}

/// Moments of one spectral coefficient at one observation time. The OU
/// columns hold the exact law when the drift is linear, and are empty
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    /// Flat mode index, or `sup` for the grid sup-norm.
    pub observable: String,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub n: u64,
    pub ou_mean: Option<f64>,
    pub ou_variance: Option<f64>,
}

/// Run `command` on a validated configuration.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    config.validate().into_result()?;
    let result = match command {
        Command::Simulate => simulate(config)?,
        Command::Semigroup => {
            let solver = config.solver()?;
            let x = config.initial(solver.domain())?;
            RunResult::Semigroup {
                estimates: estimate_pt_many(&solver, &config.test_function(), &x, &config.estimator.times, &config.mc_options())?,
            }
        }
        Command::Gradient => {
            let solver = config.solver()?;
            let d = solver.domain().clone();
            let (x, h, f, opts) = (config.initial(&d)?, config.direction(&d)?, config.test_function(), config.mc_options());
            let times = &config.estimator.times;
            let bel = bel_gradient_many(&solver, &f, &x, &h, times, &opts)?;
            let fd = if config.estimator.eps > 0.0 {
                Some(fd_gradient(&solver, &f, &x, &h, times, config.estimator.eps, &opts)?)
            } else {
                None
            };
            RunResult::Gradient { bel, fd }
        }
        Command::Resolvent => {
            let solver = config.solver()?;
            let d = solver.domain().clone();
            let (x, h, f, q) = (config.initial(&d)?, config.direction(&d)?, config.test_function(), config.quadrature());
            let lambda = config.estimator.lambda;
            RunResult::Resolvent {
                value: resolvent(&solver, &f, &x, lambda, &q)?,
                gradient: resolvent_gradient(&solver, &f, &x, &h, lambda, &q)?,
            }
        }
        Command::Evolution => {
            let solver = config.solver()?;
            let d = solver.domain().clone();
            let (x, h, f, g, q) = (config.initial(&d)?, config.direction(&d)?, config.test_function(), config.source(), config.quadrature());
            let mut value = Vec::new();
            let mut gradient = Vec::new();
            for &t in &config.estimator.times {
                value.push(evolution_mild(&solver, &f, &g, t, &x, &q)?);
                gradient.push(evolution_gradient(&solver, &f, &g, t, &x, &h, &q)?);
            }
            RunResult::Evolution { value, gradient }
        }
        Command::Regularity => {
            let budget = config.schauder_budget()?;
            let alpha = config.campaign.as_ref().and_then(|c| c.alpha);
            RunResult::Regularity { bundle: verify_schauder(config.domain.gamma, alpha, &config.reaction_spec()?, &budget)? }
        }
    };
    Ok(artifacts(command, config, result))
}

/// [`run`] inside a dedicated pool of `threads` workers.
pub fn run_with_threads(command: Command, config: &ExperimentConfig, threads: usize) -> Result<Vec<Artifact>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SpdeError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run(command, config))
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

fn simulate(config: &ExperimentConfig) -> Result<RunResult> {
    let solver = config.solver()?;
    let domain = solver.domain().clone();
    let x = config.initial(&domain)?;
    let times = &config.estimator.times;
    let schedule = solver.schedule_for(times)?;
    let m = domain.n_modes().min(SIMULATE_MODES);
    let per_path: Vec<Vec<Vec<f64>>> = (0..config.estimator.paths)
        .into_par_iter()
        .map(|p| {
            let mut stream = NoiseStream::new(config.seed, p as u64);
            solver.after_nodes(std::slice::from_ref(&x), &schedule, &mut stream, |st| {
                let mut obs = st[0].x.coeffs()[..m].to_vec();
                obs.push(st[0].x.sup_norm());
                obs
            })
        })
        .collect::<Result<_>>()?;
    let rate = solver.diagonal_rate();
    let mut rows = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        for k in 0..=m {
            let mut mom = Moments::default();
            for path in &per_path {
                mom.push(path[i][k]);
            }
            let oracle = rate.filter(|_| k < m).map(|c| {
                let lam = domain.eigenvalues()[k] - c;
                let col = domain.color_multipliers()[k];
                ((-lam * t).exp() * x.coeffs()[k], col * col * ou_variance(lam, t))
            });
            rows.push(MomentRow {
                t,
                observable: if k < m { k.to_string() } else { "sup".into() },
                mean: mom.mean,
                variance: mom.variance(),
                stderr: mom.stderr(),
                n: mom.n,
                ou_mean: oracle.map(|o| o.0),
                ou_variance: oracle.map(|o| o.1),
            });
        }
    }
    Ok(RunResult::Simulate { rows })
}

fn exponent_rows(bundle: &SchauderBundle) -> Vec<ExponentRow> {
    bundle
        .reports
        .iter()
        .map(|r| ExponentRow {
            gamma: bundle.gamma,
            alpha: bundle.alpha,
            target: r.target.clone(),
            quantity: r.expectation.name.clone(),
            predicted: r.predicted_exponent,
            measured: r.measured_exponent,
            r2: r.r2,
            verdict: r.verdict,
        })
        .collect()
}

fn provenance(config: &ExperimentConfig, schema: &str) -> String {
    format!(
        "# schema={schema}/{SCHEMA_VERSION} fingerprint={} code_version={CODE_VERSION} seed={}\n",
        config.fingerprint(),
        config.seed
    )
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:e}"))
}

fn trajectories_csv(config: &ExperimentConfig, rows: &[MomentRow]) -> String {
    let mut out = provenance(config, "trajectories");
    out.push_str("t,observable,mean,variance,stderr,n,ou_mean,ou_variance\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:e},{},{:e},{:e},{:e},{},{},{}",
            r.t,
            r.observable,
            r.mean,
            r.variance,
            r.stderr,
            r.n,
            opt(r.ou_mean),
            opt(r.ou_variance)
        );
    }
    out
}

fn estimates_csv(config: &ExperimentConfig, schema: &str, series: &[(&str, &[SemigroupEstimate])]) -> String {
    let mut out = provenance(config, schema);
    out.push_str("series,t,value,stderr,n\n");
    for (name, ests) in series {
        for e in *ests {
            let _ = writeln!(out, "{name},{:e},{:e},{:e},{}", e.t, e.value, e.stderr, e.n);
        }
    }
    out
}

fn artifacts(command: Command, config: &ExperimentConfig, result: RunResult) -> Vec<Artifact> {
    let mut files = Vec::new();
    let mut push = |name: &str, contents: String| files.push(Artifact { name: name.into(), contents });
    match &result {
        RunResult::Simulate { rows } => push("trajectories.csv", trajectories_csv(config, rows)),
        RunResult::Semigroup { estimates } => push("estimates.csv", estimates_csv(config, "estimates", &[("pt", estimates)])),
        RunResult::Gradient { bel, fd } => {
            let mut series: Vec<(&str, &[SemigroupEstimate])> = vec![("bel", bel)];
            if let Some(fd) = fd {
                series.push(("fd", fd));
            }
            push("estimates.csv", estimates_csv(config, "estimates", &series));
        }
        RunResult::Resolvent { value, .. } => push("nodes.csv", provenance(config, "nodes") + &nodes_csv(value)),
        RunResult::Evolution { value, .. } => {
            if let Some(last) = value.last() {
                push("nodes.csv", provenance(config, "nodes") + &nodes_csv(&last.source_part));
            }
        }
        RunResult::Regularity { bundle } => {
            let mut csv = provenance(config, "scales");
            csv.push_str("report,r,statistic,stderr,probe,masked\n");
            for (i, r) in bundle.reports.iter().enumerate() {
                for line in r.scales_csv().lines().skip(1) {
                    let _ = writeln!(csv, "{i},{line}");
                }
            }
            push("scales.csv", csv);
        }
    }
    let exponents = match &result {
        RunResult::Regularity { bundle } => exponent_rows(bundle),
        _ => Vec::new(),
    };
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command,
        code_version: CODE_VERSION.to_string(),
        seed: config.seed,
        fingerprint: config.fingerprint(),
        config: config.clone(),
        exponents,
        result,
    };
    push("summary.md", summary_md(&report));
    push("report.json", serde_json::to_string_pretty(&report).expect("report serialises") + "\n");
    files
}

fn summary_md(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} run\n", report.command.name());
    let _ = writeln!(s, "- fingerprint: `{}`", report.fingerprint);
    let _ = writeln!(s, "- code version: {}", report.code_version);
    let _ = writeln!(s, "- seed: {}\n", report.seed);
    match &report.result {
        RunResult::Simulate { rows } => {
            let _ = writeln!(s, "| t | observable | mean | variance | OU variance |\n|---|---|---|---|---|");
            for r in rows {
                let _ = writeln!(s, "| {} | {} | {:.6} | {:.6} | {} |", r.t, r.observable, r.mean, r.variance, opt(r.ou_variance));
            }
        }
        RunResult::Semigroup { estimates } | RunResult::Gradient { bel: estimates, .. } => {
            let _ = writeln!(s, "| t | estimate | stderr |\n|---|---|---|");
            for e in estimates {
                let _ = writeln!(s, "| {} | {:.6} | {:.2e} |", e.t, e.value, e.stderr);
            }
        }
        RunResult::Resolvent { value, gradient } => {
            let _ = writeln!(s, "| quantity | estimate | total error | within tolerance |\n|---|---|---|---|");
            for (name, e) in [("u", value), ("Du h", gradient)] {
                let _ = writeln!(s, "| {name} | {:.6} | {:.2e} | {} |", e.value, e.total_error, e.within_tolerance);
            }
        }
        RunResult::Evolution { value, gradient } => {
            let _ = writeln!(s, "| t | v | stderr | Dv h | stderr |\n|---|---|---|---|---|");
            for (v, g) in value.iter().zip(gradient) {
                let _ = writeln!(s, "| {} | {:.6} | {:.2e} | {:.6} | {:.2e} |", v.t, v.value, v.stderr, g.value, g.stderr);
            }
        }
        RunResult::Regularity { .. } => s.push_str(&exponent_table(&report.exponents)),
    }
    s
}

fn exponent_table(rows: &[ExponentRow]) -> String {
    let mut s = String::from("| gamma | alpha | target | quantity | predicted | measured | R² | verdict |\n|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {:.4} | {} | {} | {} | {:.3} | {} | {} | {:?} |",
            r.gamma,
            r.alpha.map_or("-".into(), |a| a.to_string()),
            r.target,
            r.quantity,
            r.predicted,
            r.measured.map_or("-".into(), |m| format!("{m:.3}")),
            r.r2.map_or("-".into(), |v| format!("{v:.3}")),
            r.verdict
        );
    }
    s
}

#[derive(Deserialize)]
struct ExponentsOnly {
    exponents: Vec<ExponentRow>,
}

/// Predicted against measured exponents over every `report.json` found in
/// `dir` and its immediate subdirectories, in path order.
pub fn report(dir: &Path) -> Result<String> {
    let mut paths = Vec::new();
    let mut visit = |d: &Path| -> Result<()> {
        let candidate = d.join("report.json");
        if candidate.is_file() {
            paths.push(candidate);
        }
        Ok(())
    };
    visit(dir)?;
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in &subdirs {
        visit(d)?;
    }
    let mut rows = Vec::new();
    for p in &paths {
        let r: ExponentsOnly = serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| SpdeError::Io(format!("{}: {e}", p.display())))?;
        rows.extend(r.exponents);
    }
    if rows.is_empty() {
        return Err(SpdeError::InvalidConfig(format!("no regularity reports under {}", dir.display())));
    }
    Ok(exponent_table(&rows))
}
