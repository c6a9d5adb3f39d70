//! Monte-Carlo experiment runner: parallel replications over a shared seeded
//! stream per replication, per-checkpoint error statistics, and deterministic
//! CSV emission.
//!
//! Determinism contract: replication r draws from ChaCha stream r of
//! `base_seed`, per-replication outcomes are collected in replication order,
//! and aggregation reduces them sequentially, so the result is byte-identical
//! for any worker count.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, DatasetConfig, SyntheticSpec};
use crate::erm::SufficientStats;
use crate::error::{Error, Result};
use crate::optimizer::{default_initial_point, validate_checkpoints, Method, OptimizerState};
use crate::schedule::{ScheduleKind, StepSchedule};
use crate::types::{empirical_risk, mean_abs_error, ConstraintSet, RegressionProblem, Sample, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Psgd,
    PsgdA,
    PsgdWa,
    Erm,
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Psgd => "psgd",
            MethodSpec::PsgdA => "psgd_a",
            MethodSpec::PsgdWa => "psgd_wa",
            MethodSpec::Erm => "erm",
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSpec {
    Synthetic(SyntheticSpec),
    Dataset(DatasetConfig),
}

/// Constraint description in a config file. `box_around_solution` is the
/// synthetic-experiment convenience (a box `omega_star +- half_width`), which
/// needs the true parameter and is therefore rejected for datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSpec {
    Unbounded,
    BoxAroundSolution { half_width: f64 },
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec::Unbounded
    }
}

impl ConstraintSpec {
    fn resolve(&self, omega_star: Option<&Vector>) -> Result<ConstraintSet> {
        match self {
            ConstraintSpec::Unbounded => Ok(ConstraintSet::Unbounded),
            ConstraintSpec::BoxAroundSolution { half_width } => {
                let star = omega_star.ok_or_else(|| {
                    Error::InvalidParameter(
                        "constraint.box_around_solution requires a synthetic problem".into(),
                    )
                })?;
                if !(half_width.is_finite() && *half_width > 0.0) {
                    return Err(Error::InvalidParameter(
                        "constraint.half_width must be > 0".into(),
                    ));
                }
                let lower =
                    Vector::new(star.as_slice().iter().map(|s| s - half_width).collect())?;
                let upper =
                    Vector::new(star.as_slice().iter().map(|s| s + half_width).collect())?;
                ConstraintSet::new_box(lower, upper)
            }
            ConstraintSpec::Box { lower, upper } => {
                ConstraintSet::new_box(lower.clone(), upper.clone())
            }
            ConstraintSpec::Ball { center, radius } => {
                ConstraintSet::new_ball(center.clone(), *radius)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindSpec {
    #[default]
    Constrained,
    ScalarUnconstrained,
}

fn default_constant_step() -> f64 {
    0.002
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub gamma: f64,
    /// Strong-convexity constant used by the constrained step; required for
    /// the constrained kind, ignored by the scalar kind.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub kind: ScheduleKindSpec,
    /// Constant step used by PSGD-A only.
    #[serde(default = "default_constant_step")]
    pub constant_step: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<StepSchedule> {
        match self.kind {
            ScheduleKindSpec::Constrained => {
                let mu = self.mu.ok_or_else(|| {
                    Error::InvalidParameter(
                        "schedule.mu is required for the constrained schedule".into(),
                    )
                })?;
                StepSchedule::constrained(self.gamma, mu)
            }
            ScheduleKindSpec::ScalarUnconstrained => {
                StepSchedule::scalar_unconstrained(self.gamma)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSpec {
    List(Vec<u64>),
    LogSpaced(u32),
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        CheckpointSpec::LogSpaced(50)
    }
}

impl CheckpointSpec {
    pub fn resolve(&self, n_steps: u64) -> Result<Vec<u64>> {
        match self {
            CheckpointSpec::List(list) => {
                validate_checkpoints(list, n_steps)?;
                Ok(list.clone())
            }
            CheckpointSpec::LogSpaced(count) => Ok(log_spaced(*count, n_steps)),
        }
    }
}

/// `count` log-spaced step indices from 1 to `n_steps`, deduplicated and
/// strictly increasing.
pub fn log_spaced(count: u32, n_steps: u64) -> Vec<u64> {
    if count == 0 || n_steps == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![n_steps];
    }
    let ln_max = (n_steps as f64).ln();
    let mut out: Vec<u64> = Vec::with_capacity(count as usize);
    for i in 0..count {
        let t = i as f64 / (count - 1) as f64;
        let k = ((t * ln_max).exp().round() as u64).clamp(1, n_steps);
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    out
}

fn default_replications() -> u64 {
    1
}

fn default_tail_fraction() -> f64 {
    0.2
}

/// Full experiment description. All randomness flows from `base_seed`; a
/// synthetic problem's own `seed` field is overridden by it so a config has a
/// single entropy source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub constraint: ConstraintSpec,
    pub methods: Vec<MethodSpec>,
    pub schedule: ScheduleConfig,
    pub n_steps: u64,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default)]
    pub base_seed: u64,
    pub output_path: PathBuf,
    #[serde(default)]
    pub omega0: Option<Vector>,
    /// Fraction of trailing checkpoints used for the ERM error-ratio summary.
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
}

/// Aggregated statistics for one (method, checkpoint) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean_error: f64,
    pub stderr: f64,
    pub n_reps: u64,
}

/// Per-checkpoint error trajectories for every configured method, averaged
/// over replications. A cell is `None` when no replication produced a value
/// there (ERM before identifiability) - absent, not zero.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub methods: Vec<MethodSpec>,
    pub checkpoints: Vec<u64>,
    /// Primary error metric: exact excess risk for synthetic problems,
    /// holdout empirical risk for datasets. Indexed `[method][checkpoint]`.
    pub cells: Vec<Vec<Option<CellStats>>>,
    /// Secondary metric: squared parameter distance for synthetic problems,
    /// mean absolute prediction error for datasets.
    pub aux_label: &'static str,
    pub aux_cells: Vec<Vec<Option<CellStats>>>,
    pub config: ExperimentConfig,
    pub wall_time_ms: u64,
}

impl RunResult {
    pub fn method_index(&self, method: MethodSpec) -> Option<usize> {
        self.methods.iter().position(|m| *m == method)
    }

    /// Mean primary errors of one method across checkpoints.
    pub fn mean_errors(&self, method: MethodSpec) -> Option<Vec<Option<f64>>> {
        let idx = self.method_index(method)?;
        Some(
            self.cells[idx]
                .iter()
                .map(|c| c.map(|s| s.mean_error))
                .collect(),
        )
    }
}

enum Evaluator<'a> {
    Synthetic(&'a RegressionProblem),
    Dataset { holdout: &'a [Sample] },
}

impl Evaluator<'_> {
    /// (primary, secondary) error of a reported estimate.
    fn measure(&self, estimate: &Vector) -> Result<(f64, f64)> {
        match self {
            Evaluator::Synthetic(problem) => Ok((
                problem.excess_risk(estimate)?,
                estimate.distance_sq(problem.omega_star()),
            )),
            Evaluator::Dataset { holdout } => Ok((
                empirical_risk(holdout, estimate)?,
                mean_abs_error(holdout, estimate)?,
            )),
        }
    }

    fn aux_label(&self) -> &'static str {
        match self {
            Evaluator::Synthetic(_) => "param_dist_sq",
            Evaluator::Dataset { .. } => "mae",
        }
    }
}

struct ReplicationPlan<'a> {
    methods: &'a [MethodSpec],
    schedule: StepSchedule,
    constant_step: f64,
    set: &'a ConstraintSet,
    omega0: Vector,
    d: usize,
    n_steps: u64,
    checkpoints: &'a [u64],
    scalar: bool,
}

enum Runner {
    /// Slot holding the state so the value-passing `step` can move through it.
    Opt(Option<OptimizerState>),
    Erm(SufficientStats),
}

struct RepOutcome {
    /// `[method][checkpoint]` primary errors; `None` marks an unavailable
    /// estimate (ERM before identifiability).
    primary: Vec<Vec<Option<f64>>>,
    aux: Vec<Vec<Option<f64>>>,
}

/// Runs every configured method over one shared pass of the stream (paired
/// comparison: all methods see the identical sample sequence) and measures
/// the reported estimates at each checkpoint.
fn run_replication<I: Iterator<Item = Sample>>(
    mut stream: I,
    plan: &ReplicationPlan<'_>,
    evaluator: &Evaluator<'_>,
) -> Result<RepOutcome> {
    let n_methods = plan.methods.len();
    let n_ckpt = plan.checkpoints.len();
    let mut runners = Vec::with_capacity(n_methods);
    for spec in plan.methods {
        runners.push(match spec {
            MethodSpec::Erm => Runner::Erm(SufficientStats::zeros(plan.d)),
            _ => {
                let method = match spec {
                    MethodSpec::Psgd => Method::Psgd,
                    MethodSpec::PsgdA => Method::PsgdA {
                        constant_step: plan.constant_step,
                    },
                    MethodSpec::PsgdWa => Method::PsgdWa,
                    MethodSpec::Erm => unreachable!(),
                };
                Runner::Opt(Some(OptimizerState::new(
                    method,
                    plan.omega0.clone(),
                    &plan.schedule,
                )?))
            }
        });
    }

    let mut primary = vec![vec![None; n_ckpt]; n_methods];
    let mut aux = vec![vec![None; n_ckpt]; n_methods];
    let mut next_ckpt = 0usize;
    for step_idx in 1..=plan.n_steps {
        let sample = stream.next().ok_or(Error::StreamExhausted {
            needed: plan.n_steps,
            got: step_idx - 1,
        })?;
        for runner in runners.iter_mut() {
            match runner {
                Runner::Opt(slot) => {
                    let owned = slot.take().expect("state always restored");
                    *slot = Some(if plan.scalar {
                        owned.step_scalar(&sample, &plan.schedule)?
                    } else {
                        owned.step(&sample, &plan.schedule, plan.set)?
                    });
                }
                Runner::Erm(stats) => stats.absorb(&sample)?,
            }
        }
        if next_ckpt < n_ckpt && plan.checkpoints[next_ckpt] == step_idx {
            for (mi, runner) in runners.iter().enumerate() {
                let estimate = match runner {
                    Runner::Opt(slot) => {
                        Some(slot.as_ref().expect("state always restored").estimate().clone())
                    }
                    Runner::Erm(stats) => match stats.solve(plan.set) {
                        Ok(v) => Some(v),
                        Err(Error::NotYetIdentifiable) => None,
                        Err(e) => return Err(e),
                    },
                };
                if let Some(est) = estimate {
                    let (p, a) = evaluator.measure(&est)?;
                    primary[mi][next_ckpt] = Some(p);
                    aux[mi][next_ckpt] = Some(a);
                }
            }
            next_ckpt += 1;
        }
    }
    Ok(RepOutcome { primary, aux })
}

fn validate_methods(methods: &[MethodSpec]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::InvalidParameter("methods must not be empty".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(Error::InvalidParameter(format!(
                "methods contains `{m}` more than once"
            )));
        }
    }
    Ok(())
}

/// Runs the experiment described by `config`: for each replication, derive an
/// independent stream from `(base_seed, replication)`, run every method over
/// that identical stream, and aggregate per-checkpoint means and standard
/// errors across replications. Deterministic given the config, for any worker
/// count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    let start = Instant::now();
    validate_methods(&config.methods)?;
    if config.replications < 1 {
        return Err(Error::InvalidParameter("replications must be >= 1".into()));
    }
    if config.n_steps < 1 {
        return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
    }
    if !(config.schedule.constant_step.is_finite() && config.schedule.constant_step > 0.0) {
        return Err(Error::InvalidParameter(
            "schedule.constant_step must be > 0".into(),
        ));
    }
    let checkpoints = config.checkpoints.resolve(config.n_steps)?;
    let schedule = config.schedule.build()?;
    let scalar = matches!(schedule.kind(), ScheduleKind::ScalarUnconstrained);

    // Problem-specific setup.
    let mut synthetic: Option<(SyntheticSpec, RegressionProblem)> = None;
    let mut dataset: Option<(Vec<Sample>, Vec<Sample>)> = None;
    let (d, set) = match &config.problem {
        ProblemSpec::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = config.base_seed;
            spec.validate()?;
            let set = config.constraint.resolve(Some(&spec.omega_star))?;
            let mu = match config.schedule.kind {
                ScheduleKindSpec::Constrained => config.schedule.mu.ok_or_else(|| {
                    Error::InvalidParameter(
                        "schedule.mu is required for the constrained schedule".into(),
                    )
                })?,
                ScheduleKindSpec::ScalarUnconstrained => spec.min_eigenvalue(),
            };
            let problem = spec.problem(mu, set.clone())?;
            let d = spec.d;
            synthetic = Some((spec, problem));
            (d, set)
        }
        ProblemSpec::Dataset(cfg) => {
            let set = config.constraint.resolve(None)?;
            let (train, holdout) = load_csv(cfg)?;
            if holdout.is_empty() {
                return Err(Error::InvalidParameter(
                    "dataset experiments need holdout_fraction > 0 for evaluation".into(),
                ));
            }
            if (train.len() as u64) < config.n_steps {
                return Err(Error::StreamExhausted {
                    needed: config.n_steps,
                    got: train.len() as u64,
                });
            }
            let d = cfg.n_features;
            dataset = Some((train, holdout));
            (d, set)
        }
    };
    if scalar {
        if d != 1 {
            return Err(Error::InvalidParameter(
                "the scalar_unconstrained schedule requires d = 1".into(),
            ));
        }
        if set.is_bounded() {
            return Err(Error::InvalidParameter(
                "the scalar_unconstrained schedule requires an unbounded constraint".into(),
            ));
        }
    }
    if let Some(dim) = set.dim() {
        if dim != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: dim,
            });
        }
    }
    let omega0 = match &config.omega0 {
        Some(v) => {
            v.check_dim(d)?;
            if set.is_bounded() && !set.contains(v, 0.0) {
                return Err(Error::InvalidParameter(
                    "omega0 must lie inside the constraint set".into(),
                ));
            }
            v.clone()
        }
        None => default_initial_point(&set, d),
    };

    let evaluator = match (&synthetic, &dataset) {
        (Some((_, problem)), _) => Evaluator::Synthetic(problem),
        (_, Some((_, holdout))) => Evaluator::Dataset { holdout },
        _ => unreachable!(),
    };
    let plan = ReplicationPlan {
        methods: &config.methods,
        schedule,
        constant_step: config.schedule.constant_step,
        set: &set,
        omega0,
        d,
        n_steps: config.n_steps,
        checkpoints: &checkpoints,
        scalar,
    };

    // Ordered collection keeps aggregation independent of scheduling.
    let outcomes: Vec<RepOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|rep| match (&synthetic, &dataset) {
            (Some((spec, _)), _) => {
                run_replication(spec.replication_stream(rep), &plan, &evaluator)
            }
            (_, Some((train, _))) => {
                run_replication(train.iter().cloned(), &plan, &evaluator)
            }
            _ => unreachable!(),
        })
        .collect::<Result<Vec<_>>>()?;

    let aggregate = |select: &dyn Fn(&RepOutcome) -> &Vec<Vec<Option<f64>>>| {
        let mut cells = vec![vec![None; checkpoints.len()]; config.methods.len()];
        for (mi, row) in cells.iter_mut().enumerate() {
            for (ci, cell) in row.iter_mut().enumerate() {
                let values: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|rep| select(rep)[mi][ci])
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let stderr = if values.len() >= 2 {
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (n - 1.0);
                    (var / n).sqrt()
                } else {
                    0.0
                };
                *cell = Some(CellStats {
                    mean_error: mean,
                    stderr,
                    n_reps: values.len() as u64,
                });
            }
        }
        cells
    };

    let cells = aggregate(&|rep| &rep.primary);
    let aux_cells = aggregate(&|rep| &rep.aux);
    Ok(RunResult {
        methods: config.methods.clone(),
        checkpoints,
        cells,
        aux_label: evaluator.aux_label(),
        aux_cells,
        config: config.clone(),
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

/// Sidecar metadata written next to the results CSV; parses back into the
/// config it was produced from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: ExperimentConfig,
    pub checkpoints: Vec<u64>,
    pub aux_label: String,
    pub wall_time_ms: u64,
}

/// Writes the results CSV (`k,method,mean_error,stderr,n_reps`, rows sorted
/// by method then checkpoint), a companion CSV for the secondary metric, and
/// a JSON sidecar echoing the config. The CSV bytes are a pure function of
/// the aggregated result.
pub fn emit_results(result: &RunResult, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let render = |cells: &[Vec<Option<CellStats>>]| {
        let mut out = String::from("k,method,mean_error,stderr,n_reps\n");
        let mut order: Vec<usize> = (0..result.methods.len()).collect();
        order.sort_by_key(|&i| result.methods[i].name());
        for &mi in &order {
            let name = result.methods[mi].name();
            for (ci, k) in result.checkpoints.iter().enumerate() {
                match cells[mi][ci] {
                    Some(stats) => {
                        out.push_str(&format!(
                            "{k},{name},{},{},{}\n",
                            stats.mean_error, stats.stderr, stats.n_reps
                        ));
                    }
                    None => out.push_str(&format!("{k},{name},,,0\n")),
                }
            }
        }
        out
    };

    std::fs::write(path, render(&result.cells)).map_err(io_err)?;

    let aux_path = sibling_with_suffix(path, result.aux_label);
    std::fs::write(&aux_path, render(&result.aux_cells)).map_err(|source| Error::Io {
        path: aux_path.clone(),
        source,
    })?;

    let sidecar = Sidecar {
        config: result.config.clone(),
        checkpoints: result.checkpoints.clone(),
        aux_label: result.aux_label.to_string(),
        wall_time_ms: result.wall_time_ms,
    };
    let meta_path = meta_path(path);
    let file = std::fs::File::create(&meta_path).map_err(|source| Error::Io {
        path: meta_path.clone(),
        source,
    })?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &sidecar)?;
    writer.write_all(b"\n").map_err(|source| Error::Io {
        path: meta_path,
        source,
    })?;
    Ok(())
}

/// `results.csv` -> `results_<label>.csv`.
pub fn sibling_with_suffix(path: &Path, label: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".to_string());
    let ext = path
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    path.with_file_name(format!("{stem}_{label}.{ext}"))
}

/// `results.csv` -> `results.csv.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results.csv".to_string());
    name.push_str(".meta.json");
    path.with_file_name(name)
}
