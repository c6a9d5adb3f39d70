//! CLI front end: run experiments from a JSON config with dotted-key
//! overrides, inspect dataset ingestion, and execute the theory checks.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use streamls::bounds::{
    self, averaged_excess_risk_bound, check_contraction_sum_bound, contraction_sum_bound_exact,
    gradient_second_moment_bound, MomentEstimates,
};
use streamls::data::{load_csv, DatasetConfig, SyntheticSpec};
use streamls::harness::{
    emit_results, meta_path, run_experiment, sibling_with_suffix, CheckpointSpec, ConstraintSpec,
    ExperimentConfig, MethodSpec, ProblemSpec, RunResult, ScheduleConfig, ScheduleKindSpec,
};
use streamls::schedule::step_inequality_violation;
use streamls::types::Vector;

#[derive(Debug, Parser)]
#[command(
    name = "streamls",
    about = "Streaming least-squares regression experiments",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a JSON config and write the results
    /// CSV, a secondary-metric CSV, and a metadata sidecar.
    Run(RunArgs),
    /// Verify the schedule and averaging inequalities numerically and sweep
    /// the finite-sample bound against a fast simulation.
    CheckTheory(CheckTheoryArgs),
    /// Load a dataset config and report what ingestion produced.
    IngestInfo(IngestArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-key override, e.g. --set replications=10 or
    /// --set schedule.gamma=3. Repeatable; values parse as JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Cap on parallel replication workers (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckTheoryArgs {
    /// Gammas for the step-inequality scan (default 2, 2.5, 3, 10).
    #[arg(long = "gamma", value_name = "G")]
    pub gammas: Vec<f64>,
    /// Largest k for the step-inequality scan.
    #[arg(long, default_value_t = 10_000)]
    pub kmax: u64,
    /// Permit gammas below 2 in the scan (they are expected to fail and the
    /// first violating k is reported).
    #[arg(long)]
    pub allow_invalid: bool,
    /// Gammas for the contraction-sum scan (default 1, 2).
    #[arg(long = "contraction-gamma", value_name = "G")]
    pub contraction_gammas: Vec<f64>,
    /// Largest k for the floating-point contraction-sum scan.
    #[arg(long, default_value_t = 200)]
    pub contraction_k: u64,
    /// Largest k for the exact-rational contraction-sum cross-check
    /// (integer gammas only).
    #[arg(long, default_value_t = 50)]
    pub exact_k: u64,
    /// Replications for the bound-dominance sweep; 0 skips the sweep.
    #[arg(long, default_value_t = 30)]
    pub dominance_reps: u64,
    /// Steps for the bound-dominance sweep.
    #[arg(long, default_value_t = 2_000)]
    pub dominance_steps: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Experiment config with a dataset problem, or a bare dataset config.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-key override applied before parsing.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::CheckTheory(args) => check_theory(args),
        Command::IngestInfo(args) => ingest_info(args),
    }
}

/// Reads a JSON file and applies `--set` overrides onto the value tree.
fn load_json_with_overrides(path: &Path, sets: &[String]) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    for set in sets {
        apply_override(&mut value, set)?;
    }
    Ok(value)
}

/// Applies one `key.path=value` override. Every segment must resolve to an
/// existing object so a key maps to exactly one config field; the final
/// segment is set to the JSON-parsed value (string fallback).
pub fn apply_override(root: &mut Value, set: &str) -> Result<()> {
    let (key, raw_value) = set
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{set}` must have the form key=value"))?;
    let parsed: Value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| Value::String(raw_value.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = key.split('.').collect();
    for (idx, segment) in segments.iter().enumerate() {
        let object = cursor
            .as_object_mut()
            .ok_or_else(|| anyhow!("override key `{key}`: `{}` is not an object", segments[..idx].join(".")))?;
        if idx == segments.len() - 1 {
            object.insert(segment.to_string(), parsed);
            return Ok(());
        }
        cursor = object
            .get_mut(*segment)
            .ok_or_else(|| anyhow!("override key `{key}`: unknown section `{segment}`"))?;
    }
    unreachable!("split never yields zero segments")
}

fn load_experiment_config(path: &Path, sets: &[String]) -> Result<ExperimentConfig> {
    let value = load_json_with_overrides(path, sets)?;
    let config: ExperimentConfig = serde_json::from_value(value)
        .with_context(|| format!("invalid experiment config {}", path.display()))?;
    Ok(config)
}

fn run(args: RunArgs) -> Result<i32> {
    let config = load_experiment_config(&args.config, &args.sets)?;
    let result = match args.workers {
        Some(workers) => {
            if workers == 0 {
                bail!("--workers must be >= 1");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .context("cannot build worker pool")?
                .install(|| run_experiment(&config))?
        }
        None => run_experiment(&config)?,
    };
    emit_results(&result, &config.output_path)?;
    println!(
        "wrote {} (+ {}, {})",
        config.output_path.display(),
        sibling_with_suffix(&config.output_path, result.aux_label).display(),
        meta_path(&config.output_path).display()
    );
    print_summary(&result);
    Ok(0)
}

fn print_summary(result: &RunResult) {
    let Some(&final_k) = result.checkpoints.last() else {
        println!("no checkpoints configured; nothing to summarize");
        return;
    };
    println!("final checkpoint k = {final_k} ({} replications)", result.config.replications);
    println!("{:<10} {:>14} {:>14} {:>7}", "method", "mean_error", "stderr", "n_reps");
    let last = result.checkpoints.len() - 1;
    for (mi, method) in result.methods.iter().enumerate() {
        match result.cells[mi][last] {
            Some(stats) => println!(
                "{:<10} {:>14.6e} {:>14.6e} {:>7}",
                method.name(),
                stats.mean_error,
                stats.stderr,
                stats.n_reps
            ),
            None => println!("{:<10} {:>14} {:>14} {:>7}", method.name(), "-", "-", 0),
        }
    }
    if result.method_index(MethodSpec::Erm).is_some() {
        let erm = result
            .mean_errors(MethodSpec::Erm)
            .expect("erm index checked");
        let tail = result.config.tail_fraction;
        for method in &result.methods {
            if *method == MethodSpec::Erm {
                continue;
            }
            let Some(errors) = result.mean_errors(*method) else {
                continue;
            };
            let Some(errors) = errors.into_iter().collect::<Option<Vec<f64>>>() else {
                println!("ratio {} / erm: unavailable (missing cells)", method.name());
                continue;
            };
            match bounds::erm_error_ratio(&errors, &erm, tail) {
                Ok(rho) => println!(
                    "ratio {} / erm over last {:.0}% of checkpoints: {rho:.4}",
                    method.name(),
                    tail * 100.0
                ),
                Err(err) => println!("ratio {} / erm: unavailable ({err})", method.name()),
            }
        }
    }
}

struct CheckLine {
    passed: Option<bool>, // None = skipped
    text: String,
}

fn check_theory(args: CheckTheoryArgs) -> Result<i32> {
    let mut lines: Vec<CheckLine> = Vec::new();

    let gammas = if args.gammas.is_empty() {
        vec![2.0, 2.5, 3.0, 10.0]
    } else {
        args.gammas.clone()
    };
    for &gamma in &gammas {
        if gamma < 2.0 && !args.allow_invalid {
            bail!(
                "gamma = {gamma} is below the step-inequality precondition (>= 2); \
                 pass --allow-invalid to scan it anyway"
            );
        }
        let line = match step_inequality_violation(gamma, args.kmax) {
            None => CheckLine {
                passed: Some(true),
                text: format!(
                    "step-inequality gamma={gamma} k<={}: alpha_k^2 >= 1/S_k everywhere",
                    args.kmax
                ),
            },
            Some(k) => CheckLine {
                passed: Some(false),
                text: format!(
                    "step-inequality gamma={gamma} k<={}: first violation at k={k}",
                    args.kmax
                ),
            },
        };
        lines.push(line);
    }

    let contraction_gammas = if args.contraction_gammas.is_empty() {
        vec![1.0, 2.0]
    } else {
        args.contraction_gammas.clone()
    };
    for &gamma in &contraction_gammas {
        let ok = check_contraction_sum_bound(gamma, args.contraction_k)?;
        lines.push(CheckLine {
            passed: Some(ok),
            text: format!(
                "contraction-sum gamma={gamma} k={}: float scan",
                args.contraction_k
            ),
        });
        if gamma.fract() == 0.0 && gamma >= 1.0 {
            let ok = contraction_sum_bound_exact(gamma as i64, 1, args.exact_k)?;
            lines.push(CheckLine {
                passed: Some(ok),
                text: format!(
                    "contraction-sum-exact gamma={gamma} k={}: rational arithmetic",
                    args.exact_k
                ),
            });
        } else {
            lines.push(CheckLine {
                passed: None,
                text: format!("contraction-sum-exact gamma={gamma}: non-integer gamma"),
            });
        }
    }

    if args.dominance_reps == 0 {
        lines.push(CheckLine {
            passed: None,
            text: "bound-dominance: disabled (--dominance-reps 0)".into(),
        });
    } else {
        lines.push(dominance_sweep(args.dominance_reps, args.dominance_steps)?);
    }

    let mut all_passed = true;
    for line in &lines {
        match line.passed {
            Some(true) => println!("PASS {}", line.text),
            Some(false) => {
                println!("FAIL {}", line.text);
                all_passed = false;
            }
            None => println!("SKIP {}", line.text),
        }
    }
    Ok(if all_passed { 0 } else { 1 })
}

/// Fast simulation sweep: the finite-sample bound for the weighted average
/// must dominate the simulated mean excess risk at every checkpoint.
fn dominance_sweep(replications: u64, n_steps: u64) -> Result<CheckLine> {
    let d = 10;
    let gamma = 3.0;
    let mu = 1.0;
    let sigma2 = 0.5;
    let half_width = 50.0;
    let spec = SyntheticSpec {
        d,
        omega_star: Vector::new((1..=d).map(|i| i as f64).collect())
            .expect("static omega_star"),
        sigma2,
        covariance: Default::default(),
        seed: 0,
    };
    let config = ExperimentConfig {
        problem: ProblemSpec::Synthetic(spec.clone()),
        constraint: ConstraintSpec::BoxAroundSolution { half_width },
        methods: vec![MethodSpec::PsgdWa],
        schedule: ScheduleConfig {
            gamma,
            mu: Some(mu),
            kind: ScheduleKindSpec::Constrained,
            constant_step: 0.002,
        },
        n_steps,
        checkpoints: CheckpointSpec::LogSpaced(10),
        replications,
        base_seed: 2024,
        output_path: PathBuf::from("unused.csv"),
        omega0: None,
        tail_fraction: 0.2,
    };
    let result = run_experiment(&config)?;
    let moments = MomentEstimates::analytic(&spec)?;
    let e_max = d as f64 * half_width * half_width;
    let c2 = gradient_second_moment_bound(e_max, d, &moments, sigma2)?;
    let mut worst_margin = f64::INFINITY;
    let mut violated_at = None;
    for (ci, &k) in result.checkpoints.iter().enumerate() {
        let mean = result.cells[0][ci].expect("PSGD-WA always evaluates").mean_error;
        let bound = averaged_excess_risk_bound(k, gamma, mu, &moments, c2, sigma2);
        let margin = bound / mean;
        if mean > bound {
            violated_at = Some(k);
        }
        if margin < worst_margin {
            worst_margin = margin;
        }
    }
    Ok(match violated_at {
        None => CheckLine {
            passed: Some(true),
            text: format!(
                "bound-dominance d={d} gamma={gamma} sigma2={sigma2} reps={replications} \
                 k<={n_steps}: bound/sim >= {worst_margin:.2} at every checkpoint"
            ),
        },
        Some(k) => CheckLine {
            passed: Some(false),
            text: format!("bound-dominance: simulated mean exceeds the bound at k={k}"),
        },
    })
}

fn ingest_info(args: IngestArgs) -> Result<i32> {
    let value = load_json_with_overrides(&args.config, &args.sets)?;

    // Accept either a full experiment config with a dataset problem or a
    // bare dataset config.
    let dataset: DatasetConfig =
        match serde_json::from_value::<ExperimentConfig>(value.clone()) {
            Ok(config) => match config.problem {
                ProblemSpec::Dataset(d) => d,
                ProblemSpec::Synthetic(_) => bail!(
                    "ingest-info requires a dataset problem; {} configures a synthetic one",
                    args.config.display()
                ),
            },
            Err(_) => serde_json::from_value(value).with_context(|| {
                format!(
                    "{} is neither an experiment config nor a dataset config",
                    args.config.display()
                )
            })?,
        };

    let (train, holdout) = load_csv(&dataset)?;
    let all = train.iter().chain(&holdout);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut y_sum = 0.0;
    let mut n = 0usize;
    for s in all {
        y_min = y_min.min(s.y);
        y_max = y_max.max(s.y);
        y_sum += s.y;
        n += 1;
    }
    println!("dataset: {}", dataset.path.display());
    println!("rows: {n} (train {}, holdout {})", train.len(), holdout.len());
    println!("features per row: {}", dataset.n_features);
    match &dataset.target_range {
        Some(range) => println!(
            "target (normalized from [{}, {}]): min {y_min}, max {y_max}, mean {:.6}",
            range.lo,
            range.hi,
            y_sum / n as f64
        ),
        None => println!(
            "target: min {y_min}, max {y_max}, mean {:.6}",
            y_sum / n as f64
        ),
    }
    Ok(0)
}
