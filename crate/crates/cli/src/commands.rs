//! Subcommand implementations. Argument structs live here next to the code
//! that consumes them; `main.rs` only dispatches.
//!
//! Output discipline: machine-readable results (JSON reports, summary lines)
//! go to standard output or `--out`; diagnostics go to standard error. No
//! terminal control sequences are emitted anywhere.

use std::fs;
use std::io::{self, Write as _};
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use dsrl_core::{
    count_thoughts, grad_alignment, load_checkpoint, logprob_gap, make_task, read_dataset,
    run_eval, run_training, sample_rollout, solved_status, taylor_residual, verify, write_dataset,
    Domain, EvalOptions, PolicyParams, RewardSpec, Stream, TaskInstance, TaskKind, TaylorCheck,
    TrainConfig, Vocabulary, MAX_EVAL_SAMPLES, TAYLOR_ETA_GRID,
};

use crate::config::{self, ConfigBuilder, CONFIG_FILE_NAME};
use crate::error::{CliError, CliResult};
use crate::rollouts::{self, RolloutLine};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Writes `text` to `out` when given, to standard output otherwise.
fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Runs `f` inside a dedicated worker pool. `workers == 0` uses all
/// processors. The worker count never affects results; every parallel
/// computation draws from per-cell counter streams and aggregates in index
/// order.
fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::runtime(format!("cannot build worker pool: {e}")))?;
    pool.install(f)
}

fn pretty(value: &impl serde::Serialize) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Deterministic instance generation shared by `eval`, `rollout`, and
/// `dataset`: instance `i` uses payload length `min + (i mod span)` and task
/// seed `task_seed + i`.
fn generated_tasks(
    vocab: &Vocabulary,
    kind_name: &str,
    min_len: Option<usize>,
    max_len: Option<usize>,
    count: usize,
    task_seed: u64,
) -> CliResult<Vec<TaskInstance>> {
    let kind = TaskKind::parse(kind_name).ok_or_else(|| {
        CliError::usage(format!(
            "unknown task kind \"{kind_name}\" (expected one of: last_token, copy, reverse, add_mod)"
        ))
    })?;
    let (lo, hi) = kind.length_bounds();
    let min = min_len.unwrap_or(lo);
    let max = max_len.unwrap_or(hi);
    if min < lo || max > hi || min > max {
        return Err(CliError::usage(format!(
            "length range {min}-{max} outside the legal {lo}-{hi} for task {}",
            kind.name()
        )));
    }
    if count == 0 {
        return Err(CliError::usage("instance count must be at least 1".to_string()));
    }
    let span = max - min + 1;
    (0..count)
        .map(|i| {
            make_task(vocab, kind, min + (i % span), task_seed + i as u64).map_err(Into::into)
        })
        .collect()
}

fn require_positive_temperature(t: f64) -> CliResult<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(format!("temperature must be positive, got {t}")))
    }
}

/// Loads a checkpoint, naming the path in the error.
fn load_checkpoint_at(path: &std::path::Path) -> CliResult<dsrl_core::Checkpoint> {
    load_checkpoint(path)
        .map_err(|e| CliError::runtime(format!("cannot load checkpoint {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` config file; `#` starts a comment. Run `dsrl keys`
    /// for the documented keys and defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. `--set clip_high=0.28`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Shorthand for `--set seed=<N>`.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,

    /// Shorthand for `--set workers=<N>`; 0 uses all processors. The worker
    /// count never changes results.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,

    /// Run directory; receives metrics.jsonl, checkpoints, and config.txt.
    #[arg(long, value_name = "DIR")]
    pub run_dir: PathBuf,

    /// Resume from a checkpoint written by an earlier run of the same config.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let cfg = resolve_train_config(args)?;
    fs::create_dir_all(&args.run_dir).map_err(|e| {
        CliError::runtime(format!("cannot create run directory {}: {e}", args.run_dir.display()))
    })?;
    fs::write(args.run_dir.join(CONFIG_FILE_NAME), config::effective_text(&cfg))?;
    let summary = run_training(&cfg, &args.run_dir, args.resume.as_deref())?;
    let line = json!({
        "steps_completed": summary.steps_completed,
        "final_mean_reward": summary.final_mean_reward,
        "metrics": summary.metrics_path.display().to_string(),
        "final_checkpoint": summary.final_checkpoint.display().to_string(),
        "reincarnation_checkpoint": summary
            .reincarnation_checkpoint
            .as_ref()
            .map(|p| p.display().to_string()),
    });
    println!("{line}");
    Ok(())
}

fn resolve_train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut builder = ConfigBuilder::new();
    if let Some(path) = &args.config {
        builder.apply_file(path)?;
    }
    for spec in &args.set {
        builder.set_override(spec)?;
    }
    if let Some(seed) = args.seed {
        builder.set("seed", &seed.to_string())?;
    }
    if let Some(workers) = args.workers {
        builder.set("workers", &workers.to_string())?;
    }
    builder.resolve()
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Policy checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Task family for generated instances: last_token, copy, reverse, add_mod.
    #[arg(long, default_value = "last_token", value_name = "KIND")]
    pub task: String,

    /// Minimum payload length (default: the family's lower bound).
    #[arg(long, value_name = "N")]
    pub min_len: Option<usize>,

    /// Maximum payload length (default: the family's upper bound).
    #[arg(long, value_name = "N")]
    pub max_len: Option<usize>,

    /// Number of generated task instances.
    #[arg(long, default_value_t = 8, value_name = "N")]
    pub instances: usize,

    /// Base seed for instance generation; instance i uses task_seed + i.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub task_seed: u64,

    /// Evaluate instances from this dataset JSONL instead of generating them.
    #[arg(long, value_name = "FILE")]
    pub tasks_file: Option<PathBuf>,

    /// Samples drawn per instance (n).
    #[arg(long, default_value_t = 64, value_name = "N")]
    pub n: usize,

    /// Comma-separated K values reported for Pass@K and Avg@K.
    #[arg(long, default_value = "1,8,64", value_name = "LIST")]
    pub ks: String,

    /// Sampling temperature.
    #[arg(long, default_value_t = 1.0, value_name = "T")]
    pub temperature: f64,

    /// Maximum response tokens per sample.
    #[arg(long, default_value_t = 16, value_name = "N")]
    pub max_response: usize,

    /// Sampling seed; the full report is a pure function of it.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub seed: u64,

    /// Worker threads (0 = all processors); never changes results.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub workers: usize,

    /// Write the JSON report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let ks = parse_usize_list("--ks", &args.ks)?;
    if args.n == 0 || args.n > MAX_EVAL_SAMPLES {
        return Err(CliError::usage(format!(
            "n must be between 1 and {MAX_EVAL_SAMPLES}, got {}",
            args.n
        )));
    }
    for &k in &ks {
        if k == 0 {
            return Err(CliError::usage("K values must be at least 1".to_string()));
        }
        if k > args.n {
            return Err(CliError::usage(format!("K = {k} exceeds n = {}", args.n)));
        }
    }
    require_positive_temperature(args.temperature)?;
    if args.max_response == 0 {
        return Err(CliError::usage("max_response must be at least 1".to_string()));
    }

    let checkpoint = load_checkpoint_at(&args.checkpoint)?;
    let vocab = Vocabulary::default_small();
    let tasks = match &args.tasks_file {
        Some(path) => read_dataset(path, &vocab)?,
        None => generated_tasks(
            &vocab,
            &args.task,
            args.min_len,
            args.max_len,
            args.instances,
            args.task_seed,
        )?,
    };
    let opts = EvalOptions {
        n: args.n,
        ks,
        temperature: args.temperature,
        max_response: args.max_response,
        seed: args.seed,
    };
    let result = with_pool(args.workers, || {
        run_eval(&checkpoint.params, &vocab, &tasks, &opts).map_err(Into::into)
    })?;
    emit(&args.out, &pretty(&result)?)
}

fn parse_usize_list(flag: &str, text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim().parse::<usize>().map_err(|_| {
                CliError::usage(format!("{flag}: expected comma-separated integers, got \"{text}\""))
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Policy checkpoint to sample from.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Task family: last_token, copy, reverse, add_mod.
    #[arg(long, default_value = "last_token", value_name = "KIND")]
    pub task: String,

    /// Minimum payload length (default: the family's lower bound).
    #[arg(long, value_name = "N")]
    pub min_len: Option<usize>,

    /// Maximum payload length (default: the family's upper bound).
    #[arg(long, value_name = "N")]
    pub max_len: Option<usize>,

    /// Number of prompt groups to sample.
    #[arg(long, default_value_t = 8, value_name = "N")]
    pub groups: usize,

    /// Rollouts per group.
    #[arg(long, default_value_t = 8, value_name = "N")]
    pub group_size: usize,

    /// Sampling temperature.
    #[arg(long, default_value_t = 1.0, value_name = "T")]
    pub temperature: f64,

    /// Maximum response tokens per rollout.
    #[arg(long, default_value_t = 16, value_name = "N")]
    pub max_response: usize,

    /// Seed for both task generation and sampling.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub seed: u64,

    /// Reward recorded for verified responses.
    #[arg(long, default_value_t = 1.0, value_name = "R")]
    pub reward_success: f64,

    /// Reward recorded for failed responses.
    #[arg(long, default_value_t = 0.0, value_name = "R")]
    pub reward_failure: f64,

    /// Worker threads (0 = all processors); never changes results.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub workers: usize,

    /// Output rollouts JSONL path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

pub fn cmd_rollout(args: &RolloutArgs) -> CliResult<()> {
    if args.groups == 0 || args.group_size == 0 {
        return Err(CliError::usage("groups and group_size must be at least 1".to_string()));
    }
    require_positive_temperature(args.temperature)?;
    if args.max_response == 0 {
        return Err(CliError::usage("max_response must be at least 1".to_string()));
    }
    let spec = RewardSpec::new(args.reward_success, args.reward_failure)
        .map_err(|e| CliError::usage(e.to_string()))?;

    let checkpoint = load_checkpoint_at(&args.checkpoint)?;
    let vocab = Vocabulary::default_small();
    let tasks = generated_tasks(&vocab, &args.task, args.min_len, args.max_len, args.groups, args.seed)?;

    let cells: Vec<(u64, u64)> = (0..args.groups as u64)
        .flat_map(|g| (0..args.group_size as u64).map(move |r| (g, r)))
        .collect();
    let params = &checkpoint.params;
    let lines: Vec<RolloutLine> = with_pool(args.workers, || {
        cells
            .par_iter()
            .map(|&(g, r)| {
                let task = &tasks[g as usize];
                // Step slot 0 is never used by training (steps are 1-based),
                // so these streams cannot collide with a run's draws.
                let mut rng = Stream::keyed(Domain::Rollout, &[args.seed, 0, g, r]);
                let rollout = sample_rollout(
                    params,
                    &vocab,
                    task,
                    args.temperature,
                    args.max_response,
                    &mut rng,
                )?;
                Ok(RolloutLine {
                    group: g,
                    task: task.clone(),
                    response: rollout.response.clone(),
                    reward: spec.reward(verify(&vocab, task, &rollout.response)),
                })
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let text = rollouts::render_rollouts(&lines)?;
    fs::write(&args.out, &text)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!(
        "{}",
        json!({
            "groups": args.groups,
            "rollouts": lines.len(),
            "path": args.out.display().to_string(),
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Task family: last_token, copy, reverse, add_mod.
    #[arg(long, default_value = "last_token", value_name = "KIND")]
    pub task: String,

    /// Minimum payload length (default: the family's lower bound).
    #[arg(long, value_name = "N")]
    pub min_len: Option<usize>,

    /// Maximum payload length (default: the family's upper bound).
    #[arg(long, value_name = "N")]
    pub max_len: Option<usize>,

    /// Number of instances to generate.
    #[arg(long, default_value_t = 16, value_name = "N")]
    pub count: usize,

    /// Base seed; instance i uses seed + i.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub seed: u64,

    /// Output dataset JSONL path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

pub fn cmd_dataset(args: &DatasetArgs) -> CliResult<()> {
    let vocab = Vocabulary::default_small();
    let tasks = generated_tasks(&vocab, &args.task, args.min_len, args.max_len, args.count, args.seed)?;
    write_dataset(&args.out, &tasks)?;
    println!(
        "{}",
        json!({
            "instances": tasks.len(),
            "path": args.out.display().to_string(),
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Analysis kind: grads, gap, taylor, thoughts, or solved.
    #[arg(value_name = "KIND")]
    pub kind: String,

    /// Policy checkpoint (required by grads, gap, taylor).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,

    /// Rollouts JSONL from `dsrl rollout` (grads, gap, taylor, solved).
    #[arg(long, value_name = "FILE")]
    pub rollouts: Option<PathBuf>,

    /// Plain-text reasoning trace, steps separated by blank lines (thoughts).
    #[arg(long, value_name = "FILE")]
    pub text: Option<PathBuf>,

    /// Comma-separated step sizes for taylor (default: the built-in grid).
    #[arg(long, value_name = "LIST")]
    pub etas: Option<String>,

    /// Reward a verified response was recorded with (solved).
    #[arg(long, default_value_t = 1.0, value_name = "R")]
    pub reward_success: f64,

    /// Reward a failed response was recorded with (solved).
    #[arg(long, default_value_t = 0.0, value_name = "R")]
    pub reward_failure: f64,

    /// Worker threads (0 = all processors); never changes results.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub workers: usize,

    /// Write the JSON report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    match args.kind.as_str() {
        "grads" => {
            let (params, samples) = checkpoint_and_samples(args)?;
            let stats =
                with_pool(args.workers, || grad_alignment(&params, &samples).map_err(Into::into))?;
            emit(&args.out, &pretty(&stats)?)
        }
        "gap" => {
            let (params, samples) = checkpoint_and_samples(args)?;
            let report =
                with_pool(args.workers, || logprob_gap(&params, &samples).map_err(Into::into))?;
            emit(&args.out, &pretty(&report)?)
        }
        "taylor" => {
            let etas = match &args.etas {
                None => TAYLOR_ETA_GRID.to_vec(),
                Some(list) => parse_eta_list(list)?,
            };
            let (params, samples) = checkpoint_and_samples(args)?;
            let mut rows = Vec::new();
            for &eta in &etas {
                let checks: Vec<TaylorCheck> = with_pool(args.workers, || {
                    samples
                        .par_iter()
                        .map(|s| taylor_residual(&params, s, eta).map_err(Into::into))
                        .collect::<CliResult<Vec<_>>>()
                })?;
                let n = checks.len() as f64;
                rows.push(json!({
                    "eta": eta,
                    "samples": checks.len(),
                    "mean_predicted": checks.iter().map(|c| c.predicted).sum::<f64>() / n,
                    "mean_actual": checks.iter().map(|c| c.actual).sum::<f64>() / n,
                    "mean_abs_residual": checks.iter().map(|c| c.residual.abs()).sum::<f64>() / n,
                }));
            }
            emit(&args.out, &pretty(&json!({ "rows": rows }))?)
        }
        "thoughts" => {
            let path = args.text.as_ref().ok_or_else(|| {
                CliError::usage("analyze thoughts requires --text <FILE>".to_string())
            })?;
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::runtime(format!("cannot read text file {}: {e}", path.display()))
            })?;
            emit(&args.out, &pretty(&count_thoughts(&text))?)
        }
        "solved" => {
            let spec = RewardSpec::new(args.reward_success, args.reward_failure)
                .map_err(|e| CliError::usage(e.to_string()))?;
            let path = args.rollouts.as_ref().ok_or_else(|| {
                CliError::usage("analyze solved requires --rollouts <FILE>".to_string())
            })?;
            let vocab = Vocabulary::default_small();
            let lines = rollouts::read_rollouts(path, &vocab)?;
            let groups = rollouts::to_groups(&lines)?;
            emit(&args.out, &pretty(&solved_status(&groups, &spec))?)
        }
        other => Err(CliError::usage(format!(
            "unknown analyze kind \"{other}\" (expected one of: grads, gap, taylor, thoughts, solved)"
        ))),
    }
}

/// Loads the checkpoint in 64-bit precision together with the rollout
/// samples; shared by the gradient-based analyses.
fn checkpoint_and_samples(
    args: &AnalyzeArgs,
) -> CliResult<(PolicyParams<f64>, Vec<dsrl_core::ResponseSample>)> {
    let ckpt_path = args.checkpoint.as_ref().ok_or_else(|| {
        CliError::usage(format!("analyze {} requires --checkpoint <FILE>", args.kind))
    })?;
    let rollouts_path = args.rollouts.as_ref().ok_or_else(|| {
        CliError::usage(format!("analyze {} requires --rollouts <FILE>", args.kind))
    })?;
    let checkpoint = load_checkpoint_at(ckpt_path)?;
    let vocab = Vocabulary::default_small();
    let lines = rollouts::read_rollouts(rollouts_path, &vocab)?;
    Ok((checkpoint.params.convert::<f64>(), rollouts::to_samples(&lines)))
}

fn parse_eta_list(text: &str) -> CliResult<Vec<f64>> {
    let etas: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| {
                CliError::usage(format!("--etas: expected comma-separated numbers, got \"{text}\""))
            })
        })
        .collect::<CliResult<_>>()?;
    for &eta in &etas {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(CliError::usage(format!("--etas: step sizes must be positive, got {eta}")));
        }
    }
    if etas.is_empty() {
        return Err(CliError::usage("--etas: at least one step size required".to_string()));
    }
    Ok(etas)
}
