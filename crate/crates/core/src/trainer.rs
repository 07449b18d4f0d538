//! Training loop: sample rollout groups for a batch of generated tasks,
//! reward and score them, apply one objective update, log metrics, and
//! checkpoint.
//!
//! Every random draw comes from a counter stream keyed by (master seed, step,
//! prompt slot, rollout slot), so a run is bitwise reproducible for a fixed
//! configuration and seed, independent of the worker count.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::model::{
    load_checkpoint, sample_rollout, save_checkpoint, Architecture, OptimizerSnapshot,
    PolicyParams,
};
use crate::objective::{
    assemble_loss, compute_advantages, Estimator, LengthNormalizer, ObjectiveConfig, Rollout,
    RolloutGroup, SampleGate, Space,
};
use crate::rng::{Domain, Stream};
use crate::schedule::{objective_for_step, phase_label, PhaseState};
use crate::task::{make_task, verify, RewardSpec, TaskInstance, TaskKind};
use crate::vocab::Vocabulary;

/// Named objective presets. Most map to a fixed (estimator, space, gate)
/// triple; `Dsrl` switches from (pre-train, negative-gate) to (post-train,
/// ungated) after `dsrl_threshold` steps, with a one-time optimizer reset at
/// the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Grpo,
    DrGrpo,
    Rloo,
    DapoClipHigher,
    Prerl,
    PsrPrerl,
    NsrPrerl,
    PsrRl,
    NsrRl,
    Dsrl,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::Grpo,
        Mode::DrGrpo,
        Mode::Rloo,
        Mode::DapoClipHigher,
        Mode::Prerl,
        Mode::PsrPrerl,
        Mode::NsrPrerl,
        Mode::PsrRl,
        Mode::NsrRl,
        Mode::Dsrl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Grpo => "grpo",
            Mode::DrGrpo => "dr_grpo",
            Mode::Rloo => "rloo",
            Mode::DapoClipHigher => "dapo_clip_higher",
            Mode::Prerl => "prerl",
            Mode::PsrPrerl => "psr_prerl",
            Mode::NsrPrerl => "nsr_prerl",
            Mode::PsrRl => "psr_rl",
            Mode::NsrRl => "nsr_rl",
            Mode::Dsrl => "dsrl",
        }
    }

    pub fn parse(name: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == name)
    }

    /// The upper clip width this mode uses when none is given explicitly:
    /// 0.28 for the clip-higher preset, 0.2 otherwise.
    pub fn default_clip_high(self) -> f64 {
        if self == Mode::DapoClipHigher {
            0.28
        } else {
            0.2
        }
    }

    fn fixed_settings(self) -> (Estimator, Space, SampleGate, LengthNormalizer) {
        use {Estimator as E, LengthNormalizer as N, SampleGate as G, Space as S};
        match self {
            Mode::Grpo => (E::Grpo, S::PostTrain, G::All, N::TokenTotal),
            Mode::DrGrpo => (E::DrGrpo, S::PostTrain, G::All, N::ConstMaxLen),
            Mode::Rloo => (E::Rloo, S::PostTrain, G::All, N::TokenTotal),
            Mode::DapoClipHigher => (E::Grpo, S::PostTrain, G::All, N::TokenTotal),
            Mode::Prerl => (E::Grpo, S::PreTrain, G::All, N::TokenTotal),
            Mode::PsrPrerl => (E::Grpo, S::PreTrain, G::PsrOnly, N::TokenTotal),
            Mode::NsrPrerl => (E::Grpo, S::PreTrain, G::NsrOnly, N::TokenTotal),
            Mode::PsrRl => (E::Grpo, S::PostTrain, G::PsrOnly, N::TokenTotal),
            Mode::NsrRl => (E::Grpo, S::PostTrain, G::NsrOnly, N::TokenTotal),
            // Base settings for the scheduled mode; the per-step space and
            // gate come from the schedule.
            Mode::Dsrl => (E::Grpo, S::PostTrain, G::All, N::TokenTotal),
        }
    }
}

/// One task family in the training mix, with a sampling weight and an
/// inclusive payload-length range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMixEntry {
    pub kind: TaskKind,
    pub weight: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl TaskMixEntry {
    pub fn new(kind: TaskKind, weight: f64, min_len: usize, max_len: usize) -> Result<Self> {
        let entry = TaskMixEntry { kind, weight, min_len, max_len };
        entry.validate()?;
        Ok(entry)
    }

    /// The full legal length range of `kind`, weight 1.
    pub fn uniform(kind: TaskKind) -> Self {
        let (lo, hi) = kind.length_bounds();
        TaskMixEntry { kind, weight: 1.0, min_len: lo, max_len: hi }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "task weight must be positive and finite, got {}",
                self.weight
            )));
        }
        let (lo, hi) = self.kind.length_bounds();
        if self.min_len > self.max_len || self.min_len < lo || self.max_len > hi {
            return Err(Error::InvalidConfig(format!(
                "length range {}..={} invalid for task {} (legal {lo}..={hi})",
                self.min_len,
                self.max_len,
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Longest prompt this entry can generate (payload plus framing tokens).
    fn max_prompt_len(&self) -> usize {
        self.max_len + 2
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    pub arch: Architecture,
    pub tasks: Vec<TaskMixEntry>,
    /// Prompts per step (B).
    pub prompt_batch: usize,
    /// Rollouts per prompt (G).
    pub group_size: usize,
    pub temperature: f64,
    pub max_response: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub total_steps: u64,
    /// Last step of the first phase in `Dsrl` mode (S).
    pub dsrl_threshold: u64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_beta: f64,
    pub seed: u64,
    /// Periodic checkpoint spacing in steps; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Rayon worker threads; 0 picks the runtime default. Results are
    /// bitwise identical for every value.
    pub workers: usize,
    pub reward_spec: RewardSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Grpo,
            arch: Architecture::default_desk(),
            tasks: vec![TaskMixEntry {
                kind: TaskKind::LastToken,
                weight: 1.0,
                min_len: 1,
                max_len: 4,
            }],
            prompt_batch: 16,
            group_size: 8,
            temperature: 1.0,
            max_response: 16,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            total_steps: 2000,
            dsrl_threshold: 20,
            clip_low: 0.2,
            clip_high: 0.2,
            kl_beta: 0.0,
            seed: 42,
            checkpoint_interval: 100,
            workers: 0,
            reward_spec: RewardSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults with `mode` set and the mode's preferred upper clip width.
    pub fn for_mode(mode: Mode) -> Self {
        TrainConfig { mode, clip_high: mode.default_clip_high(), ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.prompt_batch < 1 {
            return Err(Error::InvalidConfig("prompt_batch must be at least 1".into()));
        }
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("group_size must be at least 2".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.total_steps < 1 {
            return Err(Error::InvalidConfig("total_steps must be at least 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("task mix must not be empty".into()));
        }
        for entry in &self.tasks {
            entry.validate()?;
            let needed = entry.max_prompt_len() + self.max_response - 1;
            if needed > self.arch.max_context {
                return Err(Error::InvalidConfig(format!(
                    "task {} length {} plus max_response {} needs context {needed}, model has {}",
                    entry.kind.name(),
                    entry.max_len,
                    self.max_response,
                    self.arch.max_context
                )));
            }
        }
        self.base_objective().validate()?;
        Ok(())
    }

    /// The mode's objective before any per-step scheduling.
    pub fn base_objective(&self) -> ObjectiveConfig {
        let (estimator, space, gate, normalizer) = self.mode.fixed_settings();
        ObjectiveConfig {
            estimator,
            clip_low: self.clip_low,
            clip_high: self.clip_high,
            kl_beta: self.kl_beta,
            space,
            gate,
            normalizer,
            max_response: self.max_response,
        }
    }
}

/// One metrics line per training step (serialized as JSONL).
/// `wall_ms` is informational and never serialized, keeping metrics files
/// byte-identical across reruns of the same configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub phase: String,
    pub mean_reward: f64,
    pub mean_response_length: f64,
    pub mean_top1_logprob: f64,
    pub frac_adv_pos: f64,
    pub frac_adv_neg: f64,
    pub groups_skipped: u64,
    pub fully_solved: u64,
    pub fully_unsolved: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub seed: u64,
    #[serde(skip)]
    pub wall_ms: f64,
}

/// Incremental training driver. Steps are 1-based; `completed_steps` counts
/// how many have finished.
pub struct Trainer {
    cfg: TrainConfig,
    base_objective: ObjectiveConfig,
    vocab: Vocabulary,
    params: PolicyParams<f32>,
    adam: Adam<f32>,
    kl_ref: Option<PolicyParams<f32>>,
    phase: PhaseState,
    completed: u64,
    pool: rayon::ThreadPool,
    run_dir: Option<PathBuf>,
    reincarnation_checkpoint: Option<PathBuf>,
}

impl Trainer {
    /// Fresh run: parameters initialized from the master seed.
    pub fn new(cfg: TrainConfig, run_dir: Option<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let params = PolicyParams::init(cfg.arch, cfg.seed)?;
        Self::from_parts(cfg, run_dir, params, None, 0)
    }

    /// Continue from a checkpoint: parameters, optimizer moments, and the
    /// step counter all carry over.
    pub fn resume(cfg: TrainConfig, run_dir: Option<PathBuf>, checkpoint: &Path) -> Result<Self> {
        cfg.validate()?;
        let ck = load_checkpoint(checkpoint)?;
        ck.expect_arch(&cfg.arch)?;
        let completed = ck.trainer_step.unwrap_or(0);
        Self::from_parts(cfg, run_dir, ck.params, ck.optimizer, completed)
    }

    fn from_parts(
        cfg: TrainConfig,
        run_dir: Option<PathBuf>,
        params: PolicyParams<f32>,
        optimizer: Option<OptimizerSnapshot>,
        completed: u64,
    ) -> Result<Self> {
        let adam = match optimizer {
            Some(snap) => {
                if snap.first_moment.len() != params.param_count() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer snapshot sized for {} parameters, model has {}",
                        snap.first_moment.len(),
                        params.param_count()
                    )));
                }
                Adam::from_snapshot(&snap, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)?
            }
            None => Adam::new(params.param_count(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)?,
        };
        let kl_ref = (cfg.kl_beta > 0.0).then(|| params.clone());
        let phase = PhaseState::resumed(cfg.dsrl_threshold, completed);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        let base_objective = cfg.base_objective();
        Ok(Trainer {
            cfg,
            base_objective,
            vocab: Vocabulary::default_small(),
            params,
            adam,
            kl_ref,
            phase,
            completed,
            pool,
            run_dir,
            reincarnation_checkpoint: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &PolicyParams<f32> {
        &self.params
    }

    pub fn optimizer(&self) -> &Adam<f32> {
        &self.adam
    }

    pub fn phase(&self) -> PhaseState {
        self.phase
    }

    pub fn completed_steps(&self) -> u64 {
        self.completed
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Path of the phase-transition checkpoint, once written.
    pub fn reincarnation_checkpoint(&self) -> Option<&Path> {
        self.reincarnation_checkpoint.as_deref()
    }

    /// Deterministically draws the task for (step, prompt slot): weighted
    /// kind choice, then a length, then a payload seed.
    fn sample_task(&self, step: u64, slot: u64) -> Result<TaskInstance> {
        let mut rng = Stream::keyed(Domain::Task, &[self.cfg.seed, step, slot]);
        let total: f64 = self.cfg.tasks.iter().map(|e| e.weight).sum();
        let draw = rng.next_f64() * total;
        let mut acc = 0.0;
        let mut chosen = *self.cfg.tasks.last().expect("validated non-empty");
        for entry in &self.cfg.tasks {
            acc += entry.weight;
            if draw < acc {
                chosen = *entry;
                break;
            }
        }
        let length = rng.next_in_range(chosen.min_len as u64, chosen.max_len as u64) as usize;
        let payload_seed = rng.next_u64();
        make_task(&self.vocab, chosen.kind, length, payload_seed)
    }

    /// One full training step: sample B×G rollouts, reward, compute
    /// advantages, assemble the step objective, update, and report metrics.
    /// A step whose groups are all skipped leaves parameters and optimizer
    /// untouched but still logs.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let step = self.completed + 1;
        let started = Instant::now();

        if self.cfg.mode == Mode::Dsrl && self.phase.needs_reincarnation(step) {
            // Literal order: checkpoint first (preserving the phase-one
            // optimizer state), then reset moments and counter, then
            // re-freeze the KL reference. Parameters carry over untouched.
            if let Some(dir) = &self.run_dir {
                let path = dir.join(format!("checkpoint-{}-reincarnation.ckpt", self.completed));
                save_checkpoint(&path, &self.params, Some(&self.adam.snapshot()), Some(self.completed))?;
                self.reincarnation_checkpoint = Some(path);
            }
            self.adam.reset();
            if self.kl_ref.is_some() {
                self.kl_ref = Some(self.params.clone());
            }
            self.phase.mark_reincarnated();
        }

        let objective = if self.cfg.mode == Mode::Dsrl {
            objective_for_step(step, self.cfg.dsrl_threshold, &self.base_objective)
        } else {
            self.base_objective
        };

        let b = self.cfg.prompt_batch;
        let g = self.cfg.group_size;
        let tasks: Vec<TaskInstance> =
            (0..b).map(|slot| self.sample_task(step, slot as u64)).collect::<Result<_>>()?;

        // Sample the B×G grid. Every cell owns its own counter stream, so
        // the outcome is identical for any worker count; rewards are
        // assigned in the same pass.
        let seed = self.cfg.seed;
        let temperature = self.cfg.temperature;
        let max_response = self.cfg.max_response;
        let spec = self.cfg.reward_spec;
        let params = &self.params;
        let vocab = &self.vocab;
        let task_refs = &tasks;
        let cells: Vec<(u64, u64)> = (0..b as u64)
            .flat_map(|bi| (0..g as u64).map(move |gi| (bi, gi)))
            .collect();
        let flat: Vec<Rollout> = self.pool.install(|| {
            cells
                .par_iter()
                .map(|&(bi, gi)| {
                    let task = &task_refs[bi as usize];
                    let mut rng = Stream::keyed(Domain::Rollout, &[seed, step, bi, gi]);
                    let mut rollout =
                        sample_rollout(params, vocab, task, temperature, max_response, &mut rng)?;
                    rollout.reward = if verify(vocab, task, &rollout.response) {
                        spec.success
                    } else {
                        spec.failure
                    };
                    Ok(rollout)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut groups: Vec<RolloutGroup> = Vec::with_capacity(b);
        let mut flat_iter = flat.into_iter();
        for task in tasks {
            let rollouts: Vec<Rollout> = flat_iter.by_ref().take(g).collect();
            groups.push(RolloutGroup::new(task, rollouts));
        }
        for group in &mut groups {
            compute_advantages(group, objective.estimator)?;
        }

        let (loss, grad, stats) = self.pool.install(|| {
            assemble_loss(&groups, &self.params, &objective, self.kl_ref.as_ref())
        })?;

        // One update per sampled batch: scoring parameters are the sampling
        // parameters, so every importance ratio must be 1.
        assert!(
            stats.max_ratio_deviation <= 1e-6,
            "on-policy ratio identity violated: max |ratio - 1| = {:e}",
            stats.max_ratio_deviation
        );

        if stats.groups_skipped < stats.groups_total {
            self.adam.step(&mut self.params, &grad, self.cfg.learning_rate);
        }

        let total_rollouts = (b * g) as f64;
        let mut reward_sum = 0.0f64;
        let mut token_sum = 0usize;
        let mut top1_sum = 0.0f64;
        let mut adv_pos = 0usize;
        let mut adv_neg = 0usize;
        let mut fully_solved = 0u64;
        let mut fully_unsolved = 0u64;
        for group in &groups {
            let mut all_correct = true;
            let mut none_correct = true;
            for r in &group.rollouts {
                reward_sum += r.reward;
                token_sum += r.response.len();
                top1_sum += r.top1_logprob_sum;
                match r.advantage {
                    Some(a) if a > 0.0 => adv_pos += 1,
                    Some(a) if a < 0.0 => adv_neg += 1,
                    _ => {}
                }
                if r.reward == spec.success {
                    none_correct = false;
                } else {
                    all_correct = false;
                }
            }
            if all_correct {
                fully_solved += 1;
            }
            if none_correct {
                fully_unsolved += 1;
            }
        }

        self.completed = step;
        Ok(MetricsRecord {
            step,
            phase: phase_label(objective.space, objective.gate).to_string(),
            mean_reward: reward_sum / total_rollouts,
            mean_response_length: token_sum as f64 / total_rollouts,
            mean_top1_logprob: if token_sum == 0 { 0.0 } else { top1_sum / token_sum as f64 },
            frac_adv_pos: adv_pos as f64 / total_rollouts,
            frac_adv_neg: adv_neg as f64 / total_rollouts,
            groups_skipped: stats.groups_skipped as u64,
            fully_solved,
            fully_unsolved,
            loss,
            grad_norm: grad.norm(),
            seed: self.cfg.seed,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps_completed: u64,
    pub final_mean_reward: Option<f64>,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub reincarnation_checkpoint: Option<PathBuf>,
}

/// Runs (or resumes) a full training loop in `run_dir`, writing
/// `metrics.jsonl` (one record per step), periodic `checkpoint-<step>.ckpt`
/// files, and a trailing `checkpoint-final.ckpt`.
pub fn run_training(cfg: &TrainConfig, run_dir: &Path, resume: Option<&Path>) -> Result<RunSummary> {
    fs::create_dir_all(run_dir)?;
    let mut trainer = match resume {
        Some(ck) => Trainer::resume(cfg.clone(), Some(run_dir.to_path_buf()), ck)?,
        None => Trainer::new(cfg.clone(), Some(run_dir.to_path_buf()))?,
    };
    let metrics_path = run_dir.join("metrics.jsonl");
    let metrics_file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&metrics_path)?
    } else {
        File::create(&metrics_path)?
    };
    let mut out = BufWriter::new(metrics_file);

    let mut last_reward = None;
    while trainer.completed_steps() < cfg.total_steps {
        let record = trainer.step()?;
        last_reward = Some(record.mean_reward);
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
        if cfg.checkpoint_interval > 0 && record.step % cfg.checkpoint_interval == 0 {
            out.flush()?;
            let path = run_dir.join(format!("checkpoint-{}.ckpt", record.step));
            save_checkpoint(
                &path,
                trainer.params(),
                Some(&trainer.optimizer().snapshot()),
                Some(record.step),
            )?;
        }
    }
    out.flush()?;

    let final_checkpoint = run_dir.join("checkpoint-final.ckpt");
    save_checkpoint(
        &final_checkpoint,
        trainer.params(),
        Some(&trainer.optimizer().snapshot()),
        Some(trainer.completed_steps()),
    )?;
    Ok(RunSummary {
        steps_completed: trainer.completed_steps(),
        final_mean_reward: last_reward,
        metrics_path,
        final_checkpoint,
        reincarnation_checkpoint: trainer.reincarnation_checkpoint().map(Path::to_path_buf),
    })
}
