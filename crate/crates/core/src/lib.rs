//! A desk-scale laboratory for reinforcement learning with verifiable
//! rewards. A small decoder-only transformer (manual forward and backward
//! passes, no autodiff) is trained with group-relative policy-gradient
//! objectives on synthetic token tasks whose answers can be checked exactly.
//!
//! The pieces:
//!
//! - [`model`]: the policy network, flat parameter layout, sampling,
//!   log-probability scoring under conditional (full prompt) and marginal
//!   (first prompt token only) contexts, analytic gradients, checkpoints.
//! - [`task`] / [`dataset`] / [`vocab`]: synthetic verifiable tasks over a
//!   small token vocabulary, with exact response verification.
//! - [`objective`]: group-relative advantage estimators (leave-one-out and
//!   standardised variants), PPO-style clipping with independent low/high
//!   ranges, advantage-sign sample gates, per-token KL regularisation, and
//!   two length normalizers, assembled into one loss + gradient.
//! - [`schedule`]: the two-phase curriculum that starts in the marginal
//!   space penalising failures and later switches to standard conditional
//!   training, resetting the optimizer exactly once at the boundary.
//! - [`trainer`]: the deterministic training loop — counter-based RNG keyed
//!   by (seed, step, batch, group) so results are byte-identical across
//!   worker counts — with JSONL metrics and checkpointing.
//! - [`eval`]: Avg@K and the unbiased Pass@K estimator over fresh samples.
//! - [`analysis`]: gradient-alignment, log-probability-gap, and Taylor
//!   consistency diagnostics, plus a rule-based thought taxonomy and
//!   solved/unsolved tallies.
//! - [`rng`] / [`scalar`]: splittable counter-based random streams and the
//!   f32/f64 abstraction the numerics are generic over.

pub mod adam;
pub mod analysis;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod task;
pub mod trainer;
pub mod vocab;

pub use adam::Adam;
pub use analysis::{
    classify_thought, count_thoughts, grad_alignment, logprob_gap, solved_status,
    taylor_residual, AlignmentEntry, AlignmentStats, BehaviorJudge, GapReport, Histogram,
    ResponseSample, SolvedStatus, TaylorCheck, Thought, ThoughtCounts, TAYLOR_ETA_GRID,
};
pub use dataset::{read_dataset, write_dataset};
pub use error::{Error, Result};
pub use eval::{avg_at_k, pass_at_k, run_eval, EvalInstance, EvalOptions, EvalResult, MAX_EVAL_SAMPLES};
pub use model::{
    grad_logprob, load_checkpoint, sample_rollout, save_checkpoint, score, Architecture,
    Checkpoint, ContextKind, GradientVector, OptimizerSnapshot, PolicyParams, ScoredSequence,
};
pub use objective::{
    assemble_loss, compute_advantages, Estimator, LengthNormalizer, ObjectiveConfig,
    ObjectiveStats, Rollout, RolloutGroup, SampleGate, Space,
};
pub use rng::{Domain, Stream};
pub use scalar::{sc, Scalar};
pub use schedule::{objective_for_step, phase_label, PhaseState};
pub use task::{make_task, verify, RewardSpec, TaskInstance, TaskKind};
pub use trainer::{
    run_training, MetricsRecord, Mode, RunSummary, TaskMixEntry, TrainConfig, Trainer,
};
pub use vocab::{TokenId, Vocabulary};
