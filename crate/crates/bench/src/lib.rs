//! Shared fixtures for the kernel benchmarks: a deterministic desk-scale
//! policy and a task instance, so every bench measures the same workload.

use dsrl_core::{make_task, Architecture, PolicyParams, TaskInstance, TaskKind, Vocabulary};

/// Seed fixing the benchmark policy and task; changing it changes the
/// measured workload, so keep it stable across comparisons.
pub const BENCH_SEED: u64 = 1;

/// The desk-scale policy every kernel benchmark runs against.
pub fn bench_params() -> PolicyParams<f32> {
    PolicyParams::init(Architecture::default_desk(), BENCH_SEED).expect("valid architecture")
}

pub fn bench_vocab() -> Vocabulary {
    Vocabulary::default_small()
}

/// A fixed copy task with an 8-token payload: long enough that attention and
/// the feed-forward stack dominate, short enough to iterate quickly.
pub fn bench_task() -> TaskInstance {
    make_task(&bench_vocab(), TaskKind::Copy, 8, BENCH_SEED).expect("valid task")
}
