//! Evaluation harness: Avg@K and the unbiased Pass@K estimator over freshly
//! sampled rollouts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_rollout, PolicyParams};
use crate::rng::{Domain, Stream};
use crate::scalar::Scalar;
use crate::task::{verify, TaskInstance};
use crate::vocab::Vocabulary;

/// Unbiased Pass@K: the probability that a uniformly random size-K subset of
/// n samples, c of them correct, contains at least one correct sample:
/// 1 − C(n−c, K)/C(n, K).
///
/// Computed as 1 − Π_{i=0}^{K−1} (n−c−i)/(n−i), which is exact to 64-bit
/// rounding and overflow-free far beyond n = 512.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(Error::Eval(format!("correct count {c} exceeds sample count {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::Eval(format!("K must lie in 1..={n}, got {k}")));
    }
    let mut miss = 1.0f64;
    for i in 0..k {
        let numer = (n - c) as f64 - i as f64;
        if numer <= 0.0 {
            return Ok(1.0);
        }
        miss *= numer / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

/// Avg@K: the mean over instances of (correct among the first K)/K.
/// Every instance must supply at least K samples.
pub fn avg_at_k(correctness: &[Vec<bool>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Eval("K must be at least 1".into()));
    }
    if correctness.is_empty() {
        return Err(Error::Eval("no instances to average over".into()));
    }
    let mut total = 0.0f64;
    for (idx, row) in correctness.iter().enumerate() {
        if row.len() < k {
            return Err(Error::Eval(format!(
                "instance {idx} has {} samples, K = {k} requires at least {k}",
                row.len()
            )));
        }
        let correct = row[..k].iter().filter(|&&ok| ok).count();
        total += correct as f64 / k as f64;
    }
    Ok(total / correctness.len() as f64)
}

/// Sampling settings for [`run_eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Samples per task instance (n). Capped at 512.
    pub n: usize,
    /// K values to report; each must satisfy 1 ≤ K ≤ n.
    pub ks: Vec<usize>,
    pub temperature: f64,
    pub max_response: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { n: 64, ks: vec![1, 8, 64], temperature: 1.0, max_response: 16, seed: 0 }
    }
}

pub const MAX_EVAL_SAMPLES: usize = 512;

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_EVAL_SAMPLES {
            return Err(Error::Eval(format!(
                "sample count must lie in 1..={MAX_EVAL_SAMPLES}, got {}",
                self.n
            )));
        }
        if self.ks.is_empty() {
            return Err(Error::Eval("at least one K value is required".into()));
        }
        for &k in &self.ks {
            if k == 0 || k > self.n {
                return Err(Error::Eval(format!(
                    "K = {k} outside 1..={} (n)",
                    self.n
                )));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Eval(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.max_response == 0 {
            return Err(Error::Eval("max_response must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-instance outcome: a task label and its correct-sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub task: String,
    pub c: usize,
}

/// Full evaluation report (serialized as one JSON object).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
    pub instances: Vec<EvalInstance>,
    pub avg_at_k: BTreeMap<usize, f64>,
    pub pass_at_k: BTreeMap<usize, f64>,
}

/// Samples `opts.n` rollouts per task, verifies each, and aggregates Avg@K
/// and mean Pass@K over instances for every requested K. Deterministic in
/// the seed: every (instance, sample) cell draws from its own counter
/// stream, so results are identical for any worker count.
pub fn run_eval<S: Scalar>(
    params: &PolicyParams<S>,
    vocab: &Vocabulary,
    tasks: &[TaskInstance],
    opts: &EvalOptions,
) -> Result<EvalResult> {
    opts.validate()?;
    if tasks.is_empty() {
        return Err(Error::Eval("no task instances given".into()));
    }

    let cells: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|i| (0..opts.n).map(move |j| (i, j)))
        .collect();
    let outcomes: Vec<bool> = cells
        .par_iter()
        .map(|&(i, j)| {
            let task = &tasks[i];
            let mut rng = Stream::keyed(Domain::Eval, &[opts.seed, i as u64, j as u64]);
            let rollout = sample_rollout(
                params,
                vocab,
                task,
                opts.temperature,
                opts.max_response,
                &mut rng,
            )?;
            Ok(verify(vocab, task, &rollout.response))
        })
        .collect::<Result<Vec<_>>>()?;

    let correctness: Vec<Vec<bool>> =
        outcomes.chunks_exact(opts.n).map(|row| row.to_vec()).collect();
    let instances: Vec<EvalInstance> = tasks
        .iter()
        .zip(&correctness)
        .map(|(task, row)| EvalInstance {
            task: format!(
                "{}[{}]",
                task.kind.name(),
                vocab.render(task.payload())
            ),
            c: row.iter().filter(|&&ok| ok).count(),
        })
        .collect();

    let mut avg = BTreeMap::new();
    let mut pass = BTreeMap::new();
    for &k in &opts.ks {
        avg.insert(k, avg_at_k(&correctness, k)?);
        let mean_pass = instances
            .iter()
            .map(|inst| pass_at_k(opts.n, inst.c, k))
            .sum::<Result<f64>>()?
            / instances.len() as f64;
        pass.insert(k, mean_pass);
    }
    Ok(EvalResult {
        n: opts.n,
        temperature: opts.temperature,
        seed: opts.seed,
        instances,
        avg_at_k: avg,
        pass_at_k: pass,
    })
}
