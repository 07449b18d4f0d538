//! Diagnostics over sampled responses: gradient alignment between the
//! conditional and marginal scoring contexts, per-token log-probability
//! gaps, a first-order Taylor consistency check for cross-context updates,
//! a rule-based thought-step taxonomy, and solved/unsolved group tallies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{grad_logprob, score, ContextKind, PolicyParams};
use crate::objective::RolloutGroup;
use crate::scalar::Scalar;
use crate::task::{RewardSpec, TaskInstance};
use crate::vocab::TokenId;

/// One sampled response with its verified reward, the unit diagnostics
/// operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSample {
    pub task: TaskInstance,
    pub response: Vec<TokenId>,
    pub reward: f64,
}

// ---------------------------------------------------------------------------
// Gradient alignment
// ---------------------------------------------------------------------------

/// Alignment between the marginal-context gradient g_m and the
/// conditional-context gradient g_c of one response's summed log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    /// ⟨g_m, g_c⟩ accumulated in f64.
    pub dot: f64,
    /// dot / (‖g_m‖·‖g_c‖).
    pub cosine: f64,
    pub marginal_norm: f64,
    pub conditional_norm: f64,
}

/// Summary of [`AlignmentEntry`] values over a batch of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub entries: Vec<AlignmentEntry>,
    /// Samples dropped because one of the two gradients had zero norm.
    pub excluded_zero_norm: usize,
    pub mean_dot: f64,
    pub min_dot: f64,
    pub max_dot: f64,
    pub mean_cosine: f64,
    pub dot_q25: f64,
    pub dot_q50: f64,
    pub dot_q75: f64,
    /// Fraction of entries with dot ≥ 0.
    pub frac_nonnegative: f64,
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// For each sample, computes the gradient of the summed response
/// log-probability under both scoring contexts (unit per-token weights) and
/// reports their inner products and cosines. Samples where either gradient
/// has zero norm are excluded from the statistics and counted.
pub fn grad_alignment<S: Scalar>(
    params: &PolicyParams<S>,
    samples: &[ResponseSample],
) -> Result<AlignmentStats> {
    if samples.is_empty() {
        return Err(Error::Analysis("no samples to align".into()));
    }
    let raw: Vec<(f64, f64, f64)> = samples
        .par_iter()
        .map(|sample| {
            let unit = vec![1.0; sample.response.len()];
            let g_m = grad_logprob(
                params,
                &sample.task,
                &sample.response,
                ContextKind::Marginal,
                &unit,
            )?;
            let g_c = grad_logprob(
                params,
                &sample.task,
                &sample.response,
                ContextKind::Conditional,
                &unit,
            )?;
            Ok((g_m.dot(&g_c), g_m.norm(), g_c.norm()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(raw.len());
    let mut excluded = 0usize;
    for (dot, marginal_norm, conditional_norm) in raw {
        if marginal_norm == 0.0 || conditional_norm == 0.0 {
            excluded += 1;
            continue;
        }
        entries.push(AlignmentEntry {
            dot,
            cosine: dot / (marginal_norm * conditional_norm),
            marginal_norm,
            conditional_norm,
        });
    }
    if entries.is_empty() {
        return Err(Error::Analysis(format!(
            "all {excluded} samples had a zero-norm gradient"
        )));
    }

    let dots: Vec<f64> = entries.iter().map(|e| e.dot).collect();
    let mut sorted = dots.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let count = entries.len() as f64;
    Ok(AlignmentStats {
        excluded_zero_norm: excluded,
        mean_dot: dots.iter().sum::<f64>() / count,
        min_dot: sorted[0],
        max_dot: sorted[sorted.len() - 1],
        mean_cosine: entries.iter().map(|e| e.cosine).sum::<f64>() / count,
        dot_q25: quantile(&sorted, 0.25),
        dot_q50: quantile(&sorted, 0.50),
        dot_q75: quantile(&sorted, 0.75),
        frac_nonnegative: dots.iter().filter(|&&d| d >= 0.0).count() as f64 / count,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Log-probability gap
// ---------------------------------------------------------------------------

pub const GAP_HISTOGRAM_BINS: usize = 24;
pub const GAP_HISTOGRAM_LO: f64 = -6.0;
pub const GAP_HISTOGRAM_HI: f64 = 6.0;

/// Fixed-width histogram; out-of-range values land in the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn over_gaps(values: impl Iterator<Item = f64>) -> Histogram {
        let width = (GAP_HISTOGRAM_HI - GAP_HISTOGRAM_LO) / GAP_HISTOGRAM_BINS as f64;
        let bin_edges: Vec<f64> = (0..=GAP_HISTOGRAM_BINS)
            .map(|i| GAP_HISTOGRAM_LO + i as f64 * width)
            .collect();
        let mut counts = vec![0u64; GAP_HISTOGRAM_BINS];
        for v in values {
            let idx = ((v - GAP_HISTOGRAM_LO) / width).floor() as i64;
            let idx = idx.clamp(0, GAP_HISTOGRAM_BINS as i64 - 1) as usize;
            counts[idx] += 1;
        }
        Histogram { bin_edges, counts }
    }
}

/// Per-token conditional − marginal log-probability gaps, with summary
/// statistics over the flattened token population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// gaps[sample][token] = conditional lp − marginal lp.
    pub gaps: Vec<Vec<f64>>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Fraction of tokens with |gap| < 0.5.
    pub frac_small: f64,
    pub histogram: Histogram,
}

/// Scores every sample under both contexts and reports the per-token gap
/// conditional − marginal. A gap near zero means the prompt conditioning
/// barely moves that token's probability.
pub fn logprob_gap<S: Scalar>(
    params: &PolicyParams<S>,
    samples: &[ResponseSample],
) -> Result<GapReport> {
    if samples.is_empty() {
        return Err(Error::Analysis("no samples to score".into()));
    }
    let gaps: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|sample| {
            let cond = score(params, &sample.task, &sample.response, ContextKind::Conditional)?;
            let marg = score(params, &sample.task, &sample.response, ContextKind::Marginal)?;
            Ok(cond
                .logprobs
                .iter()
                .zip(&marg.logprobs)
                .map(|(c, m)| c - m)
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let flat: Vec<f64> = gaps.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(Error::Analysis("samples contained no tokens".into()));
    }
    let count = flat.len() as f64;
    let mean = flat.iter().sum::<f64>() / count;
    let var = flat.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / count;
    Ok(GapReport {
        mean,
        std: var.sqrt(),
        frac_small: flat.iter().filter(|g| g.abs() < 0.5).count() as f64 / count,
        histogram: Histogram::over_gaps(flat.iter().copied()),
        gaps,
    })
}

// ---------------------------------------------------------------------------
// Taylor consistency check
// ---------------------------------------------------------------------------

/// Step sizes for the second-order residual scan: each successive η is half
/// the previous, so residual ratios between neighbours should approach 4.
pub const TAYLOR_ETA_GRID: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// First-order prediction vs. realised change of the conditional
/// log-probability after stepping along the reward-scaled marginal gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorCheck {
    /// η · R · ⟨g_m, g_c⟩.
    pub predicted: f64,
    /// Σ conditional lp(θ + η·R·g_m) − Σ conditional lp(θ).
    pub actual: f64,
    /// actual − predicted; shrinks like η² for a smooth objective.
    pub residual: f64,
}

/// Moves the parameters by η·R along the marginal-context gradient and
/// compares the realised change in conditional log-probability against its
/// first-order prediction through the cross-context inner product.
pub fn taylor_residual(
    params: &PolicyParams<f64>,
    sample: &ResponseSample,
    eta: f64,
) -> Result<TaylorCheck> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Analysis(format!("step size must be positive, got {eta}")));
    }
    let unit = vec![1.0; sample.response.len()];
    let g_m = grad_logprob(params, &sample.task, &sample.response, ContextKind::Marginal, &unit)?;
    let g_c = grad_logprob(params, &sample.task, &sample.response, ContextKind::Conditional, &unit)?;
    let before = score(params, &sample.task, &sample.response, ContextKind::Conditional)?
        .sum_logprob();
    let shifted = params.add_scaled(&g_m, eta * sample.reward);
    let after = score(&shifted, &sample.task, &sample.response, ContextKind::Conditional)?
        .sum_logprob();
    let predicted = eta * sample.reward * g_m.dot(&g_c);
    let actual = after - before;
    if !predicted.is_finite() || !actual.is_finite() {
        return Err(Error::Analysis(format!(
            "non-finite Taylor terms: predicted {predicted}, actual {actual}"
        )));
    }
    Ok(TaylorCheck { predicted, actual, residual: actual - predicted })
}

// ---------------------------------------------------------------------------
// Thought taxonomy
// ---------------------------------------------------------------------------

/// Coarse role of one thought step in a chain of reasoning text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Thought {
    /// Pivots to a different strategy.
    Transition,
    /// Re-examines or double-checks prior work.
    Reflection,
    /// Plain forward computation.
    Execution,
}

impl Thought {
    pub fn name(self) -> &'static str {
        match self {
            Thought::Transition => "transition",
            Thought::Reflection => "reflection",
            Thought::Execution => "execution",
        }
    }
}

const TRANSITION_PHRASES: &[&str] = &[
    "think differently",
    "another way",
    "another approach",
    "another method",
    "another solution",
    "another strategy",
    "another technique",
];

const REFLECTION_PHRASES: &[&str] = &[
    "verify",
    "make sure",
    "hold on",
    "think again",
    "'s correct",
    "'s incorrect",
    "let me check",
    "seems right",
];

/// Classifies one thought step. Rules, in priority order, all
/// case-insensitive:
/// 1. a step beginning with "alternatively" is a transition;
/// 2. a step beginning with "wait" is a reflection;
/// 3. a step containing any transition phrase is a transition;
/// 4. a step containing any reflection phrase is a reflection;
/// 5. anything else is execution.
pub fn classify_thought(text: &str) -> Thought {
    let lowered = text.trim_start().to_lowercase();
    if lowered.starts_with("alternatively") {
        return Thought::Transition;
    }
    if lowered.starts_with("wait") {
        return Thought::Reflection;
    }
    if TRANSITION_PHRASES.iter().any(|p| lowered.contains(p)) {
        return Thought::Transition;
    }
    if REFLECTION_PHRASES.iter().any(|p| lowered.contains(p)) {
        return Thought::Reflection;
    }
    Thought::Execution
}

/// Tally of classified thought steps; `total` is always the sum of the
/// three classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtCounts {
    pub transition: usize,
    pub reflection: usize,
    pub execution: usize,
    pub total: usize,
}

/// Splits text into thought steps on blank lines (a line of only whitespace
/// counts as blank), classifies each, and tallies the classes.
pub fn count_thoughts(text: &str) -> ThoughtCounts {
    let mut counts = ThoughtCounts::default();
    let mut buffer: Vec<&str> = Vec::new();
    let mut units: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !buffer.is_empty() {
                units.push(buffer.join("\n"));
                buffer.clear();
            }
        } else {
            buffer.push(line);
        }
    }
    if !buffer.is_empty() {
        units.push(buffer.join("\n"));
    }
    for unit in &units {
        let step = unit.trim();
        if step.is_empty() {
            continue;
        }
        match classify_thought(step) {
            Thought::Transition => counts.transition += 1,
            Thought::Reflection => counts.reflection += 1,
            Thought::Execution => counts.execution += 1,
        }
        counts.total += 1;
    }
    counts
}

/// Hook for plugging in a richer behaviour classifier (for example an
/// external model scoring each step). No implementation ships here; the
/// rule-based [`classify_thought`] is the built-in default.
pub trait BehaviorJudge {
    /// Returns one label per thought step found in `text`.
    fn judge(&self, text: &str) -> Result<Vec<String>>;
}

// ---------------------------------------------------------------------------
// Solved / unsolved tallies
// ---------------------------------------------------------------------------

/// Partition of rollout groups by how many of their samples earned the
/// success reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolvedStatus {
    /// Groups where every rollout succeeded.
    pub fully_solved: usize,
    /// Groups where no rollout succeeded.
    pub fully_unsolved: usize,
    /// Everything else (including empty groups).
    pub mixed: usize,
}

/// Counts fully-solved, fully-unsolved, and mixed groups. A rollout counts
/// as correct exactly when its reward equals the success reward.
pub fn solved_status(groups: &[RolloutGroup], spec: &RewardSpec) -> SolvedStatus {
    let mut status = SolvedStatus::default();
    for group in groups {
        if group.rollouts.is_empty() {
            status.mixed += 1;
            continue;
        }
        let correct = group
            .rollouts
            .iter()
            .filter(|r| r.reward == spec.success)
            .count();
        if correct == group.rollouts.len() {
            status.fully_solved += 1;
        } else if correct == 0 {
            status.fully_unsolved += 1;
        } else {
            status.mixed += 1;
        }
    }
    status
}
