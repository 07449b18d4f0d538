//! Group-relative policy-gradient objective.
//!
//! A batch is a list of rollout groups, each holding G sampled responses to
//! one task. Rewards are turned into group-relative advantages by one of
//! three estimators, then a clipped importance-weighted surrogate is summed
//! over tokens, optionally KL-regularized toward a frozen reference policy,
//! divided by a length normalizer, and negated into a minimization loss with
//! an exact analytic gradient.
//!
//! Two orthogonal switches reshape the objective:
//!
//! * [`Space`] — score responses under the full prompt (`PostTrain`) or under
//!   a bare BOS context (`PreTrain`), in which case prompts provably cannot
//!   influence loss or gradient.
//! * [`SampleGate`] — keep every rollout, only those with positive advantage,
//!   or only those with negative advantage. With the `TokenTotal` normalizer
//!   the positive and negative parts sum exactly to the ungated objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    backward_weighted, context_prefix, score_with_prompt, ContextKind, GradientVector,
    PolicyParams,
};
use crate::scalar::{sc, Scalar};
use crate::task::TaskInstance;
use crate::vocab::TokenId;

/// One sampled response plus everything needed to score it later: the reward,
/// both sampling-time log-probability sequences, and (once assigned) the
/// group-relative advantage shared by all of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub response: Vec<TokenId>,
    pub reward: f64,
    /// Per-token log-probabilities under the sampling policy, scored with the
    /// full prompt as context. Length equals `response.len()`.
    pub logp_conditional: Vec<f64>,
    /// Per-token log-probabilities under the sampling policy, scored with a
    /// bare BOS context. Length equals `response.len()`.
    pub logp_marginal: Vec<f64>,
    /// Group-relative advantage; `None` until assigned (or when the group is
    /// skipped for lack of reward variation).
    pub advantage: Option<f64>,
    /// Sum over sampling steps of the maximum log-probability at that step
    /// (a confidence diagnostic; not used by the objective).
    pub top1_logprob_sum: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Sampling-time log-probabilities in the given space.
    pub fn logp_in(&self, space: Space) -> &[f64] {
        match space {
            Space::PostTrain => &self.logp_conditional,
            Space::PreTrain => &self.logp_marginal,
        }
    }
}

/// G rollouts sharing one task. `skipped == true` means the group's rewards
/// carried no signal (all identical) and it contributes nothing to the loss.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub task: TaskInstance,
    pub rollouts: Vec<Rollout>,
    pub skipped: bool,
}

impl RolloutGroup {
    pub fn new(task: TaskInstance, rollouts: Vec<Rollout>) -> Self {
        RolloutGroup { task, rollouts, skipped: false }
    }
}

/// How rewards become advantages within a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// (R_i − mean) / population std; group skipped at zero variance.
    Grpo,
    /// R_i − mean, no variance division; requires the constant normalizer.
    DrGrpo,
    /// R_i − mean of the other G−1 rewards (leave-one-out).
    Rloo,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Grpo => "grpo",
            Estimator::DrGrpo => "dr_grpo",
            Estimator::Rloo => "rloo",
        }
    }
}

/// Which context responses are scored under when assembling the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// Conditional scoring: context = prompt ⊕ generated prefix.
    PostTrain,
    /// Marginal scoring: context = BOS ⊕ generated prefix; the prompt body is
    /// structurally absent from the computation.
    PreTrain,
}

impl Space {
    pub fn context_kind(self) -> ContextKind {
        match self {
            Space::PostTrain => ContextKind::Conditional,
            Space::PreTrain => ContextKind::Marginal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Space::PostTrain => "post_train",
            Space::PreTrain => "pre_train",
        }
    }
}

/// Which rollouts contribute to the objective, by advantage sign.
/// Zero-advantage rollouts pass only the `All` gate (where they contribute
/// exactly zero to the surrogate anyway).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleGate {
    All,
    PsrOnly,
    NsrOnly,
}

impl SampleGate {
    pub fn admits(self, advantage: f64) -> bool {
        match self {
            SampleGate::All => true,
            SampleGate::PsrOnly => advantage > 0.0,
            SampleGate::NsrOnly => advantage < 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SampleGate::All => "all",
            SampleGate::PsrOnly => "psr_only",
            SampleGate::NsrOnly => "nsr_only",
        }
    }
}

/// What the summed token contributions are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNormalizer {
    /// Total token count of every rollout in every non-skipped group,
    /// including rollouts the sample gate excludes. This makes the gated
    /// positive and negative parts sum exactly to the ungated objective.
    TokenTotal,
    /// Total rollout count × the configured maximum response length; constant
    /// across batches, independent of realized lengths.
    ConstMaxLen,
}

impl LengthNormalizer {
    pub fn name(self) -> &'static str {
        match self {
            LengthNormalizer::TokenTotal => "token_total",
            LengthNormalizer::ConstMaxLen => "const_max_len",
        }
    }
}

/// Full description of one objective variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub estimator: Estimator,
    /// Lower clip width: ratios are clamped to ≥ 1 − clip_low. Must lie in
    /// (0, 1).
    pub clip_low: f64,
    /// Upper clip width: ratios are clamped to ≤ 1 + clip_high. Must be > 0.
    pub clip_high: f64,
    /// KL regularization strength toward a frozen reference policy; 0
    /// disables the term entirely.
    pub kl_beta: f64,
    pub space: Space,
    pub gate: SampleGate,
    pub normalizer: LengthNormalizer,
    /// Maximum response length, used by the `ConstMaxLen` normalizer.
    pub max_response: usize,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_low > 0.0 && self.clip_low < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_low must lie in (0, 1), got {}",
                self.clip_low
            )));
        }
        if !(self.clip_high > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_high must be positive, got {}",
                self.clip_high
            )));
        }
        if self.kl_beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "kl_beta must be non-negative, got {}",
                self.kl_beta
            )));
        }
        if self.max_response == 0 {
            return Err(Error::InvalidConfig("max_response must be at least 1".into()));
        }
        if self.estimator == Estimator::DrGrpo && self.normalizer != LengthNormalizer::ConstMaxLen {
            return Err(Error::InvalidConfig(
                "the dr_grpo estimator requires the const_max_len normalizer".into(),
            ));
        }
        Ok(())
    }
}

/// Assigns group-relative advantages, or marks the group skipped when its
/// rewards are all identical (no signal; the grpo division would also be
/// undefined there). Skipped groups get `advantage = None` on every rollout.
///
/// Errors if the group has fewer than two rollouts.
pub fn compute_advantages(group: &mut RolloutGroup, estimator: Estimator) -> Result<()> {
    let g = group.rollouts.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let rewards: Vec<f64> = group.rollouts.iter().map(|r| r.reward).collect();
    let all_equal = rewards.iter().all(|&r| r == rewards[0]);
    let gf = g as f64;
    let mean = rewards.iter().sum::<f64>() / gf;

    let skip = |group: &mut RolloutGroup| {
        group.skipped = true;
        for r in &mut group.rollouts {
            r.advantage = None;
        }
    };

    match estimator {
        Estimator::Grpo => {
            let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<f64>() / gf;
            // `var == 0.0` alone would be enough mathematically; the explicit
            // all-equal test keeps the decision independent of rounding in
            // the mean, and the variance test guards against underflow.
            if all_equal || var == 0.0 {
                skip(group);
                return Ok(());
            }
            let std = var.sqrt();
            for (r, &rw) in group.rollouts.iter_mut().zip(&rewards) {
                r.advantage = Some((rw - mean) / std);
            }
        }
        Estimator::DrGrpo => {
            if all_equal {
                skip(group);
                return Ok(());
            }
            for (r, &rw) in group.rollouts.iter_mut().zip(&rewards) {
                r.advantage = Some(rw - mean);
            }
        }
        Estimator::Rloo => {
            if all_equal {
                skip(group);
                return Ok(());
            }
            let sum: f64 = rewards.iter().sum();
            for (r, &rw) in group.rollouts.iter_mut().zip(&rewards) {
                let leave_one_out = (sum - rw) / (gf - 1.0);
                r.advantage = Some(rw - leave_one_out);
            }
        }
    }
    group.skipped = false;
    Ok(())
}

/// The clipped surrogate for one token:
/// min(ρ·Â, clamp(ρ, 1−clip_low, 1+clip_high)·Â).
///
/// Errors on a non-positive (or NaN) ratio.
pub fn clipped_term(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(Error::NonPositiveRatio(ratio));
    }
    let clamped = ratio.clamp(1.0 - clip_low, 1.0 + clip_high);
    Ok((ratio * advantage).min(clamped * advantage))
}

/// Per-token KL penalty estimator: exp(ref − new) − (ref − new) − 1.
/// Non-negative, zero iff the log-probabilities agree.
pub fn kl_token(new_logprob: f64, ref_logprob: f64) -> f64 {
    let d = ref_logprob - new_logprob;
    // exp_m1 keeps the value accurate (and non-negative) for tiny |d|.
    d.exp_m1() - d
}

/// Batch-level statistics reported alongside the loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectiveStats {
    pub groups_total: usize,
    pub groups_skipped: usize,
    /// Every rollout in the batch, including those of skipped groups.
    pub rollouts_total: usize,
    /// Rollouts of non-skipped groups admitted by the sample gate.
    pub rollouts_gated_in: usize,
    /// Token count of the gated-in rollouts.
    pub tokens_gated_in: usize,
    /// Denominator actually used for the loss.
    pub normalizer: f64,
    /// Fraction of gated-in tokens where the clipped branch was active.
    pub clipped_token_fraction: f64,
    /// max |ρ − 1| over gated-in tokens; exactly 0 when scoring the sampling
    /// parameters themselves.
    pub max_ratio_deviation: f64,
    /// Mean per-token KL penalty over gated-in tokens (0 when disabled).
    pub mean_kl: f64,
}

struct RolloutPartial<S: Scalar> {
    objective: f64,
    grad: Option<GradientVector<S>>,
    gated_in: bool,
    tokens: usize,
    clipped: usize,
    max_dev: f64,
    kl_sum: f64,
}

/// Assembles the batch loss and its exact gradient with respect to `params`.
///
/// For every rollout of every non-skipped group that passes the sample gate,
/// each token contributes `clipped_term(ρ_t, Â) − kl_beta · kl_token` where
/// ρ_t = exp(new_logprob_t − sampling_logprob_t), both sides scored in the
/// configured space. The objective is the contribution sum divided by the
/// length normalizer; the returned loss is its negation.
///
/// Per-rollout work runs in parallel, but reduction is sequential in (group,
/// rollout, token) order, so results are bitwise independent of thread count.
pub fn assemble_loss<S: Scalar>(
    groups: &[RolloutGroup],
    params: &PolicyParams<S>,
    cfg: &ObjectiveConfig,
    kl_ref: Option<&PolicyParams<S>>,
) -> Result<(f64, GradientVector<S>, ObjectiveStats)> {
    cfg.validate()?;
    if cfg.kl_beta > 0.0 && kl_ref.is_none() {
        return Err(Error::Objective(
            "kl_beta > 0 requires reference parameters".into(),
        ));
    }
    let n_params = params.param_count();

    let mut stats = ObjectiveStats {
        groups_total: groups.len(),
        groups_skipped: groups.iter().filter(|g| g.skipped).count(),
        rollouts_total: groups.iter().map(|g| g.rollouts.len()).sum(),
        ..ObjectiveStats::default()
    };

    let mut live_tokens = 0usize;
    for group in groups.iter().filter(|g| !g.skipped) {
        for r in &group.rollouts {
            if r.advantage.is_none() {
                return Err(Error::Objective(
                    "advantage unset on a rollout of a non-skipped group".into(),
                ));
            }
            if r.logp_conditional.len() != r.response.len()
                || r.logp_marginal.len() != r.response.len()
            {
                return Err(Error::Objective(format!(
                    "log-probability lengths {}/{} do not match response length {}",
                    r.logp_conditional.len(),
                    r.logp_marginal.len(),
                    r.response.len()
                )));
            }
            live_tokens += r.response.len();
        }
    }
    stats.normalizer = match cfg.normalizer {
        LengthNormalizer::TokenTotal => live_tokens as f64,
        LengthNormalizer::ConstMaxLen => (stats.rollouts_total * cfg.max_response) as f64,
    };
    if stats.normalizer == 0.0 {
        return Ok((0.0, GradientVector::zeros(n_params), stats));
    }

    // One work item per rollout of each non-skipped group, in batch order.
    let items: Vec<(&RolloutGroup, &Rollout)> = groups
        .iter()
        .filter(|g| !g.skipped)
        .flat_map(|g| g.rollouts.iter().map(move |r| (g, r)))
        .collect();
    let partials: Vec<RolloutPartial<S>> = items
        .par_iter()
        .map(|(group, rollout)| rollout_partial(group, rollout, params, cfg, kl_ref))
        .collect::<Result<Vec<_>>>()?;

    let mut objective = 0.0f64;
    let mut acc = vec![S::zero(); n_params];
    let mut clipped = 0usize;
    let mut kl_sum = 0.0f64;
    let mut max_dev = 0.0f64;
    for p in &partials {
        objective += p.objective;
        if let Some(g) = &p.grad {
            for (a, &v) in acc.iter_mut().zip(g.values()) {
                *a = *a + v;
            }
        }
        if p.gated_in {
            stats.rollouts_gated_in += 1;
        }
        stats.tokens_gated_in += p.tokens;
        clipped += p.clipped;
        kl_sum += p.kl_sum;
        max_dev = max_dev.max(p.max_dev);
    }
    if stats.tokens_gated_in > 0 {
        stats.clipped_token_fraction = clipped as f64 / stats.tokens_gated_in as f64;
        stats.mean_kl = kl_sum / stats.tokens_gated_in as f64;
    }
    stats.max_ratio_deviation = max_dev;

    // loss = −objective / normalizer, and likewise for the gradient.
    let scale: S = sc(-1.0 / stats.normalizer);
    let values: Vec<S> = acc.into_iter().map(|v| v * scale).collect();
    let loss = if objective == 0.0 { 0.0 } else { -objective / stats.normalizer };
    Ok((loss, GradientVector::new(values), stats))
}

fn rollout_partial<S: Scalar>(
    group: &RolloutGroup,
    rollout: &Rollout,
    params: &PolicyParams<S>,
    cfg: &ObjectiveConfig,
    kl_ref: Option<&PolicyParams<S>>,
) -> Result<RolloutPartial<S>> {
    let adv = rollout
        .advantage
        .ok_or_else(|| Error::Objective("advantage unset".into()))?;
    if !cfg.gate.admits(adv) {
        return Ok(RolloutPartial {
            objective: 0.0,
            grad: None,
            gated_in: false,
            tokens: 0,
            clipped: 0,
            max_dev: 0.0,
            kl_sum: 0.0,
        });
    }
    let kind = cfg.space.context_kind();
    let prefix = context_prefix(&group.task, kind);
    let (state, new_lps) = score_with_prompt(params, prefix, &rollout.response)?;
    let old_lps = rollout.logp_in(cfg.space);
    let ref_lps: Option<Vec<f64>> = match (cfg.kl_beta > 0.0, kl_ref) {
        (true, Some(reference)) => {
            let (_, lps) = score_with_prompt(reference, prefix, &rollout.response)?;
            Some(lps)
        }
        _ => None,
    };

    let base = prefix.len() - 1;
    let mut objective = 0.0f64;
    let mut clipped = 0usize;
    let mut max_dev = 0.0f64;
    let mut kl_sum = 0.0f64;
    let mut targets: Vec<(usize, TokenId, S)> = Vec::with_capacity(rollout.response.len());
    for (t, &tok) in rollout.response.iter().enumerate() {
        let new_lp = new_lps[t];
        let old_lp = old_lps[t];
        let ratio = (new_lp - old_lp).exp();
        let surrogate = clipped_term(ratio, adv, cfg.clip_low, cfg.clip_high)?;
        let unclipped = ratio * adv;
        // d(surrogate)/d(new_lp): ρ·Â while the unclipped branch is active
        // (including ties), zero once the clamp binds.
        let mut weight = if unclipped > surrogate {
            clipped += 1;
            0.0
        } else {
            unclipped
        };
        let mut contribution = surrogate;
        if let Some(refs) = &ref_lps {
            let d = refs[t] - new_lp;
            let kl = d.exp_m1() - d;
            contribution -= cfg.kl_beta * kl;
            weight += cfg.kl_beta * d.exp_m1();
            kl_sum += kl;
        }
        objective += contribution;
        max_dev = max_dev.max((ratio - 1.0).abs());
        targets.push((base + t, tok, sc::<S>(weight)));
    }
    let grad = backward_weighted(&state, &targets);
    Ok(RolloutPartial {
        objective,
        grad: Some(grad),
        gated_in: true,
        tokens: rollout.response.len(),
        clipped,
        max_dev,
        kl_sum,
    })
}
