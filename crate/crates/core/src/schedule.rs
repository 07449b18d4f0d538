//! Two-phase training schedule.
//!
//! Steps 1..=threshold run the objective in the marginal (pre-train) space
//! with the negative-sign gate; every later step runs the conditional
//! (post-train) space ungated. At the first step past the threshold the
//! trainer performs a one-time "reincarnation": it checkpoints the current
//! parameters, zeroes the optimizer state, and (when KL regularization is
//! on) re-freezes the reference policy — the parameters themselves carry
//! over untouched.

use crate::objective::{ObjectiveConfig, SampleGate, Space};

/// Phase bookkeeping for a scheduled run. Steps are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseState {
    /// Last step of the first phase; 0 disables it entirely.
    pub threshold: u64,
    /// Whether the one-time phase transition has been performed.
    pub reincarnated: bool,
}

impl PhaseState {
    pub fn new(threshold: u64) -> Self {
        PhaseState { threshold, reincarnated: false }
    }

    /// Rebuilds the flag for a run resumed after `completed` steps: the
    /// transition fires at the boundary of step threshold+1, so it already
    /// happened iff that step completed.
    pub fn resumed(threshold: u64, completed: u64) -> Self {
        PhaseState { threshold, reincarnated: completed > threshold }
    }

    /// True exactly at the boundary where the one-time transition must run.
    pub fn needs_reincarnation(&self, step: u64) -> bool {
        !self.reincarnated && step > self.threshold
    }

    /// Records that the transition ran. Running it twice is a logic error.
    pub fn mark_reincarnated(&mut self) {
        assert!(!self.reincarnated, "reincarnation must happen exactly once");
        self.reincarnated = true;
    }
}

/// The objective actually applied at `step`: the base configuration with
/// space and gate overridden by the phase.
pub fn objective_for_step(step: u64, threshold: u64, base: &ObjectiveConfig) -> ObjectiveConfig {
    let mut cfg = *base;
    if step <= threshold {
        cfg.space = Space::PreTrain;
        cfg.gate = SampleGate::NsrOnly;
    } else {
        cfg.space = Space::PostTrain;
        cfg.gate = SampleGate::All;
    }
    cfg
}

/// Metrics label for a step's (space, gate) combination.
pub fn phase_label(space: Space, gate: SampleGate) -> &'static str {
    match (space, gate) {
        (Space::PreTrain, SampleGate::NsrOnly) => "nsr_prerl",
        (Space::PreTrain, _) => "pre_rl",
        (Space::PostTrain, _) => "post_rl",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{Estimator, LengthNormalizer};

    fn base() -> ObjectiveConfig {
        ObjectiveConfig {
            estimator: Estimator::Grpo,
            clip_low: 0.2,
            clip_high: 0.2,
            kl_beta: 0.0,
            space: Space::PostTrain,
            gate: SampleGate::All,
            normalizer: LengthNormalizer::TokenTotal,
            max_response: 16,
        }
    }

    #[test]
    fn step_objective_switches_space_and_gate_at_the_threshold() {
        let b = base();
        let early = objective_for_step(1, 20, &b);
        assert_eq!(early.space, Space::PreTrain);
        assert_eq!(early.gate, SampleGate::NsrOnly);
        let boundary = objective_for_step(20, 20, &b);
        assert_eq!(boundary.space, Space::PreTrain);
        let late = objective_for_step(21, 20, &b);
        assert_eq!(late.space, Space::PostTrain);
        assert_eq!(late.gate, SampleGate::All);
        // Degenerate threshold: every step is plain post-train RL.
        let degenerate = objective_for_step(1, 0, &b);
        assert_eq!(degenerate.space, Space::PostTrain);
        assert_eq!(degenerate.gate, SampleGate::All);
        // Untouched fields are copied.
        assert_eq!(early.clip_low, b.clip_low);
        assert_eq!(early.estimator, b.estimator);
    }

    #[test]
    fn reincarnation_fires_exactly_once_at_the_boundary() {
        let mut phase = PhaseState::new(2);
        assert!(!phase.needs_reincarnation(1));
        assert!(!phase.needs_reincarnation(2));
        assert!(phase.needs_reincarnation(3));
        phase.mark_reincarnated();
        assert!(!phase.needs_reincarnation(3));
        assert!(!phase.needs_reincarnation(4));

        let mut immediate = PhaseState::new(0);
        assert!(immediate.needs_reincarnation(1));
        immediate.mark_reincarnated();
        assert!(!immediate.needs_reincarnation(2));
    }

    #[test]
    #[should_panic(expected = "exactly once")]
    fn double_reincarnation_is_a_logic_error() {
        let mut phase = PhaseState::new(0);
        phase.mark_reincarnated();
        phase.mark_reincarnated();
    }

    #[test]
    fn resumed_state_recovers_the_flag_from_completed_steps() {
        assert!(!PhaseState::resumed(20, 0).reincarnated);
        assert!(!PhaseState::resumed(20, 20).reincarnated);
        assert!(PhaseState::resumed(20, 21).reincarnated);
        assert!(!PhaseState::resumed(0, 0).reincarnated);
        assert!(PhaseState::resumed(0, 1).reincarnated);
    }

    #[test]
    fn phase_labels_cover_all_combinations() {
        assert_eq!(phase_label(Space::PreTrain, SampleGate::NsrOnly), "nsr_prerl");
        assert_eq!(phase_label(Space::PreTrain, SampleGate::All), "pre_rl");
        assert_eq!(phase_label(Space::PreTrain, SampleGate::PsrOnly), "pre_rl");
        assert_eq!(phase_label(Space::PostTrain, SampleGate::All), "post_rl");
        assert_eq!(phase_label(Space::PostTrain, SampleGate::NsrOnly), "post_rl");
    }
}
