//! The rollouts JSONL format shared by `dsrl rollout` (writer) and
//! `dsrl analyze` (reader).
//!
//! One JSON object per line: `{"group": id, "task": {...}, "response":
//! [token ids], "reward": value}`. Lines with the same `group` id came from
//! the same prompt and must carry an identical task.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dsrl_core::{ResponseSample, Rollout, RolloutGroup, TaskInstance, TokenId, Vocabulary};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutLine {
    pub group: u64,
    pub task: TaskInstance,
    pub response: Vec<TokenId>,
    pub reward: f64,
}

/// Reads and validates a rollouts file; errors carry 1-based line numbers.
pub fn read_rollouts(path: &Path, vocab: &Vocabulary) -> CliResult<Vec<RolloutLine>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("cannot read rollouts file {}: {e}", path.display())))?;
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            return Err(CliError::runtime(format!("rollouts line {lineno}: blank line")));
        }
        let line: RolloutLine = serde_json::from_str(raw)
            .map_err(|e| CliError::runtime(format!("rollouts line {lineno}: {e}")))?;
        line.task
            .validate(vocab)
            .map_err(|e| CliError::runtime(format!("rollouts line {lineno}: {e}")))?;
        vocab
            .check_ids(&line.response)
            .map_err(|e| CliError::runtime(format!("rollouts line {lineno}: {e}")))?;
        if line.response.is_empty() {
            return Err(CliError::runtime(format!("rollouts line {lineno}: empty response")));
        }
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(CliError::runtime(format!("rollouts file {} is empty", path.display())));
    }
    Ok(lines)
}

/// Serializes rollout lines, one JSON object per line.
pub fn render_rollouts(lines: &[RolloutLine]) -> CliResult<String> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Per-response view used by the gradient and log-probability analyses.
pub fn to_samples(lines: &[RolloutLine]) -> Vec<ResponseSample> {
    lines
        .iter()
        .map(|l| ResponseSample {
            task: l.task.clone(),
            response: l.response.clone(),
            reward: l.reward,
        })
        .collect()
}

/// Rebuilds prompt groups (ordered by group id) for the solved/unsolved
/// analysis. Only responses and rewards are meaningful downstream; scoring
/// fields are left empty.
pub fn to_groups(lines: &[RolloutLine]) -> CliResult<Vec<RolloutGroup>> {
    let mut grouped: BTreeMap<u64, (TaskInstance, Vec<Rollout>)> = BTreeMap::new();
    for line in lines {
        let entry = grouped
            .entry(line.group)
            .or_insert_with(|| (line.task.clone(), Vec::new()));
        if entry.0 != line.task {
            return Err(CliError::runtime(format!(
                "rollouts group {}: lines disagree about the task",
                line.group
            )));
        }
        entry.1.push(Rollout {
            response: line.response.clone(),
            reward: line.reward,
            logp_conditional: Vec::new(),
            logp_marginal: Vec::new(),
            advantage: None,
            top1_logprob_sum: 0.0,
        });
    }
    Ok(grouped
        .into_values()
        .map(|(task, rollouts)| RolloutGroup::new(task, rollouts))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsrl_core::{make_task, TaskKind};

    fn sample_lines() -> Vec<RolloutLine> {
        let vocab = Vocabulary::default_small();
        let t0 = make_task(&vocab, TaskKind::LastToken, 1, 1).unwrap();
        let t1 = make_task(&vocab, TaskKind::LastToken, 1, 2).unwrap();
        vec![
            RolloutLine { group: 0, task: t0.clone(), response: vec![3], reward: 1.0 },
            RolloutLine { group: 0, task: t0, response: vec![4], reward: 0.0 },
            RolloutLine { group: 1, task: t1.clone(), response: vec![5], reward: 0.0 },
            RolloutLine { group: 1, task: t1, response: vec![6], reward: 0.0 },
        ]
    }

    #[test]
    fn rollout_lines_round_trip_through_text() {
        let vocab = Vocabulary::default_small();
        let lines = sample_lines();
        let text = render_rollouts(&lines).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        fs::write(&path, &text).unwrap();
        let back = read_rollouts(&path, &vocab).unwrap();
        assert_eq!(render_rollouts(&back).unwrap(), text);
    }

    #[test]
    fn groups_are_rebuilt_by_id() {
        let groups = to_groups(&sample_lines()).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].rollouts.len(), 2);
        assert_eq!(groups[0].rollouts[0].reward, 1.0);
    }

    #[test]
    fn task_mismatch_within_a_group_is_rejected() {
        let mut lines = sample_lines();
        lines[1].task = lines[2].task.clone();
        let err = to_groups(&lines).unwrap_err();
        assert!(err.message().contains("group 0"), "{err}");
    }
}
