//! Synthetic verifiable tasks and the exact-match verifier.
//!
//! Every task is a (prompt, answer) pair over the shared vocabulary. Prompts
//! are framed as `[BOS] payload... [SEP]`; answers are raw payload tokens.
//! The verifier is exact: a response passes only if, after dropping PAD
//! tokens and at most one trailing EOS, it equals the answer token-for-token.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, Stream};
use crate::vocab::{TokenId, Vocabulary};

/// The four task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Answer is the final payload token of the prompt.
    LastToken,
    /// Answer repeats the payload verbatim.
    Copy,
    /// Answer is the payload reversed.
    Reverse,
    /// Payload is two digits a, b; answer is the digit (a + b) mod 10.
    AddMod,
}

impl TaskKind {
    /// Stable lowercase name, used in dataset files and reports.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LastToken => "last_token",
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::AddMod => "add_mod",
        }
    }

    /// Parses a task name as written by [`TaskKind::name`].
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "last_token" => Some(TaskKind::LastToken),
            "copy" => Some(TaskKind::Copy),
            "reverse" => Some(TaskKind::Reverse),
            "add_mod" => Some(TaskKind::AddMod),
            _ => None,
        }
    }

    /// Inclusive payload length bounds for this family.
    pub fn length_bounds(self) -> (usize, usize) {
        match self {
            TaskKind::AddMod => (2, 2),
            _ => (1, 16),
        }
    }
}

/// One concrete prompt/answer pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    /// `[BOS] payload... [SEP]`.
    pub prompt_tokens: Vec<TokenId>,
    /// Expected response, non-empty, no special tokens.
    pub answer_tokens: Vec<TokenId>,
    /// Seed this instance was generated from (recorded for provenance).
    pub seed: u64,
}

impl TaskInstance {
    /// Payload slice of the prompt (between BOS and SEP).
    pub fn payload(&self) -> &[TokenId] {
        &self.prompt_tokens[1..self.prompt_tokens.len() - 1]
    }

    /// Checks the structural invariants against a vocabulary.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        vocab.check_ids(&self.prompt_tokens)?;
        vocab.check_ids(&self.answer_tokens)?;
        if self.prompt_tokens.len() < 2
            || self.prompt_tokens[0] != vocab.bos()
            || *self.prompt_tokens.last().unwrap() != vocab.sep()
        {
            return Err(Error::InvalidConfig(
                "prompt must be [BOS] payload... [SEP]".into(),
            ));
        }
        if self.answer_tokens.is_empty() {
            return Err(Error::EmptySequence("answer_tokens"));
        }
        if self.answer_tokens.iter().any(|&t| vocab.is_special(t)) {
            return Err(Error::InvalidConfig(
                "answer_tokens must not contain special tokens".into(),
            ));
        }
        Ok(())
    }
}

/// Reward values assigned by the verifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub success: f64,
    pub failure: f64,
}

impl RewardSpec {
    pub fn new(success: f64, failure: f64) -> Result<Self> {
        if !(success > failure) {
            return Err(Error::InvalidConfig(format!(
                "reward success ({success}) must exceed failure ({failure})"
            )));
        }
        Ok(RewardSpec { success, failure })
    }

    pub fn reward(&self, correct: bool) -> f64 {
        if correct {
            self.success
        } else {
            self.failure
        }
    }
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec { success: 1.0, failure: 0.0 }
    }
}

/// Deterministically builds one task instance.
///
/// `length` is the payload length; bounds are 1..=16 for last_token / copy /
/// reverse and exactly 2 for add_mod. The same (kind, length, seed) triple
/// always yields the same instance.
pub fn make_task(
    vocab: &Vocabulary,
    kind: TaskKind,
    length: usize,
    seed: u64,
) -> Result<TaskInstance> {
    let (min, max) = kind.length_bounds();
    if length < min || length > max {
        return Err(Error::BadTaskLength { task: kind.name(), got: length, min, max });
    }
    let mut rng = Stream::keyed(Domain::TaskPayload, &[kind as u64, length as u64, seed]);
    let payload: Vec<TokenId> = match kind {
        TaskKind::AddMod => (0..length)
            .map(|_| vocab.digit(rng.next_below(10) as u32))
            .collect(),
        _ => {
            let pool = vocab.payload_ids();
            (0..length)
                .map(|_| pool[rng.next_below(pool.len() as u64) as usize])
                .collect()
        }
    };
    let answer = match kind {
        TaskKind::LastToken => vec![*payload.last().unwrap()],
        TaskKind::Copy => payload.clone(),
        TaskKind::Reverse => payload.iter().rev().copied().collect(),
        TaskKind::AddMod => {
            let a = payload[0];
            let b = payload[1];
            vec![vocab.digit((a + b) % 10)]
        }
    };
    let mut prompt = Vec::with_capacity(length + 2);
    prompt.push(vocab.bos());
    prompt.extend_from_slice(&payload);
    prompt.push(vocab.sep());
    Ok(TaskInstance { kind, prompt_tokens: prompt, answer_tokens: answer, seed })
}

/// Computes the expected answer for an explicit payload (test/oracle helper).
pub fn answer_for_payload(vocab: &Vocabulary, kind: TaskKind, payload: &[TokenId]) -> Vec<TokenId> {
    match kind {
        TaskKind::LastToken => vec![*payload.last().expect("payload non-empty")],
        TaskKind::Copy => payload.to_vec(),
        TaskKind::Reverse => payload.iter().rev().copied().collect(),
        TaskKind::AddMod => vec![vocab.digit((payload[0] + payload[1]) % 10)],
    }
}

/// Exact-match verification.
///
/// The response is normalized by removing every PAD token and then at most
/// one trailing EOS; it passes only if the remainder equals the answer
/// exactly. Any other deviation (wrong token, extra token, missing token,
/// stray mid-sequence EOS) fails.
pub fn verify(vocab: &Vocabulary, task: &TaskInstance, response: &[TokenId]) -> bool {
    let mut kept: Vec<TokenId> = response.iter().copied().filter(|&t| t != vocab.pad()).collect();
    if kept.last() == Some(&vocab.eos()) {
        kept.pop();
    }
    kept == task.answer_tokens
}
