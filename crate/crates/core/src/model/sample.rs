//! Temperature sampling of one rollout.

use super::forward::{log_softmax, score_with_prompt, softmax_tempered, SeqState};
use super::PolicyParams;
use crate::error::{Error, Result};
use crate::objective::Rollout;
use crate::rng::Stream;
use crate::scalar::{sc, Scalar};
use crate::task::TaskInstance;
use crate::vocab::{TokenId, Vocabulary};

/// Inverse-CDF draw from a categorical distribution; `u` is uniform in [0,1).
fn categorical<S: Scalar>(probs: &[S], u: f64) -> TokenId {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p.to_f64();
        if u < cum {
            return i as TokenId;
        }
    }
    (probs.len() - 1) as TokenId
}

/// Samples one response for `task`.
///
/// Generation is always conditional (the full prompt is in context), draws
/// tokens from softmax(logits / temperature), and stops at the first EOS or
/// after `max_response` tokens, whichever comes first. The returned
/// [`Rollout`] records untempered per-token log-probabilities in both the
/// conditional and the marginal context, evaluated under `params`; reward
/// and advantage start unassigned.
pub fn sample_rollout<S: Scalar>(
    params: &PolicyParams<S>,
    vocab: &Vocabulary,
    task: &TaskInstance,
    temperature: f64,
    max_response: usize,
    rng: &mut Stream,
) -> Result<Rollout> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sampling temperature must be positive, got {temperature}"
        )));
    }
    if max_response == 0 {
        return Err(Error::InvalidConfig("max_response must be at least 1".into()));
    }
    let arch = params.arch();
    // The final sampled token is never fed back, so the deepest position is
    // prompt + max_response - 1.
    let needed = task.prompt_tokens.len() + max_response - 1;
    if needed > arch.max_context {
        return Err(Error::ContextOverflow { got: needed, max: arch.max_context });
    }

    let temp: S = sc(temperature);
    let mut state = SeqState::new(params);
    let mut logits = Vec::new();
    for &tok in &task.prompt_tokens {
        logits = state.push(tok)?;
    }
    let mut response: Vec<TokenId> = Vec::new();
    let mut logp_conditional: Vec<f64> = Vec::new();
    let mut top1_sum = 0.0;
    loop {
        let lsm = log_softmax(&logits);
        top1_sum += lsm.iter().cloned().fold(S::neg_infinity(), S::max).to_f64();
        let probs = softmax_tempered(&logits, temp);
        let tok = categorical(&probs, rng.next_f64());
        response.push(tok);
        logp_conditional.push(lsm[tok as usize].to_f64());
        if tok == vocab.eos() || response.len() == max_response {
            break;
        }
        logits = state.push(tok)?;
    }

    let (_, logp_marginal) = score_with_prompt(params, &task.prompt_tokens[..1], &response)?;
    Ok(Rollout {
        response,
        reward: 0.0,
        logp_conditional,
        logp_marginal,
        advantage: None,
        top1_logprob_sum: top1_sum,
    })
}
