//! Sequential forward pass.
//!
//! [`SeqState`] processes one token at a time against a growing KV cache and
//! keeps the full activation trace needed by the backward pass. Every caller
//! (sampling, scoring, training) runs this same code path, so log-probs
//! recorded while sampling are bit-identical to log-probs recomputed by
//! [`score`] on the same parameters.

use super::{ContextKind, PolicyParams, ScoredSequence};
use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};
use crate::task::TaskInstance;
use crate::vocab::TokenId;

/// RMSNorm variance floor.
const RMS_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// y = W x + b for a row-major [out_dim, in_dim] matrix.
pub(crate) fn matvec<S: Scalar>(w: &[S], b: &[S], x: &[S], out_dim: usize, in_dim: usize) -> Vec<S> {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(b.len(), out_dim);
    debug_assert_eq!(x.len(), in_dim);
    (0..out_dim)
        .map(|r| b[r] + dot(&w[r * in_dim..(r + 1) * in_dim], x))
        .collect()
}

/// x / sqrt(mean(x^2) + eps); returns the normalized vector and 1/rms.
pub(crate) fn rmsnorm<S: Scalar>(x: &[S]) -> (Vec<S>, S) {
    let n: S = sc(x.len() as f64);
    let ms = x.iter().map(|&v| v * v).sum::<S>() / n;
    let inv = (ms + sc::<S>(RMS_EPS)).sqrt().recip();
    (x.iter().map(|&v| v * inv).collect(), inv)
}

/// GELU, tanh approximation.
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let c0: S = sc(0.797_884_560_802_865_4); // sqrt(2/pi)
    let c1: S = sc(0.044_715);
    let u = c0 * (x + c1 * x * x * x);
    sc::<S>(0.5) * x * (S::one() + u.tanh())
}

pub(crate) fn gelu_deriv<S: Scalar>(x: S) -> S {
    let c0: S = sc(0.797_884_560_802_865_4);
    let c1: S = sc(0.044_715);
    let half: S = sc(0.5);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let du = c0 * (S::one() + sc::<S>(3.0) * c1 * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

/// Log-softmax with max subtraction.
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let maxv = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let sum: S = logits.iter().map(|&l| (l - maxv).exp()).sum();
    let lse = maxv + sum.ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Softmax of logits / temperature (temperature > 0).
pub fn softmax_tempered<S: Scalar>(logits: &[S], temperature: S) -> Vec<S> {
    let scaled: Vec<S> = logits.iter().map(|&l| l / temperature).collect();
    let maxv = scaled.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = scaled.iter().map(|&l| (l - maxv).exp()).collect();
    let denom: S = exps.iter().cloned().sum();
    exps.iter().map(|&e| e / denom).collect()
}

/// Cached keys/values for one layer, flattened [position * width].
pub(crate) struct LayerKv<S> {
    pub k: Vec<S>,
    pub v: Vec<S>,
}

/// Activations of one layer at one position, kept for the backward pass.
pub(crate) struct LayerTrace<S> {
    pub x_attn_in: Vec<S>,
    pub a_inv: S,
    pub a: Vec<S>,
    pub q: Vec<S>,
    /// Attention probabilities, head-major: [head * attended_len].
    pub probs: Vec<S>,
    pub ctx: Vec<S>,
    pub x_mlp_in: Vec<S>,
    pub m_inv: S,
    pub m: Vec<S>,
    pub h_pre: Vec<S>,
    pub h_act: Vec<S>,
}

/// Full trace of one position.
pub(crate) struct PosTrace<S> {
    pub layers: Vec<LayerTrace<S>>,
    pub x_final: Vec<S>,
    pub f_inv: S,
    pub f: Vec<S>,
}

/// Incremental sequence evaluation with KV cache and activation trace.
pub struct SeqState<'p, S: Scalar> {
    pub(crate) params: &'p PolicyParams<S>,
    pub(crate) tokens: Vec<TokenId>,
    pub(crate) kv: Vec<LayerKv<S>>,
    pub(crate) trace: Vec<PosTrace<S>>,
}

impl<'p, S: Scalar> SeqState<'p, S> {
    pub fn new(params: &'p PolicyParams<S>) -> Self {
        let layers = params.arch().layers;
        SeqState {
            params,
            tokens: Vec::new(),
            kv: (0..layers).map(|_| LayerKv { k: Vec::new(), v: Vec::new() }).collect(),
            trace: Vec::new(),
        }
    }

    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Feeds one token at the next position and returns the logits that
    /// predict the following token.
    pub fn push(&mut self, tok: TokenId) -> Result<Vec<S>> {
        let params = self.params;
        let arch = *params.arch();
        let pos = self.tokens.len();
        if pos >= arch.max_context {
            return Err(Error::ContextOverflow { got: pos + 1, max: arch.max_context });
        }
        if (tok as usize) >= arch.vocab_size {
            return Err(Error::TokenOutOfRange { id: tok, vocab: arch.vocab_size });
        }
        let (d, fw, heads, hd) = (arch.width, arch.ffn_width, arch.heads, arch.head_dim());
        let lay = params.layout().clone();
        let scale: S = sc(1.0 / (hd as f64).sqrt());

        // Token + position embedding.
        let mut x: Vec<S> = params
            .row(lay.wte, d, tok as usize)
            .iter()
            .zip(params.row(lay.wpe, d, pos))
            .map(|(&te, &pe)| te + pe)
            .collect();

        let mut layer_traces = Vec::with_capacity(arch.layers);
        for (li, ll) in lay.layers.iter().enumerate() {
            let x_attn_in = x.clone();
            let (a, a_inv) = rmsnorm(&x);
            let q = matvec(params.slice(ll.wq, d * d), params.slice(ll.bq, d), &a, d, d);
            let k = matvec(params.slice(ll.wk, d * d), params.slice(ll.bk, d), &a, d, d);
            let v = matvec(params.slice(ll.wv, d * d), params.slice(ll.bv, d), &a, d, d);
            let kv = &mut self.kv[li];
            kv.k.extend_from_slice(&k);
            kv.v.extend_from_slice(&v);

            let t = pos + 1;
            let mut probs = vec![S::zero(); heads * t];
            let mut ctx = vec![S::zero(); d];
            for h in 0..heads {
                let qh = &q[h * hd..(h + 1) * hd];
                let mut att = vec![S::zero(); t];
                let mut maxv = S::neg_infinity();
                for j in 0..t {
                    let kj = &kv.k[j * d + h * hd..j * d + (h + 1) * hd];
                    let s = dot(qh, kj) * scale;
                    att[j] = s;
                    if s > maxv {
                        maxv = s;
                    }
                }
                let mut denom = S::zero();
                for a_j in att.iter_mut() {
                    *a_j = (*a_j - maxv).exp();
                    denom = denom + *a_j;
                }
                let inv_denom = denom.recip();
                for j in 0..t {
                    probs[h * t + j] = att[j] * inv_denom;
                }
                let ctx_h = &mut ctx[h * hd..(h + 1) * hd];
                for j in 0..t {
                    let p = probs[h * t + j];
                    let vj = &kv.v[j * d + h * hd..j * d + (h + 1) * hd];
                    for (c, &vv) in ctx_h.iter_mut().zip(vj) {
                        *c = *c + p * vv;
                    }
                }
            }
            let attn_out = matvec(params.slice(ll.wo, d * d), params.slice(ll.bo, d), &ctx, d, d);
            let x_mlp_in: Vec<S> = x_attn_in.iter().zip(&attn_out).map(|(&r, &o)| r + o).collect();
            let (m, m_inv) = rmsnorm(&x_mlp_in);
            let h_pre = matvec(params.slice(ll.w1, fw * d), params.slice(ll.b1, fw), &m, fw, d);
            let h_act: Vec<S> = h_pre.iter().map(|&h_| gelu(h_)).collect();
            let mlp_out = matvec(params.slice(ll.w2, d * fw), params.slice(ll.b2, d), &h_act, d, fw);
            let x_next: Vec<S> = x_mlp_in.iter().zip(&mlp_out).map(|(&r, &o)| r + o).collect();

            layer_traces.push(LayerTrace {
                x_attn_in,
                a_inv,
                a,
                q,
                probs,
                ctx,
                x_mlp_in,
                m_inv,
                m,
                h_pre,
                h_act,
            });
            x = x_next;
        }

        let x_final = x.clone();
        let (f, f_inv) = rmsnorm(&x);
        let logits = matvec(
            params.slice(lay.wu, arch.vocab_size * d),
            params.slice(lay.bu, arch.vocab_size),
            &f,
            arch.vocab_size,
            d,
        );
        self.trace.push(PosTrace { layers: layer_traces, x_final, f_inv, f });
        self.tokens.push(tok);
        Ok(logits)
    }

    /// Recomputes the logits emitted at an already-processed position.
    pub(crate) fn logits_at(&self, pos: usize) -> Vec<S> {
        let arch = self.params.arch();
        let lay = self.params.layout();
        matvec(
            self.params.slice(lay.wu, arch.vocab_size * arch.width),
            self.params.slice(lay.bu, arch.vocab_size),
            &self.trace[pos].f,
            arch.vocab_size,
            arch.width,
        )
    }
}

/// Next-token logits after consuming `context` (which must be non-empty and
/// fit the model's maximum context).
pub fn forward_logits<S: Scalar>(params: &PolicyParams<S>, context: &[TokenId]) -> Result<Vec<S>> {
    if context.is_empty() {
        return Err(Error::EmptySequence("context"));
    }
    let mut state = SeqState::new(params);
    let mut logits = Vec::new();
    for &tok in context {
        logits = state.push(tok)?;
    }
    Ok(logits)
}

/// Scores `response` against an explicit context prefix, returning the state
/// (for backprop) and per-token log-probabilities.
///
/// The model consumes `prefix ⊕ response[..len-1]`; the final response token
/// is only ever a prediction target, so the occupied context is
/// `prefix.len() + response.len() - 1` positions.
pub(crate) fn score_with_prompt<'p, S: Scalar>(
    params: &'p PolicyParams<S>,
    prefix: &[TokenId],
    response: &[TokenId],
) -> Result<(SeqState<'p, S>, Vec<f64>)> {
    if prefix.is_empty() {
        return Err(Error::EmptySequence("context prefix"));
    }
    if response.is_empty() {
        return Err(Error::EmptySequence("response"));
    }
    let arch = params.arch();
    let needed = prefix.len() + response.len() - 1;
    if needed > arch.max_context {
        return Err(Error::ContextOverflow { got: needed, max: arch.max_context });
    }
    if let Some(&bad) = response.iter().find(|&&t| (t as usize) >= arch.vocab_size) {
        return Err(Error::TokenOutOfRange { id: bad, vocab: arch.vocab_size });
    }
    let mut state = SeqState::new(params);
    let mut logits = Vec::new();
    for &tok in prefix {
        logits = state.push(tok)?;
    }
    let mut logprobs = Vec::with_capacity(response.len());
    for (t, &tok) in response.iter().enumerate() {
        let lsm = log_softmax(&logits);
        logprobs.push(lsm[tok as usize].to_f64());
        if t + 1 < response.len() {
            logits = state.push(tok)?;
        }
    }
    Ok((state, logprobs))
}

/// The context prefix a scoring mode uses: the full prompt for conditional
/// scoring, the prompt's leading BOS alone for marginal scoring.
pub(crate) fn context_prefix(task: &TaskInstance, kind: ContextKind) -> &[TokenId] {
    match kind {
        ContextKind::Conditional => &task.prompt_tokens,
        ContextKind::Marginal => &task.prompt_tokens[..1],
    }
}

/// Per-token log-probabilities of a response under the chosen context kind.
pub fn score<S: Scalar>(
    params: &PolicyParams<S>,
    task: &TaskInstance,
    response: &[TokenId],
    kind: ContextKind,
) -> Result<ScoredSequence> {
    let (_, logprobs) = score_with_prompt(params, context_prefix(task, kind), response)?;
    Ok(ScoredSequence { kind, tokens: response.to_vec(), logprobs })
}
