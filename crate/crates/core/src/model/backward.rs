//! Hand-written backward pass.
//!
//! Computes d/dθ of Σ_t w_t · log π(y_t | context) by walking the activation
//! trace of a [`SeqState`] in reverse: unembedding, final norm, then per
//! layer MLP and causal attention, down to the embeddings. All loops run in
//! a fixed order, so gradients are bitwise deterministic.

use super::forward::{context_prefix, dot, gelu_deriv, score_with_prompt, SeqState};
use super::{ContextKind, GradientVector, PolicyParams};
use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};
use crate::task::TaskInstance;
use crate::vocab::TokenId;

/// y += a * x.
#[inline]
fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Accumulates the RMSNorm input gradient: given dy at the norm output,
/// dx_i += inv·dy_i − (inv³/n)·(Σ_j dy_j x_j)·x_i.
fn rms_backward_acc<S: Scalar>(dx: &mut [S], dy: &[S], x: &[S], inv: S) {
    let n: S = sc(x.len() as f64);
    let k = inv * inv * inv * dot(dy, x) / n;
    for i in 0..x.len() {
        dx[i] = dx[i] + inv * dy[i] - k * x[i];
    }
}

/// Gradient of Σ w·log softmax(logits)[target] over the positions listed in
/// `targets` (position, target token, weight), with respect to every
/// parameter. Positions after the last target are ignored; they cannot
/// influence the objective.
pub(crate) fn backward_weighted<S: Scalar>(
    state: &SeqState<'_, S>,
    targets: &[(usize, TokenId, S)],
) -> GradientVector<S> {
    let params: &PolicyParams<S> = state.params;
    let arch = *params.arch();
    let lay = params.layout().clone();
    let (d, fw, heads, hd, vsz) = (
        arch.width,
        arch.ffn_width,
        arch.heads,
        arch.head_dim(),
        arch.vocab_size,
    );
    let scale: S = sc(1.0 / (hd as f64).sqrt());
    let mut g = vec![S::zero(); params.param_count()];
    if targets.is_empty() {
        return GradientVector::new(g);
    }
    let max_pos = targets.iter().map(|&(p, _, _)| p).max().unwrap();
    debug_assert!(max_pos < state.tokens.len());
    // dx[pos] holds the gradient flowing into the residual stream; it starts
    // at the final-norm input and is peeled back one block at a time.
    let mut dx: Vec<Vec<S>> = (0..=max_pos).map(|_| vec![S::zero(); d]).collect();

    // Unembedding and final norm, only at target positions.
    for &(pos, target, w) in targets {
        let tr = &state.trace[pos];
        let logits = state.logits_at(pos);
        let probs = super::forward::softmax_tempered(&logits, S::one());
        let mut df = vec![S::zero(); d];
        for v in 0..vsz {
            // d/dlogit_v of w·log softmax[target] = w·(1[v = target] − p_v)
            let mut dl = -w * probs[v];
            if v == target as usize {
                dl = dl + w;
            }
            g[lay.bu + v] = g[lay.bu + v] + dl;
            axpy(&mut g[lay.wu + v * d..lay.wu + (v + 1) * d], dl, &tr.f);
            axpy(&mut df, dl, params.row(lay.wu, d, v));
        }
        rms_backward_acc(&mut dx[pos], &df, &tr.x_final, tr.f_inv);
    }

    for li in (0..arch.layers).rev() {
        let ll = &lay.layers[li];
        let kv = &state.kv[li];

        // MLP block, independent per position.
        for pos in 0..=max_pos {
            let tr = &state.trace[pos].layers[li];
            let dxo = std::mem::take(&mut dx[pos]);
            let mut dh_act = vec![S::zero(); fw];
            for r in 0..d {
                let dl = dxo[r];
                g[ll.b2 + r] = g[ll.b2 + r] + dl;
                axpy(&mut g[ll.w2 + r * fw..ll.w2 + (r + 1) * fw], dl, &tr.h_act);
                axpy(&mut dh_act, dl, params.row(ll.w2, fw, r));
            }
            let mut dm = vec![S::zero(); d];
            for r in 0..fw {
                let dh = dh_act[r] * gelu_deriv(tr.h_pre[r]);
                g[ll.b1 + r] = g[ll.b1 + r] + dh;
                axpy(&mut g[ll.w1 + r * d..ll.w1 + (r + 1) * d], dh, &tr.m);
                axpy(&mut dm, dh, params.row(ll.w1, d, r));
            }
            // Residual: gradient reaches the block input both directly and
            // through the norm.
            let mut dxm = dxo;
            rms_backward_acc(&mut dxm, &dm, &tr.x_mlp_in, tr.m_inv);
            dx[pos] = dxm;
        }

        // Attention block. Key/value gradients accumulate across every query
        // position before being pushed through their projections.
        let mut dk: Vec<Vec<S>> = (0..=max_pos).map(|_| vec![S::zero(); d]).collect();
        let mut dv: Vec<Vec<S>> = (0..=max_pos).map(|_| vec![S::zero(); d]).collect();
        let mut da: Vec<Vec<S>> = (0..=max_pos).map(|_| vec![S::zero(); d]).collect();
        for i in 0..=max_pos {
            let tr = &state.trace[i].layers[li];
            let dxo = &dx[i];
            let mut dctx = vec![S::zero(); d];
            for r in 0..d {
                let dl = dxo[r];
                g[ll.bo + r] = g[ll.bo + r] + dl;
                axpy(&mut g[ll.wo + r * d..ll.wo + (r + 1) * d], dl, &tr.ctx);
                axpy(&mut dctx, dl, params.row(ll.wo, d, r));
            }
            let t = i + 1;
            let mut dq = vec![S::zero(); d];
            for h in 0..heads {
                let dctx_h = &dctx[h * hd..(h + 1) * hd];
                let ph = &tr.probs[h * t..(h + 1) * t];
                let qh = &tr.q[h * hd..(h + 1) * hd];
                let mut dp = vec![S::zero(); t];
                for j in 0..t {
                    let vj = &kv.v[j * d + h * hd..j * d + (h + 1) * hd];
                    dp[j] = dot(dctx_h, vj);
                    axpy(&mut dv[j][h * hd..(h + 1) * hd], ph[j], dctx_h);
                }
                // Softmax backward over the attended positions.
                let s: S = (0..t).map(|j| dp[j] * ph[j]).sum();
                for j in 0..t {
                    let datt = ph[j] * (dp[j] - s);
                    let kj = &kv.k[j * d + h * hd..j * d + (h + 1) * hd];
                    axpy(&mut dq[h * hd..(h + 1) * hd], datt * scale, kj);
                    axpy(&mut dk[j][h * hd..(h + 1) * hd], datt * scale, qh);
                }
            }
            for r in 0..d {
                let dl = dq[r];
                g[ll.bq + r] = g[ll.bq + r] + dl;
                axpy(&mut g[ll.wq + r * d..ll.wq + (r + 1) * d], dl, &tr.a);
                axpy(&mut da[i], dl, params.row(ll.wq, d, r));
            }
        }
        for j in 0..=max_pos {
            let tr = &state.trace[j].layers[li];
            for r in 0..d {
                let dlk = dk[j][r];
                g[ll.bk + r] = g[ll.bk + r] + dlk;
                axpy(&mut g[ll.wk + r * d..ll.wk + (r + 1) * d], dlk, &tr.a);
                axpy(&mut da[j], dlk, params.row(ll.wk, d, r));

                let dlv = dv[j][r];
                g[ll.bv + r] = g[ll.bv + r] + dlv;
                axpy(&mut g[ll.wv + r * d..ll.wv + (r + 1) * d], dlv, &tr.a);
                axpy(&mut da[j], dlv, params.row(ll.wv, d, r));
            }
            let mut dxa = std::mem::take(&mut dx[j]);
            rms_backward_acc(&mut dxa, &da[j], &tr.x_attn_in, tr.a_inv);
            dx[j] = dxa;
        }
    }

    // Embeddings.
    for pos in 0..=max_pos {
        let tok = state.tokens[pos] as usize;
        axpy(&mut g[lay.wte + tok * d..lay.wte + (tok + 1) * d], S::one(), &dx[pos]);
        axpy(&mut g[lay.wpe + pos * d..lay.wpe + (pos + 1) * d], S::one(), &dx[pos]);
    }
    GradientVector::new(g)
}

/// Exact gradient of the weighted response log-probability
/// Σ_t weights[t] · log π(response[t] | context) under the chosen context
/// kind. `weights` must have one entry per response token.
pub fn grad_logprob<S: Scalar>(
    params: &PolicyParams<S>,
    task: &TaskInstance,
    response: &[TokenId],
    kind: ContextKind,
    weights: &[f64],
) -> Result<GradientVector<S>> {
    if weights.len() != response.len() {
        return Err(Error::Objective(format!(
            "weights length {} does not match response length {}",
            weights.len(),
            response.len()
        )));
    }
    let prefix = context_prefix(task, kind);
    let (state, _) = score_with_prompt(params, prefix, response)?;
    let base = prefix.len() - 1;
    let targets: Vec<(usize, TokenId, S)> = response
        .iter()
        .enumerate()
        .map(|(t, &tok)| (base + t, tok, sc::<S>(weights[t])))
        .collect();
    Ok(backward_weighted(&state, &targets))
}
