//! Decoder-only transformer policy with hand-written forward and backward
//! passes.
//!
//! Pre-norm GPT block: RMSNorm -> causal multi-head attention -> residual,
//! RMSNorm -> GELU MLP -> residual, final RMSNorm, untied unembedding.
//! Learned absolute position embeddings. Parameters live in one flat vector
//! (canonical order documented on [`Architecture::param_count`]), which makes
//! checkpointing, optimizer state, finite-difference perturbation, and
//! gradient algebra trivial.

mod backward;
mod checkpoint;
mod forward;
mod sample;

pub use backward::grad_logprob;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerSnapshot, FORMAT_VERSION};
pub use forward::{forward_logits, log_softmax, score, softmax_tempered, SeqState};
pub use sample::sample_rollout;

pub(crate) use backward::backward_weighted;
pub(crate) use forward::{context_prefix, score_with_prompt};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, Stream};
use crate::scalar::{sc, Scalar};
use crate::vocab::TokenId;

/// Shape of the policy network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub max_context: usize,
    pub vocab_size: usize,
}

impl Architecture {
    /// The desk-scale default: 2 layers, width 32, 2 heads, FFN 64, context
    /// 64, vocabulary 20.
    pub fn default_desk() -> Self {
        Architecture {
            layers: 2,
            width: 32,
            heads: 2,
            ffn_width: 64,
            max_context: 64,
            vocab_size: 20,
        }
    }

    /// A deliberately tiny shape (≤ 500 parameters) for numerical checks.
    pub fn micro(vocab_size: usize) -> Self {
        Architecture {
            layers: 1,
            width: 4,
            heads: 2,
            ffn_width: 6,
            max_context: 16,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.width == 0
            || self.heads == 0
            || self.ffn_width == 0
            || self.max_context == 0
            || self.vocab_size == 0
        {
            return Err(Error::InvalidArchitecture("all dimensions must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::InvalidArchitecture(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Total parameter count.
    ///
    /// Canonical flat order: token embedding [V,D]; position embedding [C,D];
    /// per layer: Wq [D,D], bq [D], Wk, bk, Wv, bv, Wo, bo, W1 [F,D], b1 [F],
    /// W2 [D,F], b2 [D]; unembedding Wu [V,D]; output bias bu [V]. Matrices
    /// are row-major with rows = output dimension.
    pub fn param_count(&self) -> usize {
        let (d, f, v, c) = (self.width, self.ffn_width, self.vocab_size, self.max_context);
        let per_layer = 4 * d * d + 4 * d + f * d + f + d * f + d;
        v * d + c * d + self.layers * per_layer + v * d + v
    }
}

/// Byte/element offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub wte: usize,
    pub wpe: usize,
    pub layers: Vec<LayerLayout>,
    pub wu: usize,
    pub bu: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerLayout {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let (d, f, v, c) = (arch.width, arch.ffn_width, arch.vocab_size, arch.max_context);
        let mut off = 0usize;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let wte = take(v * d);
        let wpe = take(c * d);
        let mut layers = Vec::with_capacity(arch.layers);
        for _ in 0..arch.layers {
            layers.push(LayerLayout {
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                w1: take(f * d),
                b1: take(f),
                w2: take(d * f),
                b2: take(d),
            });
        }
        let wu = take(v * d);
        let bu = take(v);
        Layout { wte, wpe, layers, wu, bu, total: off }
    }

    /// (offset, length, is_bias) for every tensor in canonical order.
    fn spans(&self, arch: &Architecture) -> Vec<(usize, usize, bool)> {
        let (d, f, v, c) = (arch.width, arch.ffn_width, arch.vocab_size, arch.max_context);
        let mut spans = vec![(self.wte, v * d, false), (self.wpe, c * d, false)];
        for l in &self.layers {
            spans.extend_from_slice(&[
                (l.wq, d * d, false),
                (l.bq, d, true),
                (l.wk, d * d, false),
                (l.bk, d, true),
                (l.wv, d * d, false),
                (l.bv, d, true),
                (l.wo, d * d, false),
                (l.bo, d, true),
                (l.w1, f * d, false),
                (l.b1, f, true),
                (l.w2, d * f, false),
                (l.b2, d, true),
            ]);
        }
        spans.push((self.wu, v * d, false));
        spans.push((self.bu, v, true));
        spans
    }
}

/// Policy parameters: an architecture plus one flat value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<S: Scalar> {
    arch: Architecture,
    layout: Layout,
    values: Vec<S>,
}

/// Standard deviation of the weight initialization.
pub const INIT_STD: f64 = 0.02;

impl<S: Scalar> PolicyParams<S> {
    /// Random initialization: every weight-matrix and embedding entry drawn
    /// from N(0, `std`), every bias exactly zero. Draws come from a dedicated
    /// counter stream keyed by `seed`, in canonical tensor order.
    pub fn init_with_std(arch: Architecture, seed: u64, std: f64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut values = vec![S::zero(); layout.total];
        let mut rng = Stream::keyed(Domain::Init, &[seed]);
        for (off, len, is_bias) in layout.spans(&arch) {
            if is_bias {
                continue;
            }
            for v in &mut values[off..off + len] {
                *v = sc(rng.next_gauss() * std);
            }
        }
        Ok(PolicyParams { arch, layout, values })
    }

    /// Random initialization at the standard scale ([`INIT_STD`]).
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        Self::init_with_std(arch, seed, INIT_STD)
    }

    /// All-zero parameters (analytically: uniform next-token distribution).
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let values = vec![S::zero(); layout.total];
        Ok(PolicyParams { arch, layout, values })
    }

    /// Rebuilds parameters from a flat vector in canonical order.
    pub fn from_flat(arch: Architecture, values: Vec<S>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if values.len() != layout.total {
            return Err(Error::InvalidArchitecture(format!(
                "flat vector has {} values, architecture needs {}",
                values.len(),
                layout.total
            )));
        }
        Ok(PolicyParams { arch, layout, values })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Flat view in canonical order.
    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// Mutable flat view (used by the optimizer and finite differencing).
    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// θ + coef · g, leaving self untouched.
    pub fn add_scaled(&self, grad: &GradientVector<S>, coef: f64) -> Self {
        assert_eq!(grad.len(), self.values.len(), "gradient/parameter length mismatch");
        let c: S = sc(coef);
        let values = self
            .values
            .iter()
            .zip(grad.values())
            .map(|(&p, &g)| p + c * g)
            .collect();
        PolicyParams { arch: self.arch, layout: self.layout.clone(), values }
    }

    /// Casts to another scalar type through f64.
    pub fn convert<T: Scalar>(&self) -> PolicyParams<T> {
        PolicyParams {
            arch: self.arch,
            layout: self.layout.clone(),
            values: self.values.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }

    pub(crate) fn slice(&self, off: usize, len: usize) -> &[S] {
        &self.values[off..off + len]
    }

    /// Row `r` of a row-major [rows, cols] matrix starting at `off`.
    pub(crate) fn row(&self, off: usize, cols: usize, r: usize) -> &[S] {
        &self.values[off + r * cols..off + (r + 1) * cols]
    }
}

/// A flat gradient with its Euclidean norm cached at construction.
#[derive(Debug, Clone)]
pub struct GradientVector<S: Scalar> {
    values: Vec<S>,
    norm: f64,
}

impl<S: Scalar> GradientVector<S> {
    pub fn new(values: Vec<S>) -> Self {
        let norm = values.iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
        GradientVector { values, norm }
    }

    pub fn zeros(len: usize) -> Self {
        GradientVector { values: vec![S::zero(); len], norm: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Cached L2 norm (accumulated in f64 regardless of `S`).
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "gradient length mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a.to_f64() * b.to_f64())
            .sum()
    }
}

/// Which context a response is scored under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    /// Context = full prompt followed by the generated prefix.
    Conditional,
    /// Context = a single BOS token followed by the generated prefix; the
    /// prompt body never enters the computation.
    Marginal,
}

/// Per-token log-probabilities of one response under one context kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub kind: ContextKind,
    pub tokens: Vec<TokenId>,
    /// Natural-log probabilities, one per response token, each ≤ 0.
    pub logprobs: Vec<f64>,
}

impl ScoredSequence {
    pub fn sum_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_layout_and_micro_budget() {
        let desk = Architecture::default_desk();
        assert_eq!(desk.param_count(), Layout::new(&desk).total);
        assert_eq!(desk.param_count(), 20_180);

        let micro = Architecture::micro(6);
        assert_eq!(micro.param_count(), Layout::new(&micro).total);
        assert!(micro.param_count() <= 500, "micro model must stay tiny, got {}", micro.param_count());
    }

    #[test]
    fn validation_rejects_indivisible_heads_and_zero_dims() {
        let mut a = Architecture::default_desk();
        a.heads = 3;
        assert!(a.validate().is_err());
        a.heads = 0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn init_zeroes_biases_and_scales_weights() {
        let arch = Architecture::default_desk();
        let p: PolicyParams<f32> = PolicyParams::init(arch, 7).unwrap();
        let layout = Layout::new(&arch);
        // Biases exactly zero.
        let l0 = &layout.layers[0];
        assert!(p.slice(l0.bq, arch.width).iter().all(|&v| v == 0.0));
        assert!(p.slice(layout.bu, arch.vocab_size).iter().all(|&v| v == 0.0));
        // Weights have roughly the configured scale.
        let wte = p.slice(layout.wte, arch.vocab_size * arch.width);
        let ms: f64 = wte.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / wte.len() as f64;
        let std = ms.sqrt();
        assert!((std - INIT_STD).abs() < 0.004, "weight std {std} far from {INIT_STD}");
        // Deterministic in the seed.
        let q: PolicyParams<f32> = PolicyParams::init(arch, 7).unwrap();
        assert_eq!(p.values(), q.values());
        let r: PolicyParams<f32> = PolicyParams::init(arch, 8).unwrap();
        assert_ne!(p.values(), r.values());
    }

    #[test]
    fn flat_round_trip_is_identity() {
        let arch = Architecture::micro(6);
        let p: PolicyParams<f64> = PolicyParams::init(arch, 3).unwrap();
        let flat = p.values().to_vec();
        let q = PolicyParams::from_flat(arch, flat.clone()).unwrap();
        assert_eq!(p.values(), q.values());
        assert!(PolicyParams::<f64>::from_flat(arch, flat[1..].to_vec()).is_err());
    }

    #[test]
    fn gradient_vector_norm_and_dot() {
        let g = GradientVector::new(vec![3.0f64, 4.0]);
        assert_eq!(g.norm(), 5.0);
        let h = GradientVector::new(vec![1.0f64, 2.0]);
        assert_eq!(g.dot(&h), 11.0);
    }

    #[test]
    fn add_scaled_moves_parameters_linearly() {
        let arch = Architecture::micro(6);
        let p: PolicyParams<f64> = PolicyParams::zeros(arch).unwrap();
        let g = GradientVector::new(vec![1.0f64; p.param_count()]);
        let q = p.add_scaled(&g, 0.5);
        assert!(q.values().iter().all(|&v| v == 0.5));
    }
}
