//! Transformer building blocks on the autodiff graph.
//!
//! Both sequence priors share this wiring: pre-norm blocks with multi-head
//! attention and a GELU MLP. The causal flag is the only structural
//! difference between them; conditioning vectors, when present, are added at
//! block entry.

use super::graph::{Graph, Var};
use super::params::{normal_init, Bound, ParamStore};
use super::scalar::{c, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const ATTN_MASK_NEG: f64 = -1e9;
const MLP_MULT: usize = 4;

/// Register the parameters of one pre-norm transformer block under `prefix`.
pub fn init_block<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, width: usize, rng: &mut Rng) {
    let w = width;
    let std = 0.02;
    for ln in ["ln1", "ln2"] {
        store.add(format!("{prefix}.{ln}.g"), Tensor::full(&[w], T::one()));
        store.add(format!("{prefix}.{ln}.b"), Tensor::zeros(&[w]));
    }
    for proj in ["wq", "wk", "wv", "wo"] {
        store.add(format!("{prefix}.attn.{proj}"), normal_init(&[w, w], std, rng));
        store.add(format!("{prefix}.attn.{proj}_b"), Tensor::zeros(&[w]));
    }
    store.add(
        format!("{prefix}.mlp.fc1"),
        normal_init(&[MLP_MULT * w, w], std, rng),
    );
    store.add(format!("{prefix}.mlp.fc1_b"), Tensor::zeros(&[MLP_MULT * w]));
    store.add(
        format!("{prefix}.mlp.fc2"),
        normal_init(&[w, MLP_MULT * w], std, rng),
    );
    store.add(format!("{prefix}.mlp.fc2_b"), Tensor::zeros(&[w]));
}

/// Additive attention mask for causal decoding: 0 on and below the diagonal,
/// a large negative value strictly above it.
pub fn causal_mask<T: Scalar>(t: usize) -> Tensor<T> {
    Tensor::from_fn(&[t, t], |i| {
        let (row, col) = (i / t, i % t);
        if col > row {
            c(ATTN_MASK_NEG)
        } else {
            T::zero()
        }
    })
}

/// Multi-head self-attention over `x (B, T, D)`.
///
/// `mask`, when given, is a constant `(T, T)` additive bias on the attention
/// scores; `causal_mask` produces the autoregressive one. Without a mask the
/// attention is full (every position sees every other).
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    x: Var,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<Var> {
    let (b, t, d) = match g.shape(x) {
        [b, t, d] => (*b, *t, *d),
        other => return Err(Error::shape(format!("attention input shape {:?}", other))),
    };
    if d % heads != 0 {
        return Err(Error::shape(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let p = |name: &str| bound.var(&format!("{prefix}.attn.{name}"));
    let q = g.linear(x, p("wq"), Some(p("wq_b")))?;
    let k = g.linear(x, p("wk"), Some(p("wk_b")))?;
    let v = g.linear(x, p("wv"), Some(p("wv_b")))?;
    // (B, T, D) -> (B*H, T, dh)
    let split = |g: &mut Graph<T>, y: Var| -> Result<Var> {
        let y = g.reshape(y, &[b, t, heads, dh])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        g.reshape(y, &[b * heads, t, dh])
    };
    let qh = split(g, q)?;
    let kh = split(g, k)?;
    let vh = split(g, v)?;
    // scores (B*H, T, T) = q · kᵀ / sqrt(dh)
    let kt = {
        let y = g.reshape(kh, &[b * heads, t, dh])?;
        g.permute(y, &[0, 2, 1])?
    };
    let scores = g.bmm(qh, kt)?;
    let scores = g.scale(scores, c::<T>(1.0 / (dh as f64).sqrt()));
    let scores = match mask {
        Some(m) => {
            let mvar = g.constant(m.clone());
            g.add_broadcast_mat(scores, mvar)?
        }
        None => scores,
    };
    let probs = g.softmax(scores)?;
    let ctx = g.bmm(probs, vh)?;
    // (B*H, T, dh) -> (B, T, D)
    let ctx = g.reshape(ctx, &[b, heads, t, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, t, d])?;
    g.linear(ctx, p("wo"), Some(p("wo_b")))
}

/// One pre-norm block: `x += attn(ln1(x)); x += mlp(ln2(x))`, with an
/// optional `(B, D)` conditioning vector added at entry.
pub fn transformer_block<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    x: Var,
    heads: usize,
    mask: Option<&Tensor<T>>,
    cond: Option<Var>,
) -> Result<Var> {
    let eps = c::<T>(LAYER_NORM_EPS);
    let p = |name: &str| bound.var(&format!("{prefix}.{name}"));
    let x = match cond {
        Some(cv) => g.add_broadcast_vec(x, cv)?,
        None => x,
    };
    let h = g.layer_norm(x, p("ln1.g"), p("ln1.b"), eps)?;
    let h = multi_head_attention(g, bound, prefix, h, heads, mask)?;
    let x = g.add(x, h)?;
    let h = g.layer_norm(x, p("ln2.g"), p("ln2.b"), eps)?;
    let h = g.linear(h, p("mlp.fc1"), Some(p("mlp.fc1_b")))?;
    let h = g.gelu(h);
    let h = g.linear(h, p("mlp.fc2"), Some(p("mlp.fc2_b")))?;
    g.add(x, h)
}

/// Sinusoidal features for a scalar in `[0, 1]`, length `dim`.
pub fn sinusoidal_embedding<T: Scalar>(value: f64, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        // Geometric frequency ladder from 1 to ~1000 cycles over the unit interval.
        let freq = 1000f64.powf(i as f64 / half.max(1) as f64);
        out[i] = c((value * freq).sin());
        out[half + i] = c((value * freq).cos());
    }
    out
}
