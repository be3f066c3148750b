use rand::Rng;

use crate::embedding::linear;
use crate::error::Result;
use crate::numerics::{Tensor, Var};
use crate::params::{Graph, ParamId, ParamStore};

/// One pre-norm transformer layer of the backbone.
#[derive(Clone, Copy, Debug)]
pub struct TransformerLayerParams {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl TransformerLayerParams {
    /// Seeded Gaussian weights (std `init_std`), zero biases, unit LN gains.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        ffn_hidden: usize,
        init_std: f64,
        frozen: bool,
        rng: &mut R,
    ) -> Self {
        let mut w = |name: &str, shape: &[usize], rng: &mut R| {
            store.add(format!("{prefix}.{name}"), Tensor::randn(shape, init_std, rng), frozen)
        };
        let wq = w("attn.wq", &[dim, dim], rng);
        let wk = w("attn.wk", &[dim, dim], rng);
        let wv = w("attn.wv", &[dim, dim], rng);
        let wo = w("attn.wo", &[dim, dim], rng);
        let ffn_w1 = w("ffn.w1", &[dim, ffn_hidden], rng);
        let ffn_w2 = w("ffn.w2", &[ffn_hidden, dim], rng);
        let mut c = |name: &str, shape: &[usize], v: f64| {
            store.add(format!("{prefix}.{name}"), Tensor::full(shape, v), frozen)
        };
        Self {
            ln1_gain: c("ln1.gain", &[dim], 1.0),
            ln1_bias: c("ln1.bias", &[dim], 0.0),
            wq,
            bq: c("attn.bq", &[dim], 0.0),
            wk,
            bk: c("attn.bk", &[dim], 0.0),
            wv,
            bv: c("attn.bv", &[dim], 0.0),
            wo,
            bo: c("attn.bo", &[dim], 0.0),
            ln2_gain: c("ln2.gain", &[dim], 1.0),
            ln2_bias: c("ln2.bias", &[dim], 0.0),
            ffn_w1,
            ffn_b1: c("ffn.b1", &[ffn_hidden], 0.0),
            ffn_w2,
            ffn_b2: c("ffn.b2", &[dim], 0.0),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 16] {
        [
            self.ln1_gain,
            self.ln1_bias,
            self.wq,
            self.bq,
            self.wk,
            self.bk,
            self.wv,
            self.bv,
            self.wo,
            self.bo,
            self.ln2_gain,
            self.ln2_bias,
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
        ]
    }
}

/// Bias-free two-path adapter: a down/up projection scaled per token by a
/// ReLU gate.
#[derive(Clone, Copy, Debug)]
pub struct AdapterParams {
    /// `[d, r]`
    pub w_down: ParamId,
    /// `[r, d]`
    pub w_up: ParamId,
    /// `[d, 1]`
    pub w_score: ParamId,
}

impl AdapterParams {
    /// `w_up` starts at zero so a fresh adapter contributes nothing.
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rank: usize, rng: &mut R) -> Self {
        let down_std = (1.0 / dim as f64).sqrt();
        Self {
            w_down: store.add(
                format!("{prefix}.w_down"),
                Tensor::randn(&[dim, rank], down_std, rng),
                false,
            ),
            w_up: store.add(format!("{prefix}.w_up"), Tensor::zeros(&[rank, dim]), false),
            w_score: store.add(
                format!("{prefix}.w_score"),
                Tensor::randn(&[dim, 1], down_std, rng),
                false,
            ),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.w_down, self.w_up, self.w_score]
    }
}

/// `ReLU(F·W_s) ⊙ (GeLU(F·W_dn)·W_up)`, the `[n, 1]` gate broadcast over `d`.
pub fn adapter_forward(g: &mut Graph<'_>, x: Var, p: &AdapterParams) -> Result<Var> {
    let (w_s, w_dn, w_up) = (g.param(p.w_score), g.param(p.w_down), g.param(p.w_up));
    let score = g.tape.matmul(x, w_s)?;
    let gate = g.tape.relu(score);
    let down = g.tape.matmul(x, w_dn)?;
    let act = g.tape.gelu(down);
    let up = g.tape.matmul(act, w_up)?;
    g.tape.mul(gate, up)
}

/// Multi-head self-attention over the rows of `x` (`[t, d]`).
pub fn self_attention(g: &mut Graph<'_>, x: Var, p: &TransformerLayerParams, heads: usize) -> Result<Var> {
    let q = linear(g, x, p.wq, p.bq)?;
    let k = linear(g, x, p.wk, p.bk)?;
    let v = linear(g, x, p.wv, p.bv)?;
    let dim = g.value(x).last_dim();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.tape.slice_cols(q, h * dh, dh)?;
        let kh = g.tape.slice_cols(k, h * dh, dh)?;
        let vh = g.tape.slice_cols(v, h * dh, dh)?;
        let kt = g.tape.transpose(kh)?;
        let scores = g.tape.matmul(qh, kt)?;
        let scores = g.tape.scale(scores, scale);
        let attn = g.tape.softmax(scores)?;
        outs.push(g.tape.matmul(attn, vh)?);
    }
    let cat = g.tape.concat_cols(&outs)?;
    linear(g, cat, p.wo, p.bo)
}

/// Position-wise `GeLU(x·W1 + b1)·W2 + b2`.
pub fn feed_forward(g: &mut Graph<'_>, x: Var, w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId) -> Result<Var> {
    let h = linear(g, x, w1, b1)?;
    let h = g.tape.gelu(h);
    linear(g, h, w2, b2)
}

/// Attention and FFN sublayers with optional adapters beside each:
///
/// ```text
/// F̂  = MHSA(LN(F)) + F + AD₁(LN(F))
/// F' = FFN(LN(F̂)) + F̂ + AD₂(LN(F̂))
/// ```
pub fn transformer_sublayers(
    g: &mut Graph<'_>,
    x: Var,
    layer: &TransformerLayerParams,
    adapters: Option<(&AdapterParams, &AdapterParams)>,
    heads: usize,
    eps: f64,
) -> Result<Var> {
    let (g1, b1) = (g.param(layer.ln1_gain), g.param(layer.ln1_bias));
    let n1 = g.tape.layer_norm(x, g1, b1, eps)?;
    let attn = self_attention(g, n1, layer, heads)?;
    let mut hidden = g.tape.add(attn, x)?;
    if let Some((ad1, _)) = adapters {
        let a = adapter_forward(g, n1, ad1)?;
        hidden = g.tape.add(hidden, a)?;
    }
    let (g2, b2) = (g.param(layer.ln2_gain), g.param(layer.ln2_bias));
    let n2 = g.tape.layer_norm(hidden, g2, b2, eps)?;
    let ffn = feed_forward(g, n2, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2)?;
    let mut out = g.tape.add(ffn, hidden)?;
    if let Some((_, ad2)) = adapters {
        let a = adapter_forward(g, n2, ad2)?;
        out = g.tape.add(out, a)?;
    }
    Ok(out)
}
