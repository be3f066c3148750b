use rand::Rng;

use crate::embedding::linear;
use crate::error::{Error, Result};
use crate::geometry::{apply_box_offset, Box3D};
use crate::numerics::{sigmoid, Tensor, Var};
use crate::params::{Graph, ParamId, ParamStore};

/// Output width of the head: score logit, then `Δx, Δy, Δz, Δθ`.
pub const HEAD_OUTPUTS: usize = 5;

/// Per-token MLP `d → d → 5`.
#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl HeadParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Self {
        let std1 = (2.0 / dim as f64).sqrt();
        Self {
            w1: store.add(format!("{prefix}.w1"), Tensor::randn(&[dim, dim], std1, rng), false),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[dim]), false),
            w2: store.add(
                format!("{prefix}.w2"),
                Tensor::randn(&[dim, HEAD_OUTPUTS], 0.01, rng),
                false,
            ),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[HEAD_OUTPUTS]), false),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// `[G_s, 5]` raw head outputs for the search tokens.
pub fn head_forward(g: &mut Graph<'_>, tokens: Var, p: &HeadParams) -> Result<Var> {
    let h = linear(g, tokens, p.w1, p.b1)?;
    let h = g.tape.gelu(h);
    linear(g, h, p.w2, p.b2)
}

/// A tracked box with its confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    /// World frame.
    pub bbox: Box3D,
    /// Sigmoid of the largest token logit.
    pub confidence: f64,
}

/// Turns per-token head outputs into one box.
///
/// Tokens are weighted by the softmax of their logits; the canonical center
/// is the weighted mean of `center_i + Δxyz_i` and the yaw offset the weighted
/// mean of `Δθ_i`. The result is mapped back through `prev_box`.
pub fn localize(out: &Tensor, centers: &[[f64; 3]], prev_box: &Box3D) -> Result<Prediction> {
    let shape = out.shape();
    if shape.len() != 2 || shape[1] != HEAD_OUTPUTS || shape[0] != centers.len() {
        return Err(Error::dim("localize", shape, &[centers.len(), HEAD_OUTPUTS]));
    }
    if centers.is_empty() {
        return Err(Error::EmptyInput("localize needs at least one token"));
    }
    let logits: Vec<f64> = (0..centers.len()).map(|i| out.row(i)[0]).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut offset = [0.0; 4];
    for (i, (w, c)) in weights.iter().zip(centers).enumerate() {
        let a = w / total;
        let row = out.row(i);
        for j in 0..3 {
            offset[j] += a * (c[j] + row[1 + j]);
        }
        offset[3] += a * row[4];
    }
    Ok(Prediction {
        bbox: apply_box_offset(prev_box, offset),
        confidence: sigmoid(max),
    })
}
