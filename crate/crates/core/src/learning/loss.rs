use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::encoder::LayerRouting;
use crate::numerics::{Tensor, Var};
use crate::params::Graph;

use super::head::HEAD_OUTPUTS;

/// Weights of the two loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            reg: 1.0,
            huber_delta: 1.0,
        }
    }
}

/// A frame loss on the tape plus the values of its two terms.
#[derive(Clone, Copy, Debug)]
pub struct FrameLoss {
    pub total: Var,
    /// Unweighted classification term.
    pub cls: f64,
    /// Unweighted regression term.
    pub reg: f64,
    pub positives: usize,
}

/// Token labels: 1 when the token center lies in the canonical ground truth.
pub fn token_labels(centers: &[[f64; 3]], gt: &Box3D) -> Vec<f64> {
    centers
        .iter()
        .map(|&c| if gt.contains(c) { 1.0 } else { 0.0 })
        .collect()
}

/// `λ_cls · mean BCE(logit_i, label_i) + λ_reg · reg`.
///
/// `reg` sums the Huber loss over the four offset components of each positive
/// token and averages over positives; the targets are `gt_center − center_i`
/// and `gt_θ`. Without positives it is zero.
pub fn compute_loss(
    g: &mut Graph<'_>,
    head_out: Var,
    centers: &[[f64; 3]],
    gt: &Box3D,
    weights: LossWeights,
) -> Result<FrameLoss> {
    let shape = g.value(head_out).shape().to_vec();
    if shape != [centers.len(), HEAD_OUTPUTS] {
        return Err(Error::dim("compute_loss", &shape, &[centers.len(), HEAD_OUTPUTS]));
    }
    let labels = token_labels(centers, gt);
    let logits = g.tape.slice_cols(head_out, 0, 1)?;
    let bce = g.tape.bce_with_logits(logits, &labels)?;
    let cls = g.tape.mean(bce);
    let cls_value = g.value(cls).item()?;
    let mut total = g.tape.scale(cls, weights.cls);

    let positives: Vec<usize> = (0..centers.len()).filter(|&i| labels[i] > 0.5).collect();
    let mut reg_value = 0.0;
    if !positives.is_empty() {
        let offsets = g.tape.slice_cols(head_out, 1, 4)?;
        let pos = g.tape.gather_rows(offsets, &positives)?;
        let targets: Vec<f64> = positives
            .iter()
            .flat_map(|&i| {
                let c = centers[i];
                [gt.center[0] - c[0], gt.center[1] - c[1], gt.center[2] - c[2], gt.yaw]
            })
            .collect();
        let hub = g.tape.huber(pos, &targets, weights.huber_delta)?;
        let sum = g.tape.sum(hub);
        let reg = g.tape.scale(sum, 1.0 / positives.len() as f64);
        reg_value = g.value(reg).item()?;
        let weighted = g.tape.scale(reg, weights.reg);
        total = g.tape.add(total, weighted)?;
    }
    Ok(FrameLoss {
        total,
        cls: cls_value,
        reg: reg_value,
        positives: positives.len(),
    })
}

/// Auxiliary loss pushing the router toward even expert use, averaged over
/// mixture layers: `M · Σ_m f_m · P_m`, where `f_m` is the fraction of top-k
/// slots given to expert `m` (a constant) and `P_m` its mean router
/// probability. Equals 1 under perfectly uniform routing. `None` without
/// mixture layers.
pub fn load_balance_loss(g: &mut Graph<'_>, routing: &[LayerRouting]) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for r in routing {
        let gates = g.value(r.routing.gates).clone();
        let (rows, m) = (gates.shape()[0], gates.shape()[1]);
        let mut counts = vec![0.0; m];
        let mut slots = 0.0;
        for (j, v) in gates.data().iter().enumerate() {
            if *v > 0.0 {
                counts[j % m] += 1.0;
                slots += 1.0;
            }
        }
        if slots == 0.0 {
            continue;
        }
        let f: Vec<f64> = counts.iter().map(|c| m as f64 * c / slots).collect();
        let probs = g.tape.softmax(r.routing.logits)?;
        let avg = g.tape.constant(Tensor::full(&[1, rows], 1.0 / rows as f64));
        let p_mean = g.tape.matmul(avg, probs)?;
        let f = g.tape.constant(Tensor::new(&[1, m], f)?);
        let prod = g.tape.mul(p_mean, f)?;
        let layer = g.tape.sum(prod);
        total = Some(match total {
            Some(t) => g.tape.add(t, layer)?,
            None => layer,
        });
    }
    Ok(total.map(|t| g.tape.scale(t, 1.0 / routing.len() as f64)))
}
