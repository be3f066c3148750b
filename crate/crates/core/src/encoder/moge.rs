use rand::Rng;

use super::layer::feed_forward;
use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};
use crate::params::{Graph, ParamId, ParamStore};

/// One expert: an FFN `d → hidden → d` with GeLU.
#[derive(Clone, Copy, Debug)]
pub struct ExpertParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ExpertParams {
    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Router plus expert bank of one mixture layer.
#[derive(Clone, Debug)]
pub struct MoGEParams {
    /// `[d, M]` expert embedding producing routing logits.
    pub router: ParamId,
    pub experts: Vec<ExpertParams>,
    pub top_k: usize,
}

impl MoGEParams {
    /// Output projections start at zero, so a fresh layer adds nothing.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: usize,
        experts: usize,
        top_k: usize,
        rng: &mut R,
    ) -> Self {
        let router = store.add(
            format!("{prefix}.router"),
            Tensor::randn(&[dim, experts], 0.02, rng),
            false,
        );
        let w1_std = (2.0 / dim as f64).sqrt();
        let experts = (0..experts)
            .map(|m| ExpertParams {
                w1: store.add(
                    format!("{prefix}.expert{m}.w1"),
                    Tensor::randn(&[dim, hidden], w1_std, rng),
                    false,
                ),
                b1: store.add(format!("{prefix}.expert{m}.b1"), Tensor::zeros(&[hidden]), false),
                w2: store.add(format!("{prefix}.expert{m}.w2"), Tensor::zeros(&[hidden, dim]), false),
                b2: store.add(format!("{prefix}.expert{m}.b2"), Tensor::zeros(&[dim]), false),
            })
            .collect();
        Self {
            router,
            experts,
            top_k,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.router)
            .chain(self.experts.iter().flat_map(|e| e.param_ids()))
            .collect()
    }
}

/// Routing outcome of one mixture layer for one forward pass.
#[derive(Clone, Debug)]
pub struct Routing {
    /// Raw router logits `[S, M]` on the tape.
    pub logits: Var,
    /// Top-k softmax gates `[S, M]` on the tape.
    pub gates: Var,
}

/// `Z·W_R`, then per row softmax over the `K` largest logits (ties to the
/// lower expert index); all other gates are exactly zero.
pub fn router_topk(g: &mut Graph<'_>, z: Var, router: ParamId, top_k: usize) -> Result<Routing> {
    let w = g.param(router);
    let logits = g.tape.matmul(z, w)?;
    let gates = g.tape.top_k_softmax(logits, top_k)?;
    Ok(Routing { logits, gates })
}

/// Gate-weighted sum of the active experts for every row of `z` (`[S, d]`).
///
/// Each expert only sees the rows routed to it, so inactive experts get no
/// gradient from a row.
pub fn moge_forward(g: &mut Graph<'_>, z: Var, p: &MoGEParams) -> Result<(Var, Routing)> {
    let routing = router_topk(g, z, p.router, p.top_k)?;
    let rows = g.value(z).shape()[0];
    let m_total = p.experts.len();
    let gate_values = g.value(routing.gates).clone();
    let mut total: Option<Var> = None;
    for (m, expert) in p.experts.iter().enumerate() {
        let idx: Vec<usize> = (0..rows)
            .filter(|&r| gate_values.data()[r * m_total + m] > 0.0)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let zs = g.tape.gather_rows(z, &idx)?;
        let out = feed_forward(g, zs, expert.w1, expert.b1, expert.w2, expert.b2)?;
        let col = g.tape.slice_cols(routing.gates, m, 1)?;
        let col = g.tape.gather_rows(col, &idx)?;
        let weighted = g.tape.mul(col, out)?;
        let placed = g.tape.scatter_rows(weighted, &idx, rows)?;
        total = Some(match total {
            Some(t) => g.tape.add(t, placed)?,
            None => placed,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("no expert was activated".into()))?;
    Ok((total, routing))
}
