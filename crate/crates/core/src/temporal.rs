//! Temporal token propagation and learnable mask weighting.
//!
//! A single learned token `𝒯₀` is prepended to every frame's tokens. From
//! the second frame on, the encoder output of the temporal row from the
//! previous frame is added to it, carrying context forward. Separately,
//! per-token scalars `β` scale the fixed foreground/background masks before
//! they are added to the embedded tokens.

use rand::Rng;

use crate::config::MaskMode;
use crate::error::{Error, Result};
use crate::geometry::{SEARCH_MASK, TEMPLATE_BG_MASK, TEMPLATE_FG_MASK};
use crate::numerics::{Tensor, Var};
use crate::params::{Graph, ParamId, ParamStore};

/// Learned initial token plus the value carried from the previous frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalToken {
    /// `[1, d]` parameter `𝒯₀`.
    pub initial: ParamId,
    /// Previous frame's temporal output, detached. `None` on the first frame.
    pub carried: Option<Tensor>,
}

impl TemporalToken {
    pub fn init<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        let initial = store.add("temporal.initial", Tensor::randn(&[1, dim], 0.02, rng), false);
        Self {
            initial,
            carried: None,
        }
    }

    pub fn reset(&mut self) {
        self.carried = None;
    }

    /// Input token for the current frame on `g`.
    pub fn input(&self, g: &mut Graph<'_>) -> Result<Var> {
        let carried = match &self.carried {
            Some(t) => Some(g.tape.constant(t.clone())),
            None => None,
        };
        propagate_temporal_token(g, self.initial, carried)
    }
}

/// `𝒯₀` when nothing is carried, else `𝒯₀ + carried`.
///
/// During training `carried` is the previous frame's output on the same tape,
/// so gradients flow back through earlier frames of the clip.
pub fn propagate_temporal_token(g: &mut Graph<'_>, initial: ParamId, carried: Option<Var>) -> Result<Var> {
    let t0 = g.param(initial);
    match carried {
        None => Ok(t0),
        Some(c) => g.tape.add(t0, c),
    }
}

/// Mask scaling parameters, depending on the mask mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskWeights {
    /// Masks added as-is.
    Fixed,
    /// Per-token `β` for template (`[G_t, 1]`) and search (`[G_s, 1]`) tokens.
    Dynamic { beta_t: ParamId, beta_s: ParamId },
    /// The three mask values themselves are learned (`[1]` each).
    Learned {
        template_fg: ParamId,
        template_bg: ParamId,
        search: ParamId,
    },
}

impl MaskWeights {
    pub fn init(store: &mut ParamStore, mode: MaskMode, template_groups: usize, search_groups: usize) -> Self {
        match mode {
            MaskMode::Fixed => Self::Fixed,
            MaskMode::DynamicBeta => Self::Dynamic {
                beta_t: store.add("mask.beta_t", Tensor::full(&[template_groups, 1], 1.0), false),
                beta_s: store.add("mask.beta_s", Tensor::full(&[search_groups, 1], 1.0), false),
            },
            MaskMode::FullyLearnable => Self::Learned {
                template_fg: store.add("mask.template_fg", Tensor::full(&[1], TEMPLATE_FG_MASK), false),
                template_bg: store.add("mask.template_bg", Tensor::full(&[1], TEMPLATE_BG_MASK), false),
                search: store.add("mask.search", Tensor::full(&[1], SEARCH_MASK), false),
            },
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match *self {
            Self::Fixed => Vec::new(),
            Self::Dynamic { beta_t, beta_s } => vec![beta_t, beta_s],
            Self::Learned {
                template_fg,
                template_bg,
                search,
            } => vec![template_fg, template_bg, search],
        }
    }

    /// Adds the weighted template mask to template tokens.
    pub fn apply_template(&self, g: &mut Graph<'_>, tokens: Var, mask: &[f64]) -> Result<Var> {
        match *self {
            Self::Fixed => apply_fixed_mask(g, tokens, mask),
            Self::Dynamic { beta_t, .. } => {
                let beta = g.param(beta_t);
                apply_dynamic_mask(g, tokens, mask, beta)
            }
            Self::Learned {
                template_fg,
                template_bg,
                ..
            } => {
                // Mask entries pick either the fg or the bg scalar.
                let fg: Vec<f64> = mask.iter().map(|&m| f64::from(u8::from(m == TEMPLATE_FG_MASK))).collect();
                let bg: Vec<f64> = fg.iter().map(|v| 1.0 - v).collect();
                let (pf, pb) = (g.param(template_fg), g.param(template_bg));
                let sel_f = column(g, &fg)?;
                let sel_b = column(g, &bg)?;
                let a = g.tape.mul(sel_f, pf)?;
                let b = g.tape.mul(sel_b, pb)?;
                let m = g.tape.add(a, b)?;
                g.tape.add(tokens, m)
            }
        }
    }

    /// Adds the weighted search mask to search tokens.
    pub fn apply_search(&self, g: &mut Graph<'_>, tokens: Var, mask: &[f64]) -> Result<Var> {
        match *self {
            Self::Fixed => apply_fixed_mask(g, tokens, mask),
            Self::Dynamic { beta_s, .. } => {
                let beta = g.param(beta_s);
                apply_dynamic_mask(g, tokens, mask, beta)
            }
            Self::Learned { search, .. } => {
                let ones = column(g, &vec![1.0; mask.len()])?;
                let p = g.param(search);
                let m = g.tape.mul(ones, p)?;
                g.tape.add(tokens, m)
            }
        }
    }
}

fn column(g: &mut Graph<'_>, values: &[f64]) -> Result<Var> {
    Ok(g.tape.constant(Tensor::new(&[values.len(), 1], values.to_vec())?))
}

fn apply_fixed_mask(g: &mut Graph<'_>, tokens: Var, mask: &[f64]) -> Result<Var> {
    check_rows(g, tokens, mask.len())?;
    let m = column(g, mask)?;
    g.tape.add(tokens, m)
}

fn check_rows(g: &Graph<'_>, tokens: Var, n: usize) -> Result<()> {
    let shape = g.value(tokens).shape();
    if shape.len() != 2 || shape[0] != n {
        return Err(Error::dim("apply_mask", shape, &[n, 1]));
    }
    Ok(())
}

/// `tokens + mask ⊙ β`, the `[G, 1]` product broadcast across channels.
pub fn apply_dynamic_mask(g: &mut Graph<'_>, tokens: Var, mask: &[f64], beta: Var) -> Result<Var> {
    check_rows(g, tokens, mask.len())?;
    let beta_shape = g.value(beta).shape().to_vec();
    if beta_shape != [mask.len(), 1] {
        return Err(Error::dim("apply_dynamic_mask", &beta_shape, &[mask.len(), 1]));
    }
    let m = column(g, mask)?;
    let weighted = g.tape.mul(m, beta)?;
    g.tape.add(tokens, weighted)
}
