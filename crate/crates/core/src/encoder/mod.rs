//! Frozen transformer stack with gated adapters and geometry experts.
//!
//! Tokens are laid out as `[temporal | template | search]`. Every layer runs
//! frozen attention and FFN sublayers, optionally with an adapter beside each.
//! Layers that carry a mixture of experts then route the temporal and search
//! rows (never the template rows) through it and add the result residually.

mod layer;
mod moge;

pub use layer::{
    adapter_forward, feed_forward, self_attention, transformer_sublayers, AdapterParams,
    TransformerLayerParams,
};
pub use moge::{moge_forward, router_topk, ExpertParams, MoGEParams, Routing};

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Var;
use crate::params::{Graph, ParamId, ParamStore};

/// Row ranges of the encoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub template: usize,
    pub search: usize,
}

impl TokenLayout {
    pub fn total(&self) -> usize {
        1 + self.template + self.search
    }

    pub fn search_start(&self) -> usize {
        1 + self.template
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub backbone: TransformerLayerParams,
    /// Adapters beside the attention and FFN sublayers.
    pub adapters: Option<(AdapterParams, AdapterParams)>,
    pub moge: Option<MoGEParams>,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
    pub heads: usize,
    pub eps: f64,
}

impl EncoderParams {
    pub fn init<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let adapter_at = cfg.adapter_positions()?;
        let moge_at = cfg.moge_positions()?;
        let frozen = !cfg.full_finetune;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let prefix = format!("encoder.layer{i}");
            let backbone = TransformerLayerParams::init(
                store,
                &prefix,
                cfg.dim,
                cfg.ffn_hidden(),
                cfg.backbone_init_std,
                frozen,
                rng,
            );
            let adapters = adapter_at.contains(&i).then(|| {
                (
                    AdapterParams::init(store, &format!("{prefix}.adapter_attn"), cfg.dim, cfg.adapter_rank, rng),
                    AdapterParams::init(store, &format!("{prefix}.adapter_ffn"), cfg.dim, cfg.adapter_rank, rng),
                )
            });
            let moge = moge_at.contains(&i).then(|| {
                MoGEParams::init(
                    store,
                    &format!("{prefix}.moge"),
                    cfg.dim,
                    cfg.expert_hidden(),
                    cfg.experts,
                    cfg.top_k,
                    rng,
                )
            });
            layers.push(EncoderLayer {
                backbone,
                adapters,
                moge,
            });
        }
        Ok(Self {
            layers,
            heads: cfg.heads,
            eps: cfg.layer_norm_eps,
        })
    }

    pub fn backbone_param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.backbone.param_ids()).collect()
    }
}

/// Routing produced at one mixture layer.
#[derive(Clone, Debug)]
pub struct LayerRouting {
    /// Zero-based layer position.
    pub layer: usize,
    pub routing: Routing,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[1, d]`
    pub temporal: Var,
    /// `[G_t, d]`
    pub template: Var,
    /// `[G_s, d]`
    pub search: Var,
    pub routing: Vec<LayerRouting>,
}

/// One full block: sublayers, then the expert mixture on the temporal and
/// search rows if this layer has one. Template rows pass through untouched.
pub fn transformer_block_forward(
    g: &mut Graph<'_>,
    x: Var,
    layer: &EncoderLayer,
    layout: TokenLayout,
    heads: usize,
    eps: f64,
) -> Result<(Var, Option<Routing>)> {
    let rows = g.value(x).shape().first().copied().unwrap_or(0);
    if rows != layout.total() {
        return Err(Error::Contract(format!(
            "token layout expects {} rows, input has {rows}",
            layout.total()
        )));
    }
    let adapters = layer.adapters.as_ref().map(|(a, b)| (a, b));
    let out = transformer_sublayers(g, x, &layer.backbone, adapters, heads, eps)?;
    let Some(moge) = &layer.moge else {
        return Ok((out, None));
    };
    let temporal = g.tape.slice_rows(out, 0, 1)?;
    let template = g.tape.slice_rows(out, 1, layout.template)?;
    let search = g.tape.slice_rows(out, layout.search_start(), layout.search)?;
    let z = g.tape.concat_rows(&[temporal, search])?;
    let (mixed, routing) = moge_forward(g, z, moge)?;
    let z = g.tape.add(z, mixed)?;
    let new_temporal = g.tape.slice_rows(z, 0, 1)?;
    let new_search = g.tape.slice_rows(z, 1, layout.search)?;
    let out = g.tape.concat_rows(&[new_temporal, template, new_search])?;
    Ok((out, Some(routing)))
}

/// Runs every layer and splits the result back into its three parts.
pub fn encoder_forward(
    g: &mut Graph<'_>,
    f0: Var,
    layout: TokenLayout,
    params: &EncoderParams,
) -> Result<EncoderOutput> {
    let mut x = f0;
    let mut routing = Vec::new();
    for (i, layer) in params.layers.iter().enumerate() {
        let (next, r) = transformer_block_forward(g, x, layer, layout, params.heads, params.eps)?;
        if let Some(r) = r {
            routing.push(LayerRouting {
                layer: i,
                routing: r,
            });
        }
        x = next;
    }
    Ok(EncoderOutput {
        temporal: g.tape.slice_rows(x, 0, 1)?,
        template: g.tape.slice_rows(x, 1, layout.template)?,
        search: g.tape.slice_rows(x, layout.search_start(), layout.search)?,
        routing,
    })
}

/// Breakdown of the trainable-parameter budget, computed symbolically from a
/// config without building a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TunableBudget {
    pub adapters: usize,
    pub moge: usize,
    pub temporal_token: usize,
    pub mask_weights: usize,
    pub embedding: usize,
    pub head: usize,
    pub backbone: usize,
}

impl TunableBudget {
    pub fn total(&self) -> usize {
        self.adapters
            + self.moge
            + self.temporal_token
            + self.mask_weights
            + self.embedding
            + self.head
            + self.backbone
    }
}

/// Closed-form count of tunable scalars:
/// `Σ_adapters (2dr + d) + Σ_moge (dM + M(2dh + d + h)) + d + (G_t + G_s)`
/// plus embedding and head weights (and the backbone when fully fine-tuned).
pub fn tunable_budget(cfg: &ModelConfig) -> Result<TunableBudget> {
    use crate::config::MaskMode;
    let d = cfg.dim;
    let r = cfg.adapter_rank;
    let m = cfg.experts;
    let h = cfg.expert_hidden();
    let adapters = 2 * cfg.adapter_positions()?.len() * (2 * d * r + d);
    let moge = cfg.moge_positions()?.len() * (d * m + m * (2 * d * h + d + h));
    let mask_weights = match cfg.mask_mode {
        MaskMode::DynamicBeta => cfg.template_groups + cfg.search_groups,
        MaskMode::Fixed => 0,
        MaskMode::FullyLearnable => 3,
    };
    let half = d / 2;
    let patch = 3 * half + half + half * d + d;
    let positional = 3 * d + d + d * d + d;
    let head = d * d + d + d * 5 + 5;
    let f = cfg.ffn_hidden();
    let per_layer = 4 * (d * d + d) + 4 * d + (d * f + f) + (f * d + d);
    let backbone = if cfg.full_finetune { cfg.layers * per_layer } else { 0 };
    Ok(TunableBudget {
        adapters,
        moge,
        temporal_token: d,
        mask_weights,
        embedding: if cfg.freeze_embedding { 0 } else { patch + positional },
        head,
        backbone,
    })
}
