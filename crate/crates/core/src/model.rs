//! The assembled tracker network.
//!
//! [`Model`] owns every parameter in one [`ParamStore`] and knows how to run
//! one frame: embed template and search regions, add weighted masks, prepend
//! the temporal token, encode, and apply the head to the search rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, TemplateMode};
use crate::embedding::{embed_region, PatchEmbedParams, PositionalParams};
use crate::encoder::{encoder_forward, tunable_budget, EncoderParams, LayerRouting, TokenLayout, TunableBudget};
use crate::error::{Error, Result};
use crate::geometry::{crop_indices, crop_region, Box3D, CropParams, PointCloud, RegionKind, RegionSample};
use crate::learning::{head_forward, HeadParams};
use crate::numerics::Var;
use crate::params::{Graph, ParamId, ParamStore};
use crate::temporal::{propagate_temporal_token, MaskWeights};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub patch: PatchEmbedParams,
    pub positional: PositionalParams,
    pub encoder: EncoderParams,
    /// `𝒯₀`, `[1, d]`.
    pub temporal: ParamId,
    pub masks: MaskWeights,
    pub head: HeadParams,
}

/// Everything one frame produces on the tape.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    /// `[1, d]` temporal row after the encoder.
    pub temporal: Var,
    /// `[G_s, 5]` head outputs.
    pub head: Var,
    /// Search token centers in the search region's canonical frame.
    pub search_centers: Vec<[f64; 3]>,
    pub routing: Vec<LayerRouting>,
}

impl Model {
    /// Builds a model from a config. Initial values are rounded to `f32` so
    /// that a saved checkpoint reproduces them exactly.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let patch = PatchEmbedParams::init(&mut store, "embed.patch", config.dim, &mut rng);
        let positional = PositionalParams::init(&mut store, "embed.pos", config.dim, &mut rng);
        let encoder = EncoderParams::init(&mut store, &config, &mut rng)?;
        let temporal = store.add(
            "temporal.initial",
            crate::numerics::Tensor::randn(&[1, config.dim], 0.02, &mut rng),
            false,
        );
        let masks = MaskWeights::init(&mut store, config.mask_mode, config.template_groups, config.search_groups);
        let head = HeadParams::init(&mut store, "head", config.dim, &mut rng);
        if config.freeze_embedding {
            for id in patch.param_ids().into_iter().chain(positional.param_ids()) {
                store.get_mut(id).frozen = true;
            }
        }
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for v in store.get_mut(id).value.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
        Ok(Self {
            config,
            store,
            patch,
            positional,
            encoder,
            temporal,
            masks,
            head,
        })
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            template: self.config.template_groups,
            search: self.config.search_groups,
        }
    }

    pub fn tunable_count(&self) -> usize {
        self.store.tunable_count()
    }

    pub fn budget(&self) -> Result<TunableBudget> {
        tunable_budget(&self.config)
    }

    /// Runs one frame. `carried` is the previous frame's temporal output
    /// (on this tape for training, a constant for inference) and is ignored
    /// when propagation is disabled in the config.
    pub fn frame_forward(
        &self,
        g: &mut Graph<'_>,
        template: &RegionSample,
        search: &RegionSample,
        carried: Option<Var>,
    ) -> Result<FrameOutput> {
        if template.kind != RegionKind::Template || search.kind != RegionKind::Search {
            return Err(Error::Contract("frame_forward expects a template and a search region".into()));
        }
        let cfg = &self.config;
        let t = embed_region(g, template, cfg.template_groups, cfg.group_neighbors, &self.patch, &self.positional)?;
        let s = embed_region(g, search, cfg.search_groups, cfg.group_neighbors, &self.patch, &self.positional)?;
        let t_tokens = self.masks.apply_template(g, t.tokens, &t.mask)?;
        let s_tokens = self.masks.apply_search(g, s.tokens, &s.mask)?;
        let carried = if cfg.temporal_propagation { carried } else { None };
        let temporal = propagate_temporal_token(g, self.temporal, carried)?;
        let f0 = g.tape.concat_rows(&[temporal, t_tokens, s_tokens])?;
        let enc = encoder_forward(g, f0, self.layout(), &self.encoder)?;
        let head = head_forward(g, enc.search, &self.head)?;
        Ok(FrameOutput {
            temporal: enc.temporal,
            head,
            search_centers: s.centers,
            routing: enc.routing,
        })
    }
}

/// Search region around `reference` in `cloud`.
pub fn search_region(cfg: &ModelConfig, cloud: &PointCloud, reference: &Box3D, seed: u64) -> RegionSample {
    let params = CropParams {
        enlarge: cfg.search_enlarge,
        n_out: cfg.search_points,
        kind: RegionKind::Search,
    };
    crop_region(cloud, reference, params, seed)
}

/// Template region according to the configured template mode.
///
/// `first` is the first frame with its given box, `prev` the previous frame
/// with its (predicted or, in training, ground-truth) box. The merged mode
/// pools both canonical crops before resampling; its mask is taken against
/// the previous box.
pub fn template_region(
    cfg: &ModelConfig,
    first: (&PointCloud, &Box3D),
    prev: (&PointCloud, &Box3D),
    seed: u64,
) -> RegionSample {
    let params = CropParams {
        enlarge: cfg.template_enlarge,
        n_out: cfg.template_points,
        kind: RegionKind::Template,
    };
    match cfg.template_mode {
        TemplateMode::First => crop_region(first.0, first.1, params, seed),
        TemplateMode::Previous => crop_region(prev.0, prev.1, params, seed),
        TemplateMode::Merged => {
            let local = |(cloud, b): (&PointCloud, &Box3D)| -> Vec<[f64; 3]> {
                crop_indices(cloud, b, params.enlarge, RegionKind::Template)
                    .into_iter()
                    .map(|i| b.to_local(cloud.points[i]))
                    .collect()
            };
            let mut pooled = local(first);
            pooled.extend(local(prev));
            // Re-crop the pooled canonical points as if they were a world cloud
            // around a box at the origin.
            let canonical = Box3D::canonical(prev.1.size);
            let mut region = crop_region(&PointCloud::new(pooled), &canonical, params, seed);
            region.origin_box = *prev.1;
            region
        }
    }
}

/// Splits parameters into the frozen backbone and everything trainable.
pub fn partition_parameters(model: &Model) -> (Vec<ParamId>, Vec<ParamId>) {
    model.store.iter().map(|(id, p)| (id, p.frozen)).fold(
        (Vec::new(), Vec::new()),
        |(mut frozen, mut tunable), (id, f)| {
            if f {
                frozen.push(id);
            } else {
                tunable.push(id);
            }
            (frozen, tunable)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_is_disjoint_and_complete() {
        let m = Model::new(ModelConfig::tiny()).unwrap();
        let (frozen, tunable) = partition_parameters(&m);
        assert_eq!(frozen.len() + tunable.len(), m.store.len());
        assert!(frozen.iter().all(|id| !tunable.contains(id)));
        let mut backbone = m.encoder.backbone_param_ids();
        backbone.sort();
        assert_eq!(frozen, backbone);
    }

    #[test]
    fn frozen_embedding_leaves_the_budget() {
        let cfg = ModelConfig {
            freeze_embedding: true,
            ..ModelConfig::tiny()
        };
        let m = Model::new(cfg).unwrap();
        let (frozen, _) = partition_parameters(&m);
        let embed: Vec<ParamId> = m.patch.param_ids().into_iter().chain(m.positional.param_ids()).collect();
        assert!(embed.iter().all(|id| frozen.contains(id)));
        assert_eq!(frozen.len(), m.encoder.backbone_param_ids().len() + embed.len());
        assert_eq!(m.budget().unwrap().embedding, 0);
        assert_eq!(m.budget().unwrap().total(), m.tunable_count());
    }

    #[test]
    fn full_finetune_freezes_nothing() {
        let cfg = ModelConfig {
            full_finetune: true,
            ..ModelConfig::tiny()
        };
        let m = Model::new(cfg).unwrap();
        assert!(partition_parameters(&m).0.is_empty());
    }

    #[test]
    fn tunable_count_matches_budget() {
        for cfg in [ModelConfig::tiny(), ModelConfig::desk()] {
            let m = Model::new(cfg).unwrap();
            assert_eq!(m.tunable_count(), m.budget().unwrap().total());
        }
    }
}
