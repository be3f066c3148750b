//! Model, training and run configuration.
//!
//! Every field has a default, and unknown JSON keys are rejected so that a
//! typo in an ablation config fails loudly instead of silently running the
//! default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which transformer layers carry a component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Placement {
    Named(NamedPlacement),
    /// Explicit layer indices, in the configured index base.
    Layers(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPlacement {
    All,
    Even,
    Odd,
    Last,
    None,
}

impl Placement {
    pub fn all() -> Self {
        Placement::Named(NamedPlacement::All)
    }

    pub fn even() -> Self {
        Placement::Named(NamedPlacement::Even)
    }

    pub fn none() -> Self {
        Placement::Named(NamedPlacement::None)
    }

    /// Resolves to sorted zero-based layer positions for a stack of `layers`.
    ///
    /// `index_base` is how the user counts layers (1 means the first layer is
    /// "layer 1"); parity for `even`/`odd` is taken in that numbering.
    pub fn resolve(&self, layers: usize, index_base: usize) -> Result<Vec<usize>> {
        let numbered = |pos: usize| pos + index_base;
        let out: Vec<usize> = match self {
            Placement::Named(NamedPlacement::All) => (0..layers).collect(),
            Placement::Named(NamedPlacement::Even) => {
                (0..layers).filter(|&p| numbered(p) % 2 == 0).collect()
            }
            Placement::Named(NamedPlacement::Odd) => {
                (0..layers).filter(|&p| numbered(p) % 2 == 1).collect()
            }
            Placement::Named(NamedPlacement::Last) => layers.checked_sub(1).into_iter().collect(),
            Placement::Named(NamedPlacement::None) => Vec::new(),
            Placement::Layers(list) => {
                let mut out = Vec::with_capacity(list.len());
                for &i in list {
                    if i < index_base || i - index_base >= layers {
                        return Err(Error::Config(format!(
                            "layer index {i} outside [{}, {}]",
                            index_base,
                            layers + index_base - 1
                        )));
                    }
                    out.push(i - index_base);
                }
                out.sort_unstable();
                out.dedup();
                out
            }
        };
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Masks are added as-is (β fixed at 1, not trained).
    Fixed,
    /// Masks are scaled by learnable per-token β before being added.
    DynamicBeta,
    /// The mask values themselves (template fg/bg and search level) are
    /// learnable scalars; β stays fixed at 1.
    FullyLearnable,
}

/// Which frames feed the template region during tracking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    First,
    Previous,
    Merged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Transformer layers.
    pub layers: usize,
    /// Token width.
    pub dim: usize,
    pub heads: usize,
    /// FFN hidden width as a multiple of `dim`.
    pub ffn_mult: usize,
    /// Adapter bottleneck width.
    pub adapter_rank: usize,
    /// Experts per mixture layer.
    pub experts: usize,
    /// Experts activated per token.
    pub top_k: usize,
    /// Expert hidden width; `None` means `ceil(dim / 8)`.
    pub expert_hidden: Option<usize>,
    pub adapter_layers: Placement,
    pub moge_layers: Placement,
    /// How `adapter_layers`/`moge_layers` count layers (0 or 1).
    pub layer_index_base: usize,
    pub template_points: usize,
    pub search_points: usize,
    /// Tokens per region; must not exceed the point count.
    pub template_groups: usize,
    pub search_groups: usize,
    /// Neighbours per token group.
    pub group_neighbors: usize,
    /// Meters added to box `w` and `l` when cropping the search region.
    pub search_enlarge: f64,
    /// Meters added to box `w` and `l` when cropping the template.
    pub template_enlarge: f64,
    pub template_mode: TemplateMode,
    pub mask_mode: MaskMode,
    /// Carry the encoder's temporal output into the next frame.
    pub temporal_propagation: bool,
    /// Train the backbone too instead of freezing it.
    pub full_finetune: bool,
    /// Keep the patch and positional embedding at their initial values.
    pub freeze_embedding: bool,
    /// Std of the seeded Gaussian used for the stand-in backbone.
    pub backbone_init_std: f64,
    pub layer_norm_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            layers: 4,
            dim: 64,
            heads: 4,
            ffn_mult: 4,
            adapter_rank: 16,
            experts: 8,
            top_k: 4,
            expert_hidden: None,
            adapter_layers: Placement::all(),
            moge_layers: Placement::even(),
            layer_index_base: 1,
            template_points: 128,
            search_points: 128,
            template_groups: 64,
            search_groups: 64,
            group_neighbors: 8,
            search_enlarge: 2.0,
            template_enlarge: 1.0,
            template_mode: TemplateMode::Previous,
            mask_mode: MaskMode::DynamicBeta,
            temporal_propagation: true,
            full_finetune: false,
            freeze_embedding: false,
            backbone_init_std: 0.02,
            layer_norm_eps: 1e-5,
            init_seed: 0,
        }
    }

    /// Backbone sized like a ViT-S point transformer (12 layers, 384 wide,
    /// 6 heads) with one token per sampled point.
    pub fn full_scale() -> Self {
        Self {
            layers: 12,
            dim: 384,
            heads: 6,
            adapter_rank: 72,
            template_groups: 128,
            search_groups: 128,
            ..Self::desk()
        }
    }

    /// A few thousand parameters; used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            layers: 2,
            dim: 16,
            heads: 2,
            ffn_mult: 2,
            adapter_rank: 4,
            experts: 4,
            top_k: 2,
            template_points: 12,
            search_points: 12,
            template_groups: 6,
            search_groups: 6,
            group_neighbors: 3,
            ..Self::desk()
        }
    }

    pub fn expert_hidden(&self) -> usize {
        self.expert_hidden.unwrap_or(self.dim.div_ceil(8))
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_mult * self.dim
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Total tokens fed to the encoder: temporal + template + search.
    pub fn tokens(&self) -> usize {
        1 + self.template_groups + self.search_groups
    }

    pub fn adapter_positions(&self) -> Result<Vec<usize>> {
        self.adapter_layers.resolve(self.layers, self.layer_index_base)
    }

    pub fn moge_positions(&self) -> Result<Vec<usize>> {
        self.moge_layers.resolve(self.layers, self.layer_index_base)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 || self.dim == 0 || self.heads == 0 {
            return fail("layers, dim and heads must be positive".into());
        }
        if self.dim % self.heads != 0 {
            return fail(format!("heads ({}) must divide dim ({})", self.heads, self.dim));
        }
        if self.dim < 2 {
            return fail("dim must be at least 2".into());
        }
        if self.adapter_rank == 0 || self.adapter_rank >= self.dim {
            return fail(format!(
                "adapter_rank must be in [1, dim), got {} for dim {}",
                self.adapter_rank, self.dim
            ));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return fail(format!(
                "top_k must be in [1, experts], got {} of {}",
                self.top_k, self.experts
            ));
        }
        if self.layer_index_base > 1 {
            return fail("layer_index_base must be 0 or 1".into());
        }
        self.adapter_positions()?;
        self.moge_positions()?;
        if self.template_groups == 0 || self.template_groups > self.template_points {
            return fail("template_groups must be in [1, template_points]".into());
        }
        if self.search_groups == 0 || self.search_groups > self.search_points {
            return fail("search_groups must be in [1, search_points]".into());
        }
        if self.group_neighbors == 0
            || self.group_neighbors > self.template_points.min(self.search_points)
        {
            return fail("group_neighbors must be in [1, min(points)]".into());
        }
        if !(self.search_enlarge >= 0.0) || !(self.template_enlarge >= 0.0) {
            return fail("crop enlargement must be non-negative".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the peak rate down to zero at the last step.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Frames per training clip: one template frame plus `clip_length - 1`
    /// search frames.
    pub clip_length: usize,
    pub steps: usize,
    /// Clips per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear warmup length in steps; 0 disables it.
    pub warmup_steps: usize,
    /// Learning-rate shape after warmup.
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Clip the global gradient norm; 0 disables clipping.
    pub grad_clip: f64,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub huber_delta: f64,
    /// Std (meters) of the perturbation applied to the reference box used to
    /// crop each training search region.
    pub search_jitter: f64,
    /// Std (meters) of the vertical perturbation of that reference box.
    pub search_z_jitter: f64,
    /// Std (radians) of the yaw perturbation of that reference box.
    pub search_yaw_jitter: f64,
    /// Backpropagate through the carried temporal token inside a clip.
    pub bptt: bool,
    /// Weight of the auxiliary expert load-balance loss; 0 turns it off.
    pub load_balance_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_length: 3,
            steps: 1000,
            batch_size: 1,
            learning_rate: 1e-3,
            warmup_steps: 50,
            lr_schedule: LrSchedule::Cosine,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 5.0,
            lambda_cls: 1.0,
            lambda_reg: 1.0,
            huber_delta: 1.0,
            search_jitter: 0.3,
            search_z_jitter: 0.1,
            search_yaw_jitter: 0.1,
            bptt: true,
            load_balance_weight: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_length < 2 {
            return Err(Error::Config("clip_length must be at least 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
            ("huber_delta", self.huber_delta),
        ];
        for (name, v) in rates {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must be below 1".into()));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || self.load_balance_weight < 0.0 {
            return Err(Error::Config(
                "weight_decay, grad_clip and load_balance_weight must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a CLI run needs, loadable from one JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides both `model.init_seed` and `train.seed`.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.model.init_seed = seed;
            cfg.train.seed = seed;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_layers_one_based() {
        let p = Placement::even();
        assert_eq!(p.resolve(4, 1).unwrap(), vec![1, 3]);
        assert_eq!(p.resolve(4, 0).unwrap(), vec![0, 2]);
        assert_eq!(Placement::all().resolve(3, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            Placement::Named(NamedPlacement::Last).resolve(3, 1).unwrap(),
            vec![2]
        );
    }

    #[test]
    fn explicit_layers_are_range_checked() {
        assert_eq!(Placement::Layers(vec![4, 2]).resolve(4, 1).unwrap(), vec![1, 3]);
        assert!(matches!(
            Placement::Layers(vec![5]).resolve(4, 1),
            Err(Error::Config(_))
        ));
        assert!(Placement::Layers(vec![0]).resolve(4, 1).is_err());
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let err = RunConfig::from_json(r#"{"model": {"dimm": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("dimm"), "{err}");
    }

    #[test]
    fn placement_json_forms() {
        let cfg = RunConfig::from_json(
            r#"{"model": {"moge_layers": "all", "adapter_layers": [1, 3]}, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.moge_layers, Placement::all());
        assert_eq!(cfg.model.adapter_layers, Placement::Layers(vec![1, 3]));
        assert_eq!(cfg.model.init_seed, 9);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn defaults_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::full_scale().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_model_configs() {
        let mut c = ModelConfig::desk();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.top_k = 9;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.search_groups = 500;
        assert!(c.validate().is_err());
    }
}
