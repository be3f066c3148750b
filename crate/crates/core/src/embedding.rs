//! Point groups to tokens.
//!
//! A region is split into `g` neighbourhoods around farthest-point-sampled
//! centers; a shared point MLP followed by a max-pool turns each neighbourhood
//! into one token, and a small MLP on the center coordinates adds position.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{dist2, farthest_point_sample, RegionKind, RegionSample};
use crate::numerics::{Tensor, Var};
use crate::params::{Graph, ParamId, ParamStore};

/// `g` groups of `k` points each, offsets relative to their group center.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhoods {
    pub centers: Vec<[f64; 3]>,
    /// Index of each center inside the region.
    pub center_indices: Vec<usize>,
    /// `g * k` member indices, group-major.
    pub members: Vec<usize>,
    /// `g * k` offsets (member - center), group-major.
    pub offsets: Vec<[f64; 3]>,
    pub k: usize,
}

impl Neighborhoods {
    pub fn groups(&self) -> usize {
        self.centers.len()
    }
}

/// Picks `g` centers by farthest point sampling from point 0 and collects the
/// `k` nearest points of each (ties by lower index).
pub fn group_points(region: &RegionSample, g: usize, k: usize) -> Result<Neighborhoods> {
    let pts = &region.points.points;
    let n = pts.len();
    if g == 0 || g > n {
        return Err(Error::Config(format!("group count {g} not in [1, {n}]")));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("neighbour count {k} not in [1, {n}]")));
    }
    let center_indices = farthest_point_sample(&region.points, g, 0)?;
    let mut members = Vec::with_capacity(g * k);
    let mut offsets = Vec::with_capacity(g * k);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &ci in &center_indices {
        let c = pts[ci];
        order.clear();
        order.extend(pts.iter().enumerate().map(|(i, &p)| (dist2(p, c), i)));
        // Partial selection then a deterministic sort of the kept prefix.
        order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nearest: Vec<(f64, usize)> = order[..k].to_vec();
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, i) in nearest {
            members.push(i);
            let p = pts[i];
            offsets.push([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
        }
    }
    Ok(Neighborhoods {
        centers: center_indices.iter().map(|&i| pts[i]).collect(),
        center_indices,
        members,
        offsets,
        k,
    })
}

/// Shared point MLP `3 → d/2 → d` (ReLU between) weights.
#[derive(Clone, Copy, Debug)]
pub struct PatchEmbedParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Center-coordinate MLP `3 → d → d` (GeLU between) weights.
#[derive(Clone, Copy, Debug)]
pub struct PositionalParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

fn linear_init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::randn(&[fan_in, fan_out], std, rng)
}

impl PatchEmbedParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Self {
        let hidden = dim / 2;
        Self {
            w1: store.add(format!("{prefix}.w1"), linear_init(3, hidden, rng), false),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden]), false),
            w2: store.add(format!("{prefix}.w2"), linear_init(hidden, dim, rng), false),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[dim]), false),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

impl PositionalParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), linear_init(3, dim, rng), false),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[dim]), false),
            w2: store.add(
                format!("{prefix}.w2"),
                Tensor::randn(&[dim, dim], 0.02, rng),
                false,
            ),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[dim]), false),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// `x·W + b` on the tape.
pub(crate) fn linear(g: &mut Graph<'_>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let w = g.param(w);
    let b = g.param(b);
    let y = g.tape.matmul(x, w)?;
    g.tape.add(y, b)
}

/// Per-point MLP, then max over the `k` members of each group: `[g, d]`.
pub fn patch_embed(g: &mut Graph<'_>, hoods: &Neighborhoods, p: &PatchEmbedParams) -> Result<Var> {
    let flat: Vec<f64> = hoods.offsets.iter().flat_map(|o| o.iter().copied()).collect();
    let x = g.tape.constant(Tensor::new(&[hoods.offsets.len(), 3], flat)?);
    let h = linear(g, x, p.w1, p.b1)?;
    let h = g.tape.relu(h);
    let y = linear(g, h, p.w2, p.b2)?;
    let dim = g.value(y).last_dim();
    let y = g.tape.reshape(y, &[hoods.groups(), hoods.k, dim])?;
    g.tape.max_pool(y)
}

/// Positional vectors `[g, d]` for group centers.
pub fn positional_embed(g: &mut Graph<'_>, centers: &[[f64; 3]], p: &PositionalParams) -> Result<Var> {
    let flat: Vec<f64> = centers.iter().flat_map(|c| c.iter().copied()).collect();
    let x = g.tape.constant(Tensor::new(&[centers.len(), 3], flat)?);
    let h = linear(g, x, p.w1, p.b1)?;
    let h = g.tape.gelu(h);
    linear(g, h, p.w2, p.b2)
}

/// Embedded tokens of one region.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    /// `[g, d]` on the graph's tape.
    pub tokens: Var,
    pub centers: Vec<[f64; 3]>,
    /// Mask value of each token's center point.
    pub mask: Vec<f64>,
    pub kind: RegionKind,
}

/// Groups, embeds and position-encodes a region.
pub fn embed_region(
    g: &mut Graph<'_>,
    region: &RegionSample,
    groups: usize,
    neighbors: usize,
    patch: &PatchEmbedParams,
    pos: &PositionalParams,
) -> Result<TokenBatch> {
    let hoods = group_points(region, groups, neighbors)?;
    let feats = patch_embed(g, &hoods, patch)?;
    let pe = positional_embed(g, &hoods.centers, pos)?;
    let tokens = g.tape.add(feats, pe)?;
    let mask = hoods
        .center_indices
        .iter()
        .map(|&i| region.mask[i])
        .collect();
    Ok(TokenBatch {
        tokens,
        centers: hoods.centers,
        mask,
        kind: region.kind,
    })
}
