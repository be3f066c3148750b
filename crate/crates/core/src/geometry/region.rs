use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{farthest_point_sample, Box3D, PointCloud};

/// Template foreground mask value.
pub const TEMPLATE_FG_MASK: f64 = 0.8;
/// Template background mask value.
pub const TEMPLATE_BG_MASK: f64 = 0.2;
/// Uniform search-region mask value.
pub const SEARCH_MASK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Template,
    Search,
}

/// A cropped, recentred and resampled region around a reference box.
///
/// Points are in the canonical frame of `origin_box`: translated to its
/// center and rotated by its negative yaw.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSample {
    pub points: PointCloud,
    /// One value per point, see [`build_masks`].
    pub mask: Vec<f64>,
    pub origin_box: Box3D,
    pub kind: RegionKind,
    /// No input point survived the crop; `points` are all at the origin.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct CropParams {
    /// Added to both `w` and `l` of the box before the BEV test.
    pub enlarge: f64,
    pub n_out: usize,
    pub kind: RegionKind,
}

/// Indices of points inside the crop volume: the box grown by `enlarge` in
/// BEV; vertically unbounded for search regions, exact height for templates.
pub fn crop_indices(pc: &PointCloud, b: &Box3D, enlarge: f64, kind: RegionKind) -> Vec<usize> {
    let hw = 0.5 * (b.size[0] + enlarge);
    let hl = 0.5 * (b.size[1] + enlarge);
    let hh = 0.5 * b.size[2];
    pc.points
        .iter()
        .enumerate()
        .filter(|(_, &p)| {
            let q = b.to_local(p);
            q[0].abs() <= hw
                && q[1].abs() <= hl
                && (kind == RegionKind::Search || q[2].abs() <= hh)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Crops `pc` around `b`, moves the survivors into the box frame and
/// resamples them to exactly `n_out` points by farthest point sampling
/// (cyclic repetition when fewer survive). `rng_seed` picks the sampling
/// start point.
pub fn crop_region(pc: &PointCloud, b: &Box3D, params: CropParams, rng_seed: u64) -> RegionSample {
    let CropParams {
        enlarge,
        n_out,
        kind,
    } = params;
    let kept = crop_indices(pc, b, enlarge, kind);
    let (points, degenerate) = if kept.is_empty() {
        (PointCloud::new(vec![[0.0; 3]; n_out]), true)
    } else {
        let local = PointCloud::new(kept.iter().map(|&i| b.to_local(pc.points[i])).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let start = rng.random_range(0..local.len());
        let order = farthest_point_sample(&local, n_out.max(1), start)
            .expect("non-empty cloud and n >= 1");
        (local.select(&order[..n_out]), false)
    };
    let mut region = RegionSample {
        points,
        mask: Vec::new(),
        origin_box: *b,
        kind,
        degenerate,
    };
    region.mask = build_masks(&region, kind);
    region
}

/// Per-point mask: templates get [`TEMPLATE_FG_MASK`] inside the origin box
/// and [`TEMPLATE_BG_MASK`] outside; search regions get [`SEARCH_MASK`].
pub fn build_masks(region: &RegionSample, kind: RegionKind) -> Vec<f64> {
    match kind {
        RegionKind::Search => vec![SEARCH_MASK; region.points.len()],
        RegionKind::Template => {
            let canonical = Box3D::canonical(region.origin_box.size);
            region
                .points
                .points
                .iter()
                .map(|&p| {
                    if canonical.contains(p) {
                        TEMPLATE_FG_MASK
                    } else {
                        TEMPLATE_BG_MASK
                    }
                })
                .collect()
        }
    }
}
