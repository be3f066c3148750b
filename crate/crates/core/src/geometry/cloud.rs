use serde::{Deserialize, Serialize};

use super::Box3D;
use crate::error::{Error, Result};

/// Unordered set of 3D points, in meters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud::new(idx.iter().map(|&i| self.points[i]).collect())
    }
}

pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest point sampling.
///
/// Starts at `seed_index`; each further pick maximises the minimum distance
/// to everything already picked, ties going to the lowest index. When `n`
/// exceeds the cloud size, the full selection order is repeated cyclically.
pub fn farthest_point_sample(pc: &PointCloud, n: usize, seed_index: usize) -> Result<Vec<usize>> {
    let total = pc.len();
    if total == 0 {
        return Err(Error::EmptyInput("farthest_point_sample on empty cloud"));
    }
    if n == 0 {
        return Err(Error::Contract("farthest_point_sample needs n >= 1".into()));
    }
    if seed_index >= total {
        return Err(Error::Contract(format!(
            "seed index {seed_index} out of range for {total} points"
        )));
    }
    let take = n.min(total);
    let mut order = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; total];
    let mut chosen = vec![false; total];
    let mut current = seed_index;
    loop {
        order.push(current);
        chosen[current] = true;
        if order.len() == take {
            break;
        }
        let c = pc.points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pc.points.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d = dist2(*p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    for i in take..n {
        order.push(order[i % take]);
    }
    Ok(order)
}

/// One flag per point: inside `b` (faces included).
pub fn points_in_box(pc: &PointCloud, b: &Box3D) -> Vec<bool> {
    pc.points.iter().map(|&p| b.contains(p)).collect()
}
