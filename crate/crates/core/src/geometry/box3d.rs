use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

/// Oriented box with yaw about the vertical axis.
///
/// `size = [w, l, h]`: `w` is the extent along the box's own x axis (the
/// heading direction), `l` along its y axis and `h` vertically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub yaw: f64,
    pub size: [f64; 3],
}

impl Box3D {
    pub fn new(center: [f64; 3], yaw: f64, size: [f64; 3]) -> Result<Self> {
        if !size.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::Contract(format!("box sizes must be positive, got {size:?}")));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(Error::Contract("box center and yaw must be finite".into()));
        }
        Ok(Self {
            center,
            yaw: normalize_angle(yaw),
            size,
        })
    }

    /// Box of the given size at the origin with zero yaw: how any box looks
    /// in its own canonical frame.
    pub fn canonical(size: [f64; 3]) -> Self {
        Self {
            center: [0.0; 3],
            yaw: 0.0,
            size,
        }
    }

    /// Seven-number form `(x, y, z, yaw, w, l, h)`.
    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.center;
        let [w, l, h] = self.size;
        [x, y, z, self.yaw, w, l, h]
    }

    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        Self::new([v[0], v[1], v[2]], v[3], [v[4], v[5], v[6]])
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// World point expressed in the box frame (translated, then rotated by -yaw).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    /// Inverse of [`Box3D::to_local`].
    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            c * p[0] - s * p[1] + self.center[0],
            s * p[0] + c * p[1] + self.center[1],
            p[2] + self.center[2],
        ]
    }

    /// Containment test; points on a face count as inside.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let q = self.to_local(p);
        q.iter()
            .zip(&self.size)
            .all(|(v, s)| v.abs() <= 0.5 * s)
    }

    /// Another box of the same size expressed in this box's canonical frame.
    pub fn relative(&self, other: &Box3D) -> Box3D {
        Box3D {
            center: self.to_local(other.center),
            yaw: normalize_angle(other.yaw - self.yaw),
            size: other.size,
        }
    }

    /// BEV corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hw = 0.5 * self.size[0];
        let hl = 0.5 * self.size[1];
        [(hw, hl), (-hw, hl), (-hw, -hl), (hw, -hl)].map(|(x, y)| {
            [
                c * x - s * y + self.center[0],
                s * x + c * y + self.center[1],
            ]
        })
    }

    pub fn center_distance(&self, other: &Box3D) -> f64 {
        self.center
            .iter()
            .zip(&other.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Moves a box by an offset given in its own canonical frame.
///
/// `offset = (dx, dy, dz, dyaw)`. The translation is rotated into the world
/// frame by the box yaw; the size never changes.
pub fn apply_box_offset(b: &Box3D, offset: [f64; 4]) -> Box3D {
    let (s, c) = b.yaw.sin_cos();
    let [dx, dy, dz, dyaw] = offset;
    Box3D {
        center: [
            b.center[0] + c * dx - s * dy,
            b.center[1] + s * dx + c * dy,
            b.center[2] + dz,
        ],
        yaw: normalize_angle(b.yaw + dyaw),
        size: b.size,
    }
}
