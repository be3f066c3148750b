use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry sampled on the object surface, in the box frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// The six faces of the box.
    CuboidShell,
    /// Upright cylinder body with a sphere on top; sways between frames.
    CylinderSphere,
    /// A long thin plate spanning the box.
    ThinSlab,
    /// Low horizontal bar with an upright bar at the rear; the upright leans.
    LBracket,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MotionModel {
    /// Straight line at constant speed.
    ConstantVelocity,
    /// Speed modulated by `max(0, sin)` with the given period; heading fixed.
    StopAndGo { period: f64 },
    /// Heading oscillates sinusoidally; the object follows its heading.
    Weaving { amplitude: f64, period: f64 },
}

/// One synthetic object category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub shape: ShapeKind,
    /// `(w, l, h)` lower bounds, meters. `w` runs along the heading.
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
    pub motion: MotionModel,
    /// Speed range, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Surface points per square meter before dropout.
    pub density: f64,
    pub dropout: f64,
    /// Std of Gaussian noise on object points, meters.
    pub noise_sigma: f64,
    /// Uniform background points per frame in a 20 m cube around the object.
    pub clutter_points: usize,
    /// Seconds between frames.
    pub frame_dt: f64,
}

impl CategorySpec {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.size_min[i] > 0.0 && self.size_min[i] <= self.size_max[i]) {
                return Err(Error::Config(format!("{}: bad size range on axis {i}", self.name)));
            }
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max) {
            return Err(Error::Config(format!("{}: bad speed range", self.name)));
        }
        if !(self.density > 0.0) || !(self.noise_sigma >= 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("{}: density, noise or dropout out of range", self.name)));
        }
        if !(self.frame_dt > 0.0) {
            return Err(Error::Config(format!("{}: frame_dt must be positive", self.name)));
        }
        Ok(())
    }

    /// Large rigid box moving in a straight line.
    pub fn car() -> Self {
        Self {
            name: "car".into(),
            shape: ShapeKind::CuboidShell,
            size_min: [3.8, 1.6, 1.4],
            size_max: [4.8, 2.0, 1.7],
            motion: MotionModel::ConstantVelocity,
            speed_min: 4.0,
            speed_max: 9.0,
            density: 4.5,
            dropout: 0.1,
            noise_sigma: 0.02,
            clutter_points: 200,
            frame_dt: 0.1,
        }
    }

    /// Small upright body whose point pattern changes from frame to frame.
    pub fn pedestrian() -> Self {
        Self {
            name: "pedestrian".into(),
            shape: ShapeKind::CylinderSphere,
            size_min: [0.5, 0.5, 1.5],
            size_max: [0.8, 0.8, 1.9],
            motion: MotionModel::StopAndGo { period: 1.6 },
            speed_min: 1.0,
            speed_max: 2.0,
            density: 40.0,
            dropout: 0.1,
            noise_sigma: 0.02,
            clutter_points: 200,
            frame_dt: 0.1,
        }
    }

    /// Long, thin, low object that weaves.
    pub fn elongated() -> Self {
        Self {
            name: "elongated".into(),
            shape: ShapeKind::ThinSlab,
            size_min: [2.5, 0.3, 0.8],
            size_max: [4.0, 0.5, 1.2],
            motion: MotionModel::Weaving {
                amplitude: 0.25,
                period: 2.0,
            },
            speed_min: 2.0,
            speed_max: 4.0,
            density: 12.0,
            dropout: 0.1,
            noise_sigma: 0.02,
            clutter_points: 200,
            frame_dt: 0.1,
        }
    }

    /// Articulated two-part body, weaving.
    pub fn cyclist() -> Self {
        Self {
            name: "cyclist".into(),
            shape: ShapeKind::LBracket,
            size_min: [1.6, 0.5, 1.5],
            size_max: [1.9, 0.8, 1.8],
            motion: MotionModel::Weaving {
                amplitude: 0.3,
                period: 1.5,
            },
            speed_min: 3.0,
            speed_max: 6.0,
            density: 16.0,
            dropout: 0.1,
            noise_sigma: 0.02,
            clutter_points: 200,
            frame_dt: 0.1,
        }
    }

    /// The four desk categories, in dataset order.
    pub fn desk_categories() -> Vec<Self> {
        vec![Self::car(), Self::pedestrian(), Self::elongated(), Self::cyclist()]
    }
}
