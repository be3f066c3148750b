use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::category::{CategorySpec, MotionModel, ShapeKind};
use super::io::quantize;
use super::{Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, PointCloud};

/// Gap between the sampled surface and the ground-truth box faces, meters.
/// Keeps noise-free points strictly inside after text quantization.
const SURFACE_INSET: f64 = 0.005;
/// Sensor noise is truncated at this many standard deviations per axis, and
/// the surface is pulled in by as much, so every object point lies inside
/// its ground-truth box as it would in an annotated scan.
const NOISE_TRUNCATION: f64 = 2.5;

/// Side of the clutter cube, meters.
const CLUTTER_EXTENT: f64 = 20.0;

/// Integration substeps per frame for the non-linear motion models.
const SUBSTEPS: usize = 50;

/// Knobs that override a category's noise settings; used to build clean
/// sequences for tests.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseOverride {
    pub noise_sigma: Option<f64>,
    pub dropout: Option<f64>,
    pub clutter_points: Option<usize>,
}

/// Object pose at every frame plus the per-sequence parameters.
#[derive(Clone, Debug)]
struct Trajectory {
    boxes: Vec<Box3D>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn trajectory(spec: &CategorySpec, length: usize, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let size = [0, 1, 2].map(|i| uniform(rng, spec.size_min[i], spec.size_max[i]));
    let x0 = uniform(rng, -20.0, 20.0);
    let y0 = uniform(rng, -20.0, 20.0);
    let heading = uniform(rng, -PI, PI);
    let speed = uniform(rng, spec.speed_min, spec.speed_max);
    let phase = uniform(rng, 0.0, TAU);
    let z = 0.5 * size[2];
    let dt = spec.frame_dt;

    let mut boxes = Vec::with_capacity(length);
    match spec.motion {
        MotionModel::ConstantVelocity => {
            let (s, c) = heading.sin_cos();
            for i in 0..length {
                let t = i as f64 * dt;
                boxes.push(Box3D::new([x0 + speed * t * c, y0 + speed * t * s, z], heading, size)?);
            }
        }
        MotionModel::StopAndGo { period } => {
            let (s, c) = heading.sin_cos();
            let rate = |t: f64| speed * (TAU * t / period + phase).sin().max(0.0);
            let mut dist = 0.0;
            let h = dt / SUBSTEPS as f64;
            for i in 0..length {
                if i > 0 {
                    let t0 = (i - 1) as f64 * dt;
                    for k in 0..SUBSTEPS {
                        dist += h * rate(t0 + (k as f64 + 0.5) * h);
                    }
                }
                boxes.push(Box3D::new([x0 + dist * c, y0 + dist * s, z], heading, size)?);
            }
        }
        MotionModel::Weaving { amplitude, period } => {
            let yaw_at = |t: f64| heading + amplitude * (TAU * t / period + phase).sin();
            let (mut x, mut y) = (x0, y0);
            let h = dt / SUBSTEPS as f64;
            for i in 0..length {
                if i > 0 {
                    let t0 = (i - 1) as f64 * dt;
                    for k in 0..SUBSTEPS {
                        let (s, c) = yaw_at(t0 + (k as f64 + 0.5) * h).sin_cos();
                        x += h * speed * c;
                        y += h * speed * s;
                    }
                }
                boxes.push(Box3D::new([x, y, z], normalize_angle(yaw_at(i as f64 * dt)), size)?);
            }
        }
    }
    Ok(Trajectory { boxes })
}

/// Axis-aligned cuboid in the box frame.
#[derive(Clone, Copy, Debug)]
struct Cuboid {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Cuboid {
    fn face_areas(&self) -> [f64; 3] {
        let d = [0, 1, 2].map(|i| self.hi[i] - self.lo[i]);
        // Area of one face perpendicular to each axis.
        [d[1] * d[2], d[0] * d[2], d[0] * d[1]]
    }

    fn area(&self) -> f64 {
        2.0 * self.face_areas().iter().sum::<f64>()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let a = self.face_areas();
        let pick = rng.random_range(0.0..(a[0] + a[1] + a[2]));
        let axis = if pick < a[0] {
            0
        } else if pick < a[0] + a[1] {
            1
        } else {
            2
        };
        let mut p = [0, 1, 2].map(|i| uniform(rng, self.lo[i], self.hi[i]));
        p[axis] = if rng.random_bool(0.5) { self.lo[axis] } else { self.hi[axis] };
        p
    }
}

/// Samples the object surface for frame `frame` in the box frame.
fn sample_surface(
    spec: &CategorySpec,
    size: [f64; 3],
    frame: usize,
    phase: f64,
    inset: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    let hw = 0.5 * size[0] - inset;
    let hl = 0.5 * size[1] - inset;
    let hh = 0.5 * size[2] - inset;
    let t = frame as f64;
    match spec.shape {
        ShapeKind::CuboidShell | ShapeKind::ThinSlab => {
            let c = Cuboid {
                lo: [-hw, -hl, -hh],
                hi: [hw, hl, hh],
            };
            let n = (spec.density * c.area()).round() as usize;
            (0..n).map(|_| c.sample(rng)).collect()
        }
        ShapeKind::LBracket => {
            let w = 2.0 * hw;
            let h = 2.0 * hh;
            let bar = Cuboid {
                lo: [-hw, -0.4 * hl, -hh],
                hi: [hw, 0.4 * hl, -hh + 0.45 * h],
            };
            // The upright leans back and forth between frames.
            let xc = -0.1 * w + 0.1 * w * (0.8 * t + phase).sin();
            let upright = Cuboid {
                lo: [xc - 0.15 * w, -hl, -hh + 0.45 * h],
                hi: [xc + 0.15 * w, hl, hh],
            };
            let (a, b) = (bar.area(), upright.area());
            let n = (spec.density * (a + b)).round() as usize;
            (0..n)
                .map(|_| {
                    if rng.random_range(0.0..(a + b)) < a {
                        bar.sample(rng)
                    } else {
                        upright.sample(rng)
                    }
                })
                .collect()
        }
        ShapeKind::CylinderSphere => {
            let half = hw.min(hl);
            let r = 0.6 * half;
            let rh = 0.45 * half;
            // Body sways inside the box.
            let sway = (half - r).max(0.0) * 0.9;
            let sx = sway * (0.9 * t + phase).sin();
            let sy = sway * (1.3 * t + phase).cos() * 0.5;
            let body_h = 2.0 * hh - 2.0 * rh;
            let body_area = TAU * r * body_h;
            let head_area = 2.0 * TAU * rh * rh;
            let n = (spec.density * (body_area + head_area)).round() as usize;
            (0..n)
                .map(|_| {
                    if rng.random_range(0.0..(body_area + head_area)) < body_area {
                        let a = rng.random_range(0.0..TAU);
                        let z = uniform(rng, -hh, -hh + body_h);
                        [sx + r * a.cos(), sy + r * a.sin(), z]
                    } else {
                        let v: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
                        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                        [
                            0.5 * sx + rh * v[0] / norm,
                            0.5 * sy + rh * v[1] / norm,
                            hh - rh + rh * v[2] / norm,
                        ]
                    }
                })
                .collect()
        }
    }
}

fn quantize_point(p: [f64; 3]) -> [f64; 3] {
    p.map(quantize)
}

/// Generates one sequence. Pure function of `(spec, length, seed)`.
pub fn generate_sequence(spec: &CategorySpec, length: usize, seed: u64) -> Result<Sequence> {
    generate_sequence_with(spec, length, seed, NoiseOverride::default())
}

/// [`generate_sequence`] with some noise settings replaced.
pub fn generate_sequence_with(
    spec: &CategorySpec,
    length: usize,
    seed: u64,
    over: NoiseOverride,
) -> Result<Sequence> {
    spec.validate()?;
    if length < 2 {
        return Err(Error::Config(format!("sequence length must be >= 2, got {length}")));
    }
    let sigma = over.noise_sigma.unwrap_or(spec.noise_sigma);
    let dropout = over.dropout.unwrap_or(spec.dropout);
    let clutter = over.clutter_points.unwrap_or(spec.clutter_points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = trajectory(spec, length, &mut rng)?;
    let phase = rng.random_range(0.0..TAU);
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let half = 0.5 * CLUTTER_EXTENT;
    let bound = NOISE_TRUNCATION * sigma.max(0.0);
    let inset = SURFACE_INSET + bound;
    if spec.size_min.iter().any(|&s| 0.5 * s <= inset) {
        return Err(Error::Config(format!(
            "{}: noise_sigma {sigma} too large for the smallest box",
            spec.name
        )));
    }

    let mut frames = Vec::with_capacity(length);
    for (i, gt) in traj.boxes.iter().enumerate() {
        let mut points = Vec::new();
        for p in sample_surface(spec, gt.size, i, phase, inset, &mut rng) {
            if dropout > 0.0 && rng.random_bool(dropout) {
                continue;
            }
            let q = if sigma > 0.0 {
                p.map(|c| c + f64::clamp(noise.sample(&mut rng), -bound, bound))
            } else {
                p
            };
            points.push(quantize_point(gt.to_world(q)));
        }
        for _ in 0..clutter {
            let p = [0, 1, 2].map(|k| gt.center[k] + rng.random_range(-half..half));
            points.push(quantize_point(p));
        }
        frames.push(Frame {
            cloud: PointCloud::new(points),
            gt: *gt,
        });
    }
    Ok(Sequence {
        category: spec.name.clone(),
        frames,
        seed,
    })
}
