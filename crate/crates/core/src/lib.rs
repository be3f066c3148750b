//! Category-agnostic 3D single-object tracking on point clouds.
//!
//! A frozen transformer encoder is adapted to tracking with small trainable
//! pieces: two-path gated adapters beside every attention and feed-forward
//! sublayer, a top-k routed mixture of geometry experts on alternate layers,
//! a temporal token carried from frame to frame, and learnable weights on the
//! foreground/background masks that are added to the input tokens.
//!
//! Everything runs on a small dense-tensor engine with reverse-mode
//! differentiation ([`numerics`]) so that each mechanism can be checked
//! against finite differences. A seeded synthetic data generator
//! ([`synthdata`]) stands in for LiDAR benchmarks, and [`evaluation`]
//! provides one-pass Success/Precision tracking metrics.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod learning;
pub mod model;
pub mod numerics;
pub mod params;
pub mod synthdata;
pub mod temporal;

pub use error::{Error, Result};
