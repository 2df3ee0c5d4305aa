//! Motion auto-encoder whose latent space is aligned, through cosine losses,
//! with a frozen text/image embedding space.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors with reverse-mode differentiation
//! - [`rotation`]: 6D rotation parameters and rotation matrices
//! - [`skeleton`]: 24-joint kinematic tree and rigid vertex proxy
//! - [`renderer`]: deterministic stick-figure rasterizer
//! - [`embedding`]: text/image embedding providers (stub, remote, cached)
//! - [`model`]: transformer encoder/decoder and the training losses
//! - [`data`]: motion records, windowing, labels, triplets, synthetic families
//! - [`trainer`]: optimization loop, checkpoints, evaluation
//! - [`latent_ops`]: text-to-motion, interpolation, editing, classification

pub mod data;
pub mod embedding;
pub mod error;
pub mod latent_ops;
pub mod model;
pub mod renderer;
pub mod rotation;
pub mod skeleton;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Joints per pose: global orientation plus 23 body joints.
pub const JOINTS: usize = 24;
/// Parameters per joint rotation.
pub const ROT6D: usize = 6;
/// Flattened pose feature width.
pub const POSE_DIM: usize = JOINTS * ROT6D;
