//! Attentive correlated temporal features for video action recognition.
//!
//! The crate computes an order-sensitive video descriptor from a low-level
//! feature `F ∈ R^{t × C × H × W}`: compact bilinear correlations between
//! successive frames at every spatial location (Tensor Sketch), pairwise
//! temporal means, attention-weighted fusion of the two, and a small reduction
//! network. Everything is differentiable on a reverse-mode [`Tape`] and generic
//! over the scalar type; [`TensorF64`] and friends fix it to `f64`.

pub mod actf;
pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod sketch;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, Variant};
pub use scalar::Scalar;
pub use sketch::{SketchMode, SketchPlan, Which};
pub use tensor::{Tape, Tensor, Var};

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type TapeF64 = Tape<f64>;
