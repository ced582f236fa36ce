//! Point-cloud semantic segmentation with pointwise atrous convolution and
//! spatial/channel attention.
//!
//! The pipeline: bin points into a voxel grid ([`geometry`]), estimate
//! surface normals ([`normals`]), cut rooms into fixed-size blocks
//! ([`data`]), run the segmentation network ([`network`]) built from
//! differentiable ops ([`ops`]), train it with momentum SGD ([`training`]),
//! and score predictions ([`metrics`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod normals;
pub mod ops;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor2D;
