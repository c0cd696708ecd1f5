//! Incremental instance segmentation of ray-traced indoor point clouds.
//!
//! The crate covers the whole online loop: simulating laser scans over a
//! labeled environment, a point-wise network with multi-view context
//! pooling, a global voxel lookup table, incremental agglomerative
//! clustering and the evaluation metrics used to score the result.

pub mod error;
pub mod pointcloud;
pub mod raytrace;
pub mod clustering;
pub mod globalmap;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod voxel;

pub use error::{Error, Result};

/// Positions are plain `f64` 3-vectors in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
