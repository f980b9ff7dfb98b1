//! Learned entropy coding of point-cloud octrees with windowed, multi-head
//! attention over ancestor context.

pub mod analysis;
pub mod coder;
pub mod config;
pub mod context;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod octree;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{PointCloud, QuantizedCloud};
pub use model::{Model, Model32, Model64, ModelConfig};
pub use octree::{NodeSequence, OctreeNode};
pub use scalar::Scalar;

pub type PointCloud32 = PointCloud<f32>;
pub type PointCloud64 = PointCloud<f64>;
