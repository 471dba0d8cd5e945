//! SE(3) algebra, point clouds, spatial indexing and rigid fitting.

mod cloud;
pub mod io;
mod kabsch;
mod kdtree;
mod transform;

pub use cloud::{voxel_downsample, voxel_key, FeatureMatrix, PointCloud};
pub use kabsch::{kabsch_fit, rms_residual};
pub use kdtree::KdTree;
pub use transform::RigidTransform;

/// Spatial index over a point cloud's coordinates.
pub type SpatialIndex = KdTree;
