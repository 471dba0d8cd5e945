//! Re-localisation of a lidar submap inside a prior map of submaps.
//!
//! The flow is retrieval over global descriptors, RANSAC + ICP registration
//! on keypoints and downsampled clouds, cross-modal image/lidar verification
//! of the estimated pose, and merging of the accepted edge into a pose graph.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colour;
pub mod descriptors;
mod error;
pub mod geom;
pub mod hexfloat;
mod kv;
pub mod pipeline;
pub mod place_recognition;
pub mod pose_graph;
pub mod registration;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
pub use geom::{FeatureMatrix, PointCloud, RigidTransform};
