//! Global and local submap descriptors, the Scan Context baseline, and the
//! feature providers used by cross-modal verification.

mod gem;
mod global;
mod keypoints;
mod provider;
mod scan_context;

use std::path::Path;

use nalgebra::Point3;

pub use gem::{gem_pool, DEFAULT_GEM_P, GEM_EPS};
pub use global::{BaselineDescriptors, GlobalDescriptor, SubmapDescriptors, GLOBAL_DIM};
pub use keypoints::{
    baseline_local_descriptor, detect_keypoints, LocalDescriptorExtractor, LocalKeypoint,
    KEYPOINT_VOXEL, LOCAL_DIM,
};
pub use provider::{
    ColourEmbedding, FeatureProvider, FileFeatures, PixelFeatures, PrecomputedFeatures, DEFAULT_COLOUR_BANDWIDTH,
    DEFAULT_FEATURE_DIM,
};
pub use scan_context::{
    extract_scan_context, extract_scan_context_with, scan_context_distance, shifted_distance,
    ScanContextDescriptor, DEFAULT_MAX_RADIUS, DEFAULT_RINGS, DEFAULT_SECTORS,
};

use crate::geom::{io, FeatureMatrix};
use crate::{Error, Result};

/// Columns of a keypoint file row: position (3), saliency (1), descriptor.
pub const KEYPOINT_ROW: usize = 4 + LOCAL_DIM;

/// Reads a precomputed feature matrix (`R3FT`).
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    io::load_features(path)
}

pub fn keypoints_to_matrix(keypoints: &[LocalKeypoint]) -> FeatureMatrix {
    let mut m = FeatureMatrix::zeros(keypoints.len(), KEYPOINT_ROW);
    for (i, k) in keypoints.iter().enumerate() {
        let row = m.row_mut(i);
        let p = k.position();
        row[..4].copy_from_slice(&[p.x as f32, p.y as f32, p.z as f32, k.saliency() as f32]);
        for (dst, src) in row[4..].iter_mut().zip(k.descriptor()) {
            *dst = *src as f32;
        }
    }
    m
}

pub fn keypoints_from_matrix(m: &FeatureMatrix) -> Result<Vec<LocalKeypoint>> {
    if m.dim() != KEYPOINT_ROW {
        return Err(Error::invalid(format!(
            "keypoint matrix has {} columns, expected {KEYPOINT_ROW}",
            m.dim()
        )));
    }
    m.iter_rows()
        .map(|r| {
            LocalKeypoint::new(
                Point3::new(r[0] as f64, r[1] as f64, r[2] as f64),
                r[4..].iter().map(|&v| v as f64).collect(),
                r[3] as f64,
            )
        })
        .collect()
}

pub fn global_to_matrix(g: &GlobalDescriptor) -> FeatureMatrix {
    let data = g.as_slice().iter().map(|&v| v as f32).collect();
    FeatureMatrix::new(1, GLOBAL_DIM, data).expect("shape")
}

pub fn global_from_matrix(m: &FeatureMatrix) -> Result<GlobalDescriptor> {
    if m.rows() != 1 {
        return Err(Error::invalid(format!(
            "global descriptor file has {} rows, expected 1",
            m.rows()
        )));
    }
    GlobalDescriptor::new(m.row(0).iter().map(|&v| v as f64).collect())
}
