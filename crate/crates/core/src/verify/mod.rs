//! Cross-modal hypothesis verification: does the candidate cloud, placed by
//! the estimated pose, agree with what the query camera saw?
//!
//! The image is cut into SLIC superpixels, candidate points are grouped by the
//! superpixel they project into, and two scores summarise the agreement: the
//! mean cosine similarity of paired image/point features and the alignment
//! ratio. A polynomial SVC maps the pair to a [`Verdict`].

mod camera;
mod similarity;
mod slic;
mod superpoints;
mod svc;

use std::time::{Duration, Instant};

use image::RgbImage;

pub use camera::{forward_looking_mount, load_image, save_image, CameraModel, Projection, MIN_DEPTH};
pub use similarity::{
    alignment_ratio, cosine_similarity, mean_cosine_similarity, similarity_matrix, SimilarityMatrix,
    VerificationFeatures, DEFAULT_TOP_K,
};
pub use slic::{is_connected, slic_segment, Segmentation, DEFAULT_COMPACTNESS, MAX_SUPERPIXELS, SLIC_ITERATIONS};
pub use superpoints::{build_superpoints, SuperpixelSet, SuperpointSet};
pub use svc::{
    format_samples, kkt_violation, parse_samples, train_binary, BinaryAudit, BinarySolution, BinarySvc, Sample,
    SvcModel, SvcParams, Verdict, KERNEL_DEGREE,
};

use crate::descriptors::FeatureProvider;
use crate::geom::{PointCloud, RigidTransform};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    pub superpixels: usize,
    pub compactness: f64,
    pub top_k: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            superpixels: MAX_SUPERPIXELS,
            compactness: DEFAULT_COMPACTNESS,
            top_k: DEFAULT_TOP_K,
        }
    }
}

/// Wall-clock time of each verification stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyTimings {
    pub superpixel: Duration,
    /// Per-pixel and per-point feature extraction.
    pub description: Duration,
    /// Superpoints, similarity matrix and MCS.
    pub mcs: Duration,
    /// Alignment ratio and classification.
    pub verification: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    pub features: VerificationFeatures,
    pub timings: VerifyTimings,
}

/// The scores only, without classification. `pose` maps candidate-frame
/// points into the query lidar frame.
pub fn verification_features(
    image: &RgbImage,
    cloud: &PointCloud,
    pose: &RigidTransform,
    camera: &CameraModel,
    provider: &dyn FeatureProvider,
    params: &VerifyParams,
) -> Result<(VerificationFeatures, VerifyTimings)> {
    camera.check_image(image)?;
    let mut timings = VerifyTimings::default();

    let t = Instant::now();
    let seg = slic_segment(image, params.superpixels, params.compactness)?;
    timings.superpixel = t.elapsed();

    let t = Instant::now();
    let pixel_features = provider.pixel_features(image)?;
    let point_features = provider.point_features(cloud)?;
    let superpixels = SuperpixelSet::pool(seg, &pixel_features)?;
    timings.description = t.elapsed();

    let t = Instant::now();
    let scored = build_superpoints(cloud, &point_features, pose, camera, superpixels.segmentation())
        .and_then(|sp| Ok((similarity_matrix(&superpixels, &sp)?, sp)));
    timings.mcs = t.elapsed();
    let (sim, superpoints) = match scored {
        Ok(v) => v,
        Err(Error::EmptyOverlap) => return Ok((VerificationFeatures::empty(), timings)),
        Err(e) => return Err(e),
    };

    let t = Instant::now();
    let features = alignment_ratio(&superpixels, &superpoints, &sim, pose, camera, params.top_k)?;
    timings.verification = t.elapsed();
    Ok((features, timings))
}

/// Scores the hypothesis and classifies it. An empty overlap is `Unmatched`
/// with `pair_count = 0`.
pub fn verify(
    image: &RgbImage,
    cloud: &PointCloud,
    pose: &RigidTransform,
    camera: &CameraModel,
    provider: &dyn FeatureProvider,
    model: &SvcModel,
    params: &VerifyParams,
) -> Result<VerificationOutcome> {
    let (features, mut timings) = verification_features(image, cloud, pose, camera, provider, params)?;
    let t = Instant::now();
    let verdict = if features.pair_count == 0 {
        Verdict::Unmatched
    } else {
        model.predict(features.as_point())
    };
    timings.verification += t.elapsed();
    Ok(VerificationOutcome {
        verdict,
        features,
        timings,
    })
}
