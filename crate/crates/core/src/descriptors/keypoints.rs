use std::collections::BTreeMap;

use nalgebra::Point3;

use crate::geom::{voxel_key, KdTree, PointCloud};
use crate::{Error, Result};

/// Length of a local keypoint descriptor.
pub const LOCAL_DIM: usize = 128;

/// Voxel edge used by the density keypoint detector.
pub const KEYPOINT_VOXEL: f64 = 1.0;

const ELEVATION_BINS: usize = 8;
const RADIAL_BINS: usize = 8;
const HEIGHT_BINS: usize = 64;

/// A keypoint in submap coordinates with a unit-norm descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalKeypoint {
    position: Point3<f64>,
    descriptor: Vec<f64>,
    saliency: f64,
}

impl LocalKeypoint {
    /// Normalises `descriptor`; fails on a zero or non-finite descriptor,
    /// a non-finite position or a negative saliency.
    pub fn new(position: Point3<f64>, descriptor: Vec<f64>, saliency: f64) -> Result<Self> {
        if !position.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("keypoint position is not finite"));
        }
        if !(saliency >= 0.0) {
            return Err(Error::invalid(format!("keypoint saliency {saliency} is negative")));
        }
        let norm = descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("keypoint descriptor has zero or non-finite norm"));
        }
        Ok(Self {
            position,
            descriptor: descriptor.into_iter().map(|v| v / norm).collect(),
            saliency,
        })
    }

    pub fn position(&self) -> &Point3<f64> {
        &self.position
    }

    pub fn descriptor(&self) -> &[f64] {
        &self.descriptor
    }

    pub fn saliency(&self) -> f64 {
        self.saliency
    }

    /// Same descriptor at a different position.
    pub fn moved_to(&self, position: Point3<f64>) -> Self {
        Self {
            position,
            ..self.clone()
        }
    }
}

/// Centroids of the `budget` most populated 1 m voxels, most populated first;
/// equal counts are ordered by voxel key.
pub fn detect_keypoints(cloud: &PointCloud, budget: usize) -> Result<Vec<Point3<f64>>> {
    if budget == 0 {
        return Err(Error::invalid("keypoint budget must be at least 1"));
    }
    let mut voxels: BTreeMap<[i64; 3], (usize, nalgebra::Vector3<f64>)> = BTreeMap::new();
    for p in cloud.points() {
        let e = voxels
            .entry(voxel_key(p, KEYPOINT_VOXEL))
            .or_insert((0, nalgebra::Vector3::zeros()));
        e.0 += 1;
        e.1 += p.coords;
    }
    let mut ranked: Vec<([i64; 3], usize, nalgebra::Vector3<f64>)> =
        voxels.into_iter().map(|(k, (n, s))| (k, n, s)).collect();
    // stable sort keeps key order among equal counts
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    Ok(ranked
        .into_iter()
        .take(budget)
        .map(|(_, n, s)| Point3::from(s / n as f64))
        .collect())
}

/// Rotation-invariant histogram descriptor of the points within `radius` of a
/// centre: 64 bins of elevation angle × distance occupancy and 64 bins of
/// relative height. Each half is normalised to norm `1/√2`.
///
/// Returns `None` for an empty neighbourhood.
fn histogram_descriptor<'a>(
    centre: &Point3<f64>,
    radius: f64,
    neighbours: impl Iterator<Item = &'a Point3<f64>>,
) -> Option<Vec<f64>> {
    let mut hist = vec![0.0f64; LOCAL_DIM];
    let mut count = 0usize;
    for p in neighbours {
        let d = p - centre;
        let dist = d.norm();
        if dist > radius {
            continue;
        }
        count += 1;
        let elevation = d.z.atan2(d.x.hypot(d.y)); // [-π/2, π/2]
        let e = (((elevation / std::f64::consts::PI) + 0.5) * ELEVATION_BINS as f64).floor() as usize;
        let r = ((dist / radius) * RADIAL_BINS as f64).floor() as usize;
        hist[e.min(ELEVATION_BINS - 1) * RADIAL_BINS + r.min(RADIAL_BINS - 1)] += 1.0;
        let h = (((d.z / radius) + 1.0) * 0.5 * HEIGHT_BINS as f64).floor() as usize;
        hist[ELEVATION_BINS * RADIAL_BINS + h.min(HEIGHT_BINS - 1)] += 1.0;
    }
    if count == 0 {
        return None;
    }
    let half = ELEVATION_BINS * RADIAL_BINS;
    let (first, second) = hist.split_at_mut(half);
    for part in [first, second] {
        let norm = part.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in part.iter_mut() {
            *v /= norm * std::f64::consts::SQRT_2;
        }
    }
    Some(hist)
}

/// Baseline local descriptor by linear scan over `cloud`. `None` marks an
/// empty neighbourhood, which is excluded from matching.
pub fn baseline_local_descriptor(
    cloud: &PointCloud,
    position: &Point3<f64>,
    radius: f64,
) -> Result<Option<Vec<f64>>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("descriptor radius must be positive"));
    }
    Ok(histogram_descriptor(position, radius, cloud.points().iter()))
}

/// Baseline local descriptors for many positions using a k-d tree.
pub struct LocalDescriptorExtractor<'a> {
    cloud: &'a PointCloud,
    tree: KdTree,
    radius: f64,
}

impl<'a> LocalDescriptorExtractor<'a> {
    pub fn new(cloud: &'a PointCloud, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid("descriptor radius must be positive"));
        }
        Ok(Self {
            cloud,
            tree: KdTree::from_points(cloud.points()),
            radius,
        })
    }

    pub fn describe(&self, position: &Point3<f64>) -> Option<Vec<f64>> {
        let ids = self
            .tree
            .within_radius(&[position.x, position.y, position.z], self.radius);
        histogram_descriptor(position, self.radius, ids.iter().map(|&i| &self.cloud.points()[i]))
    }
}
