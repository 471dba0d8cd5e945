use std::f64::consts::SQRT_2;

use super::gem::gem_pool;
use super::keypoints::{detect_keypoints, LocalDescriptorExtractor, LocalKeypoint, LOCAL_DIM};
use crate::geom::{voxel_downsample, PointCloud};
use crate::{Error, Result};

/// Length of a global descriptor.
pub const GLOBAL_DIM: usize = 256;

const CONTEXT_RINGS: usize = 16;
const CONTEXT_BANDS: usize = 8;
const CONTEXT_RING_WIDTH: f64 = 2.5;
const CONTEXT_BAND_HEIGHT: f64 = 1.5;
const CONTEXT_MIN_HEIGHT: f64 = -4.0;

/// Unit-norm 256-d submap descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor(Vec<f64>);

impl GlobalDescriptor {
    /// Normalises `values`; rejects wrong length, zero or non-finite vectors.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != GLOBAL_DIM {
            return Err(Error::invalid(format!(
                "global descriptor has {} values, expected {GLOBAL_DIM}",
                values.len()
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("global descriptor has zero or non-finite norm"));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Takes an already normalised vector as is, so stored descriptors
    /// reload bit-exactly.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.len() != GLOBAL_DIM || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("global descriptor must hold 256 finite values"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("global descriptor norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &GlobalDescriptor) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Global and local descriptors of one submap.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmapDescriptors {
    pub global: GlobalDescriptor,
    pub keypoints: Vec<LocalKeypoint>,
}

/// Deterministic hand-crafted stand-in for a learned lidar descriptor network.
///
/// The cloud is first normalised to a fixed voxel density; keypoints come from
/// [`detect_keypoints`], local descriptors from the histogram extractor, and
/// the global descriptor concatenates GeM-pooled local descriptors with a
/// sensor-centred range/height occupancy histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineDescriptors {
    pub keypoint_budget: usize,
    pub local_radius: f64,
    pub gem_p: f64,
    pub density_voxel: f64,
}

impl Default for BaselineDescriptors {
    fn default() -> Self {
        Self {
            keypoint_budget: 128,
            local_radius: 2.0,
            gem_p: super::gem::DEFAULT_GEM_P,
            density_voxel: 0.2,
        }
    }
}

impl BaselineDescriptors {
    pub fn describe(&self, cloud: &PointCloud) -> Result<SubmapDescriptors> {
        if cloud.is_empty() {
            return Err(Error::invalid("cannot describe an empty cloud"));
        }
        let normalised = voxel_downsample(cloud, self.density_voxel)?;
        let positions = detect_keypoints(&normalised, self.keypoint_budget)?;
        let extractor = LocalDescriptorExtractor::new(&normalised, self.local_radius)?;
        let keypoints: Vec<LocalKeypoint> = positions
            .iter()
            .filter_map(|p| extractor.describe(p).map(|d| (p, d)))
            .map(|(p, d)| LocalKeypoint::new(*p, d, 1.0))
            .collect::<Result<_>>()?;
        let global = self.global_from_normalised(&keypoints, &normalised)?;
        Ok(SubmapDescriptors { global, keypoints })
    }

    /// Global descriptor for externally supplied keypoints: GeM-pooled
    /// keypoint descriptors next to the cloud's occupancy context.
    pub fn global_for(&self, keypoints: &[LocalKeypoint], cloud: &PointCloud) -> Result<GlobalDescriptor> {
        if cloud.is_empty() {
            return Err(Error::invalid("cannot describe an empty cloud"));
        }
        let normalised = voxel_downsample(cloud, self.density_voxel)?;
        self.global_from_normalised(keypoints, &normalised)
    }

    fn global_from_normalised(&self, keypoints: &[LocalKeypoint], normalised: &PointCloud) -> Result<GlobalDescriptor> {
        if keypoints.is_empty() {
            return Err(Error::invalid("no valid keypoints"));
        }
        let descs: Vec<&[f64]> = keypoints.iter().map(|k| k.descriptor()).collect();
        let mut pooled = gem_pool(&descs, self.gem_p)?;
        normalise_half(&mut pooled);
        let mut context = occupancy_histogram(normalised);
        normalise_half(&mut context);
        pooled.extend(context);
        debug_assert_eq!(pooled.len(), GLOBAL_DIM);
        GlobalDescriptor::new(pooled)
    }
}

fn normalise_half(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm * SQRT_2;
        }
    }
}

/// Fraction of points per (range ring × height band) around the origin.
fn occupancy_histogram(cloud: &PointCloud) -> Vec<f64> {
    let mut hist = vec![0.0; CONTEXT_RINGS * CONTEXT_BANDS];
    debug_assert_eq!(hist.len() + LOCAL_DIM, GLOBAL_DIM);
    for p in cloud.points() {
        let ring = (p.x.hypot(p.y) / CONTEXT_RING_WIDTH).floor();
        let band = ((p.z - CONTEXT_MIN_HEIGHT) / CONTEXT_BAND_HEIGHT).floor();
        if ring < CONTEXT_RINGS as f64 && band >= 0.0 && band < CONTEXT_BANDS as f64 {
            hist[ring as usize * CONTEXT_BANDS + band as usize] += 1.0;
        }
    }
    let total = cloud.len().max(1) as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn descriptors_are_unit_norm_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = PointCloud::new(
            (0..20_000)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-1.5..3.0),
                    )
                })
                .collect(),
        )
        .unwrap();
        let b = BaselineDescriptors::default();
        let d1 = b.describe(&cloud).unwrap();
        let d2 = b.describe(&cloud).unwrap();
        assert_eq!(d1, d2);
        let n: f64 = d1.global.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert_eq!(d1.keypoints.len(), 128);
        for k in &d1.keypoints {
            let n: f64 = k.descriptor().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(GlobalDescriptor::new(vec![1.0; 10]).is_err());
        assert!(GlobalDescriptor::new(vec![0.0; GLOBAL_DIM]).is_err());
    }
}
