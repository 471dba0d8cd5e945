use std::collections::BTreeMap;

use nalgebra::Point3;

use super::RigidTransform;
use crate::{Error, Result};

/// Dense row-major `rows × dim` matrix of `f32` values.
///
/// Used for per-point features, per-pixel features and ingested descriptors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::invalid(format!(
                "feature matrix {rows}x{dim} needs {} values, got {}",
                rows.saturating_mul(dim),
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.rows).map(move |i| self.row(i))
    }
}

/// A set of 3-D points (meters) with optional per-point features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    features: Option<FeatureMatrix>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            features: None,
        })
    }

    pub fn with_features(points: Vec<Point3<f64>>, features: FeatureMatrix) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        cloud.set_features(Some(features))?;
        Ok(cloud)
    }

    pub fn set_features(&mut self, features: Option<FeatureMatrix>) -> Result<()> {
        if let Some(f) = &features {
            if f.rows() != self.points.len() {
                return Err(Error::invalid(format!(
                    "feature matrix has {} rows for {} points",
                    f.rows(),
                    self.points.len()
                )));
            }
        }
        self.features = features;
        Ok(())
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn features(&self) -> Option<&FeatureMatrix> {
        self.features.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `t` to every point; features are carried through unchanged.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            features: self.features.clone(),
        }
    }

    /// Keeps the points for which `keep` returns true.
    pub fn filtered(&self, mut keep: impl FnMut(&Point3<f64>) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.points[i])).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> PointCloud {
        let points = idx.iter().map(|&i| self.points[i]).collect();
        let features = self.features.as_ref().map(|f| {
            let mut data = Vec::with_capacity(idx.len() * f.dim());
            for &i in idx {
                data.extend_from_slice(f.row(i));
            }
            FeatureMatrix {
                rows: idx.len(),
                dim: f.dim(),
                data,
            }
        });
        PointCloud { points, features }
    }
}

/// Integer voxel coordinate; boundary points belong to the higher-index voxel.
pub fn voxel_key(p: &Point3<f64>, resolution: f64) -> [i64; 3] {
    [
        (p.x / resolution).floor() as i64,
        (p.y / resolution).floor() as i64,
        (p.z / resolution).floor() as i64,
    ]
}

/// Replaces each occupied voxel by the centroid of its members (features are
/// averaged). Output is ordered by voxel key.
pub fn voxel_downsample(cloud: &PointCloud, resolution: f64) -> Result<PointCloud> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::invalid(format!(
            "voxel resolution must be positive, got {resolution}"
        )));
    }
    let mut voxels: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        voxels.entry(voxel_key(p, resolution)).or_default().push(i);
    }
    let mut points = Vec::with_capacity(voxels.len());
    let dim = cloud.features.as_ref().map(|f| f.dim());
    let mut feat = Vec::new();
    for members in voxels.values() {
        let n = members.len() as f64;
        let sum = members
            .iter()
            .fold(nalgebra::Vector3::zeros(), |acc, &i| acc + cloud.points[i].coords);
        points.push(Point3::from(sum / n));
        if let (Some(f), Some(dim)) = (&cloud.features, dim) {
            let mut acc = vec![0.0f64; dim];
            for &i in members {
                for (a, v) in acc.iter_mut().zip(f.row(i)) {
                    *a += *v as f64;
                }
            }
            feat.extend(acc.into_iter().map(|a| (a / n) as f32));
        }
    }
    let features = dim.map(|dim| FeatureMatrix {
        rows: points.len(),
        dim,
        data: feat,
    });
    Ok(PointCloud { points, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn rejects_non_finite_points_and_bad_feature_rows() {
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
        let pts = vec![Point3::origin(); 3];
        assert!(PointCloud::with_features(pts, FeatureMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn translation_moves_points_and_keeps_features() {
        let cloud =
            PointCloud::with_features(vec![Point3::origin()], FeatureMatrix::zeros(1, 2)).unwrap();
        let out = cloud.transformed(&RigidTransform::from_translation(Vector3::x()));
        assert_eq!(out.points()[0], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(out.features(), cloud.features());
        assert_eq!(cloud.transformed(&RigidTransform::identity()), cloud);
    }

    #[test]
    fn close_points_collapse_to_centroid() {
        let cloud =
            PointCloud::new(vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.11, 0.1, 0.1)]).unwrap();
        let out = voxel_downsample(&cloud, 0.4).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points()[0] - Point3::new(0.105, 0.1, 0.1)).norm() < 1e-12);
    }

    #[test]
    fn grid_points_survive() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                pts.push(Point3::new(x as f64 + 0.5, y as f64 + 0.5, 0.5));
            }
        }
        let out = voxel_downsample(&PointCloud::new(pts).unwrap(), 0.4).unwrap();
        assert_eq!(out.len(), 25);
    }

    #[test]
    fn boundary_goes_to_higher_voxel() {
        assert_eq!(voxel_key(&Point3::new(0.4, -0.4, 0.0), 0.4), [1, -1, 0]);
    }

    #[test]
    fn non_positive_resolution_is_rejected() {
        let cloud = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert!(matches!(voxel_downsample(&cloud, 0.0), Err(Error::InvalidArgument(_))));
        assert!(voxel_downsample(&cloud, -1.0).is_err());
    }

    #[test]
    fn random_cloud_has_unique_voxels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<_> = (0..10_000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let out = voxel_downsample(&cloud, 0.4).unwrap();
        // brute-force recomputation of the occupied key set
        let expected: HashSet<[i64; 3]> = pts
            .iter()
            .map(|p| {
                [
                    (p.x / 0.4).floor() as i64,
                    (p.y / 0.4).floor() as i64,
                    (p.z / 0.4).floor() as i64,
                ]
            })
            .collect();
        let got: Vec<_> = out.points().iter().map(|p| voxel_key(p, 0.4)).collect();
        let unique: HashSet<_> = got.iter().copied().collect();
        assert_eq!(unique.len(), got.len());
        assert_eq!(unique, expected);
        assert!(out.len() <= cloud.len());
    }
}
