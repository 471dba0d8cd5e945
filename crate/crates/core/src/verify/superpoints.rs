use nalgebra::Point3;

use super::camera::CameraModel;
use super::slic::Segmentation;
use crate::descriptors::PixelFeatures;
use crate::geom::{FeatureMatrix, PointCloud, RigidTransform};
use crate::{Error, Result};

/// Superpixels with their pooled (mean) pixel features.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelSet {
    segmentation: Segmentation,
    features: FeatureMatrix,
}

impl SuperpixelSet {
    pub fn new(segmentation: Segmentation, features: FeatureMatrix) -> Result<Self> {
        if features.rows() != segmentation.count() {
            return Err(Error::invalid(format!(
                "{} superpixel features for {} labels",
                features.rows(),
                segmentation.count()
            )));
        }
        Ok(Self {
            segmentation,
            features,
        })
    }

    /// Averages the pixel features falling into each label.
    pub fn pool(segmentation: Segmentation, pixels: &PixelFeatures) -> Result<Self> {
        let (w, h, d) = (segmentation.width(), segmentation.height(), pixels.dim());
        let mut sums = vec![0.0f64; segmentation.count() * d];
        let mut counts = vec![0usize; segmentation.count()];
        for y in 0..h {
            for x in 0..w {
                let l = segmentation.label_at(x, y);
                counts[l] += 1;
                for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(pixels.at_pixel(x, y)) {
                    *s += *v as f64;
                }
            }
        }
        let data = sums
            .chunks(d.max(1))
            .zip(&counts)
            .flat_map(|(row, &n)| row.iter().map(move |s| (s / n.max(1) as f64) as f32))
            .collect();
        let features = FeatureMatrix::new(segmentation.count(), d, data)?;
        Self::new(segmentation, features)
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.segmentation
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.segmentation.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Candidate points grouped by the superpixel they project into, in ascending
/// label order.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointSet {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
    centroids: Vec<Point3<f64>>,
    features: FeatureMatrix,
}

impl SuperpointSet {
    /// Superpixel label of each group.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    /// Mean of the member points, in the candidate frame.
    pub fn centroid(&self, group: usize) -> &Point3<f64> {
        &self.centroids[group]
    }

    /// Unit-norm pooled feature of each group (zero if the mean vanished).
    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Projects the candidate cloud through `camera.lidar_to_camera ∘ pose`
/// (`pose` maps candidate-frame points into the query lidar frame) and groups
/// the points by the superpixel label at their pixel.
pub fn build_superpoints(
    cloud: &PointCloud,
    point_features: &FeatureMatrix,
    pose: &RigidTransform,
    camera: &CameraModel,
    segmentation: &Segmentation,
) -> Result<SuperpointSet> {
    if point_features.rows() != cloud.len() {
        return Err(Error::invalid(format!(
            "{} point features for {} points",
            point_features.rows(),
            cloud.len()
        )));
    }
    if segmentation.width() != camera.width || segmentation.height() != camera.height {
        return Err(Error::invalid("segmentation size differs from the camera model"));
    }
    let to_camera = camera.lidar_to_camera.compose(pose);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); segmentation.count()];
    for (i, p) in cloud.points().iter().enumerate() {
        if let Some(proj) = camera.project_camera(&to_camera.apply_point(p)) {
            let (x, y) = proj.pixel();
            groups[segmentation.label_at(x, y)].push(i);
        }
    }
    let d = point_features.dim();
    let mut set = SuperpointSet {
        labels: Vec::new(),
        members: Vec::new(),
        centroids: Vec::new(),
        features: FeatureMatrix::zeros(0, d),
    };
    let mut data = Vec::new();
    for (label, members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mut c = nalgebra::Vector3::zeros();
        let mut f = vec![0.0f64; d];
        for &i in &members {
            c += cloud.points()[i].coords;
            for (acc, v) in f.iter_mut().zip(point_features.row(i)) {
                *acc += *v as f64;
            }
        }
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        data.extend(f.iter().map(|v| (v * scale) as f32));
        set.labels.push(label);
        set.centroids.push(Point3::from(c / n));
        set.members.push(members);
    }
    if set.labels.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    set.features = FeatureMatrix::new(set.labels.len(), d, data)?;
    Ok(set)
}
