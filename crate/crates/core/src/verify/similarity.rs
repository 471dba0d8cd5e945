use nalgebra::Point3;

use super::camera::CameraModel;
use super::superpoints::{SuperpixelSet, SuperpointSet};
use crate::geom::RigidTransform;
use crate::{Error, Result};

/// Number of most similar superpoints tested per superpixel.
pub const DEFAULT_TOP_K: usize = 5;

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Option<f64> {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarities between paired superpixels (rows) and superpoints
/// (columns). Row `i` is the superpixel whose points formed superpoint `i`,
/// so the diagonal holds the corresponding pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    labels: Vec<usize>,
    values: Vec<f64>,
    zero_norm: usize,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Superpixel label of row (and column) `i`.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.labels.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.labels.len();
        &self.values[row * n..(row + 1) * n]
    }

    /// Entries set to 0 because a feature had zero norm.
    pub fn zero_norm_entries(&self) -> usize {
        self.zero_norm
    }
}

pub fn similarity_matrix(superpixels: &SuperpixelSet, superpoints: &SuperpointSet) -> Result<SimilarityMatrix> {
    if superpixels.features().dim() != superpoints.features().dim() {
        return Err(Error::invalid(format!(
            "image features have dimension {} but point features {}",
            superpixels.features().dim(),
            superpoints.features().dim()
        )));
    }
    if superpoints.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let labels = superpoints.labels().to_vec();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * n);
    let mut zero_norm = 0;
    for &label in &labels {
        let f = superpixels.features().row(label);
        for j in 0..n {
            match cosine_similarity(f, superpoints.features().row(j)) {
                Some(c) => values.push(c),
                None => {
                    zero_norm += 1;
                    values.push(0.0);
                }
            }
        }
    }
    Ok(SimilarityMatrix {
        labels,
        values,
        zero_norm,
    })
}

/// Mean of the diagonal.
pub fn mean_cosine_similarity(m: &SimilarityMatrix) -> Result<f64> {
    let n = m.size();
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok((0..n).map(|i| m.get(i, i)).sum::<f64>() / n as f64)
}

/// Inputs of the match/mismatch/unmatched classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationFeatures {
    pub mcs: f64,
    pub alignment_ratio: f64,
    /// Superpixels evaluated (`L`).
    pub pair_count: usize,
    /// Superpixels whose best candidate projected elsewhere (`n`).
    pub mismatch_count: usize,
}

impl VerificationFeatures {
    /// Features recorded when image and cloud do not overlap at all.
    pub fn empty() -> Self {
        Self {
            mcs: 0.0,
            alignment_ratio: 0.0,
            pair_count: 0,
            mismatch_count: 0,
        }
    }

    pub fn as_point(&self) -> [f64; 2] {
        [self.mcs, self.alignment_ratio]
    }
}

/// Indices of the `k` largest entries of `row`, ties to the lower index.
fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `(L − n) / L`. Unlike `1 − n/L` this keeps `ν·L + n == L` exact in
/// floating point for every `L` up to the superpixel cap.
fn kept_fraction(l: usize, n: usize) -> f64 {
    (l - n) as f64 / l as f64
}

/// For each superpixel, projects the centroids of its `top_k` most similar
/// superpoints with `camera.lidar_to_camera ∘ pose`, keeps the one landing
/// nearest the superpixel centroid and counts a mismatch unless it lands
/// inside that superpixel. Superpixels whose candidates all fail to project
/// are mismatches too. The alignment ratio is the kept fraction `(L − n)/L`.
pub fn alignment_ratio(
    superpixels: &SuperpixelSet,
    superpoints: &SuperpointSet,
    sim: &SimilarityMatrix,
    pose: &RigidTransform,
    camera: &CameraModel,
    top: usize,
) -> Result<VerificationFeatures> {
    let l = sim.size();
    if l == 0 {
        return Err(Error::EmptyOverlap);
    }
    if top == 0 {
        return Err(Error::invalid("top-k must be at least 1"));
    }
    let seg = superpixels.segmentation();
    let to_camera = camera.lidar_to_camera.compose(pose);
    let projected: Vec<Option<(f64, f64)>> = (0..superpoints.len())
        .map(|j| {
            let c: &Point3<f64> = superpoints.centroid(j);
            camera.project_camera(&to_camera.apply_point(c)).map(|p| (p.u, p.v))
        })
        .collect();
    let mut mismatches = 0;
    for (row, &label) in sim.labels().iter().enumerate() {
        let [cx, cy] = seg.centroid(label);
        let best = top_k(sim.row(row), top)
            .into_iter()
            .filter_map(|j| projected[j].map(|(u, v)| ((u - cx).powi(2) + (v - cy).powi(2), u, v)))
            // candidates arrive in similarity order, so equal distances keep the more similar one
            .fold(None, |acc: Option<(f64, f64, f64)>, c| match acc {
                Some(a) if a.0 <= c.0 => Some(a),
                _ => Some(c),
            });
        let hit = best.is_some_and(|(_, u, v)| seg.label_at(u as usize, v as usize) == label);
        if !hit {
            mismatches += 1;
        }
    }
    Ok(VerificationFeatures {
        mcs: mean_cosine_similarity(sim)?,
        alignment_ratio: kept_fraction(l, mismatches),
        pair_count: l,
        mismatch_count: mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{FeatureMatrix, PointCloud};
    use crate::verify::camera::forward_looking_mount;
    use crate::verify::slic::{Segmentation, MAX_SUPERPIXELS};
    use crate::verify::superpoints::build_superpoints;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_identity_is_exact() {
        for l in 1..=MAX_SUPERPIXELS {
            for n in 0..=l {
                assert_eq!(kept_fraction(l, n) * l as f64 + n as f64, l as f64, "L={l} n={n}");
            }
        }
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), Some(0.0));
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-2.0, 0.0]), Some(-1.0));
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), None);
        let a = [0.3, -0.7, 0.2];
        let b = [0.9, 0.1, -0.4];
        let c = cosine_similarity(&a, &b).unwrap();
        let scaled = cosine_similarity(&[0.6, -1.4, 0.4], &[9.0, 1.0, -4.0]).unwrap();
        assert!((c - scaled).abs() < 1e-6);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[0.5, 0.9, 0.5, 0.9, 0.1], 3), vec![1, 3, 0]);
        assert_eq!(top_k(&[0.2], 5), vec![0]);
    }

    /// Vertical stripes, one per label, with a point cloud wall whose
    /// features equal the stripe features.
    fn stripes(n: usize) -> (CameraModel, SuperpixelSet, PointCloud, FeatureMatrix) {
        let (w, h) = (20 * n, 20);
        let cam = CameraModel::new(20.0, 20.0, w as f64 / 2.0, 10.0, w, h, forward_looking_mount(Vector3::zeros())).unwrap();
        let raw: Vec<u32> = (0..w * h).map(|i| ((i % w) / 20) as u32).collect();
        let seg = Segmentation::from_labels(w, h, &raw).unwrap();
        let mut feats = FeatureMatrix::zeros(n, n);
        for i in 0..n {
            feats.row_mut(i)[i] = 1.0;
        }
        let sp = SuperpixelSet::new(seg, feats.clone()).unwrap();
        // one point on a wall 5 m ahead at the centre of each stripe
        let mut pts = Vec::new();
        let mut pf = Vec::new();
        for i in 0..n {
            let u = 20.0 * i as f64 + 10.0;
            let y = -(u - w as f64 / 2.0) * 5.0 / 20.0;
            pts.push(nalgebra::Point3::new(5.0, y, 0.0));
            pf.extend_from_slice(feats.row(i));
        }
        let cloud = PointCloud::new(pts).unwrap();
        (cam, sp, cloud, FeatureMatrix::new(n, n, pf).unwrap())
    }

    #[test]
    fn planted_alignment_is_perfect() {
        let (cam, sp, cloud, pf) = stripes(6);
        let pose = RigidTransform::identity();
        let pts = build_superpoints(&cloud, &pf, &pose, &cam, sp.segmentation()).unwrap();
        let sim = similarity_matrix(&sp, &pts).unwrap();
        assert_eq!(sim.size(), 6);
        let f = alignment_ratio(&sp, &pts, &sim, &pose, &cam, DEFAULT_TOP_K).unwrap();
        assert_eq!((f.pair_count, f.mismatch_count, f.alignment_ratio, f.mcs), (6, 0, 1.0, 1.0));
    }

    #[test]
    fn single_superpixel_hit() {
        let (cam, sp, cloud, pf) = stripes(1);
        let pose = RigidTransform::identity();
        let pts = build_superpoints(&cloud, &pf, &pose, &cam, sp.segmentation()).unwrap();
        let sim = similarity_matrix(&sp, &pts).unwrap();
        let f = alignment_ratio(&sp, &pts, &sim, &pose, &cam, DEFAULT_TOP_K).unwrap();
        assert_eq!((f.pair_count, f.mismatch_count, f.alignment_ratio), (1, 0, 1.0));
    }

    #[test]
    fn shifted_features_mismatch() {
        // point features rotated by one stripe: each superpixel's most similar
        // superpoint projects into its neighbour
        let (cam, sp, cloud, pf) = stripes(6);
        let rows: Vec<Vec<f32>> = (0..6).map(|i| pf.row((i + 1) % 6).to_vec()).collect();
        let shifted = FeatureMatrix::from_rows(6, &rows).unwrap();
        let pose = RigidTransform::identity();
        let pts = build_superpoints(&cloud, &shifted, &pose, &cam, sp.segmentation()).unwrap();
        let sim = similarity_matrix(&sp, &pts).unwrap();
        let f = alignment_ratio(&sp, &pts, &sim, &pose, &cam, 1).unwrap();
        assert_eq!((f.mismatch_count, f.alignment_ratio, f.mcs), (6, 0.0, 0.0));
        assert_eq!(f.alignment_ratio * f.pair_count as f64 + f.mismatch_count as f64, f.pair_count as f64);
    }

    #[test]
    fn matrix_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cam, _, _, _) = stripes(5);
        let raw: Vec<u32> = (0..100 * 20).map(|i| ((i % 100) / 20) as u32).collect();
        let seg = Segmentation::from_labels(100, 20, &raw).unwrap();
        let fpx: Vec<f32> = (0..5 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sp = SuperpixelSet::new(seg.clone(), FeatureMatrix::new(5, 7, fpx.clone()).unwrap()).unwrap();
        let (_, _, cloud, _) = stripes(5);
        let fpt: Vec<f32> = (0..5 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = build_superpoints(&cloud, &FeatureMatrix::new(5, 7, fpt).unwrap(), &RigidTransform::identity(), &cam, &seg).unwrap();
        let sim = similarity_matrix(&sp, &pts).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let f = &fpx[i * 7..(i + 1) * 7];
                let g = pts.features().row(j);
                let dot: f64 = f.iter().zip(g).map(|(a, b)| *a as f64 * *b as f64).sum();
                let nf: f64 = f.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let ng: f64 = g.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                assert!((sim.get(i, j) - dot / (nf * ng)).abs() < 1e-12);
            }
        }
        let diag: f64 = (0..5).map(|i| sim.get(i, i)).sum::<f64>() / 5.0;
        assert!((mean_cosine_similarity(&sim).unwrap() - diag).abs() < 1e-15);
    }

    #[test]
    fn zero_features_are_flagged() {
        let (cam, sp, cloud, _) = stripes(3);
        let pts = build_superpoints(&cloud, &FeatureMatrix::zeros(3, 3), &RigidTransform::identity(), &cam, sp.segmentation()).unwrap();
        let sim = similarity_matrix(&sp, &pts).unwrap();
        assert_eq!(sim.zero_norm_entries(), 9);
        assert_eq!(mean_cosine_similarity(&sim).unwrap(), 0.0);
    }

    #[test]
    fn mcs_diagonal_example() {
        let m = SimilarityMatrix {
            labels: vec![0, 1, 2],
            values: vec![1.0, 0.3, 0.2, 0.1, 0.0, 0.5, 0.4, 0.2, -1.0],
            zero_norm: 0,
        };
        assert_eq!(mean_cosine_similarity(&m).unwrap(), 0.0);
    }
}
