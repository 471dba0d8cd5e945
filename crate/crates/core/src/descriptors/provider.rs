//! Per-point and per-pixel feature extraction for cross-modal verification.

use std::path::PathBuf;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::colour::{rgb8_to_lab, rgb_to_lab, Lab};
use crate::geom::{io, FeatureMatrix, PointCloud};
use crate::{Error, Result};

/// Per-pixel features on a grid that may be coarser than the image: grid cell
/// `(gx, gy)` covers pixels `[gx·stride, (gx+1)·stride) × [gy·stride, (gy+1)·stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatures {
    grid_width: usize,
    grid_height: usize,
    stride: usize,
    features: FeatureMatrix,
}

impl PixelFeatures {
    pub fn new(grid_width: usize, grid_height: usize, stride: usize, features: FeatureMatrix) -> Result<Self> {
        if stride == 0 || features.rows() != grid_width * grid_height {
            return Err(Error::invalid(format!(
                "pixel feature grid {grid_width}x{grid_height} does not match {} rows",
                features.rows()
            )));
        }
        Ok(Self {
            grid_width,
            grid_height,
            stride,
            features,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.grid_width, self.grid_height)
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// Feature vector covering full-resolution pixel `(x, y)`.
    pub fn at_pixel(&self, x: usize, y: usize) -> &[f32] {
        let gx = (x / self.stride).min(self.grid_width - 1);
        let gy = (y / self.stride).min(self.grid_height - 1);
        self.features.row(gy * self.grid_width + gx)
    }
}

/// Source of per-point and per-pixel embeddings sharing one feature space.
///
/// Implementations must be deterministic and safe for concurrent use.
pub trait FeatureProvider: Send + Sync {
    fn point_features(&self, cloud: &PointCloud) -> Result<FeatureMatrix>;
    fn pixel_features(&self, image: &RgbImage) -> Result<PixelFeatures>;
}

/// Baseline provider: embeds colour with random Fourier features so that the
/// cosine similarity of two embeddings approximates a Gaussian kernel on
/// their CIELAB distance.
///
/// Pixels are embedded from the image; points from a 3-column per-point
/// feature block holding sRGB in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ColourEmbedding {
    frequencies: Vec<[f64; 3]>,
    bandwidth: f64,
}

pub const DEFAULT_FEATURE_DIM: usize = 64;
pub const DEFAULT_COLOUR_BANDWIDTH: f64 = 6.0;
const EMBEDDING_SEED: u64 = 0x5eed_c01a;

impl Default for ColourEmbedding {
    fn default() -> Self {
        Self::new(DEFAULT_FEATURE_DIM, DEFAULT_COLOUR_BANDWIDTH).expect("valid defaults")
    }
}

impl ColourEmbedding {
    /// `dim` must be even; `bandwidth` is the kernel width in CIELAB units.
    pub fn new(dim: usize, bandwidth: f64) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("embedding dimension {dim} must be even and >= 2")));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::invalid("embedding bandwidth must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED);
        let normal = Normal::new(0.0, 1.0 / bandwidth).expect("finite sigma");
        let frequencies = (0..dim / 2)
            .map(|_| std::array::from_fn(|_| normal.sample(&mut rng)))
            .collect();
        Ok(Self {
            frequencies,
            bandwidth,
        })
    }

    pub fn dim(&self) -> usize {
        self.frequencies.len() * 2
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Unit-norm embedding of one colour.
    pub fn embed(&self, lab: Lab, out: &mut [f32]) {
        let scale = (1.0 / self.frequencies.len() as f64).sqrt();
        for (k, w) in self.frequencies.iter().enumerate() {
            let phase = w[0] * lab[0] + w[1] * lab[1] + w[2] * lab[2];
            out[2 * k] = (scale * phase.cos()) as f32;
            out[2 * k + 1] = (scale * phase.sin()) as f32;
        }
    }
}

impl FeatureProvider for ColourEmbedding {
    fn point_features(&self, cloud: &PointCloud) -> Result<FeatureMatrix> {
        let colours = cloud
            .features()
            .filter(|f| f.dim() == 3)
            .ok_or_else(|| Error::invalid("colour embedding needs a 3-column RGB point feature block"))?;
        let mut out = FeatureMatrix::zeros(cloud.len(), self.dim());
        for i in 0..cloud.len() {
            let c = colours.row(i);
            let lab = rgb_to_lab([c[0] as f64, c[1] as f64, c[2] as f64]);
            self.embed(lab, out.row_mut(i));
        }
        Ok(out)
    }

    fn pixel_features(&self, image: &RgbImage) -> Result<PixelFeatures> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::invalid("empty image"));
        }
        let mut out = FeatureMatrix::zeros(w * h, self.dim());
        // Images are mostly flat colour; reuse the previous embedding on repeats.
        let mut last: Option<([u8; 3], usize)> = None;
        for (i, px) in image.pixels().enumerate() {
            match last {
                Some((c, j)) if c == px.0 => {
                    let prev = out.row(j).to_vec();
                    out.row_mut(i).copy_from_slice(&prev);
                }
                _ => {
                    self.embed(rgb8_to_lab(px.0), out.row_mut(i));
                    last = Some((px.0, i));
                }
            }
        }
        PixelFeatures::new(w, h, 1, out)
    }
}

/// Precomputed embeddings held in memory: pixel features supplied up front,
/// point features taken from the cloud's own feature block.
#[derive(Debug, Clone)]
pub struct PrecomputedFeatures {
    pixels: PixelFeatures,
}

impl PrecomputedFeatures {
    pub fn new(pixels: PixelFeatures) -> Self {
        Self { pixels }
    }
}

impl FeatureProvider for PrecomputedFeatures {
    fn point_features(&self, cloud: &PointCloud) -> Result<FeatureMatrix> {
        cloud
            .features()
            .cloned()
            .ok_or_else(|| Error::invalid("cloud carries no per-point features"))
    }

    fn pixel_features(&self, image: &RgbImage) -> Result<PixelFeatures> {
        let p = &self.pixels;
        let covers = |n: usize, grid: usize| n.div_ceil(p.stride) == grid;
        if !covers(image.width() as usize, p.grid_width) || !covers(image.height() as usize, p.grid_height) {
            return Err(Error::invalid("precomputed pixel features do not match the image size"));
        }
        Ok(p.clone())
    }
}

/// Precomputed embeddings read from disk: point features are the cloud's own
/// feature block; pixel features come from an `R3FT` file whose rows are the
/// cells of a grid `ceil(W/s) × ceil(H/s)` for the smallest stride `s ≤ 16`
/// that fits.
#[derive(Debug, Clone)]
pub struct FileFeatures {
    pixel_file: PathBuf,
}

impl FileFeatures {
    pub fn new(pixel_file: impl Into<PathBuf>) -> Self {
        Self {
            pixel_file: pixel_file.into(),
        }
    }
}

impl FeatureProvider for FileFeatures {
    fn point_features(&self, cloud: &PointCloud) -> Result<FeatureMatrix> {
        cloud
            .features()
            .cloned()
            .ok_or_else(|| Error::invalid("cloud carries no per-point features"))
    }

    fn pixel_features(&self, image: &RgbImage) -> Result<PixelFeatures> {
        let features = io::load_features(&self.pixel_file)?;
        let (w, h) = (image.width() as usize, image.height() as usize);
        for stride in 1..=16 {
            let (gw, gh) = (w.div_ceil(stride), h.div_ceil(stride));
            if gw * gh == features.rows() {
                return PixelFeatures::new(gw, gh, stride, features);
            }
        }
        Err(Error::invalid(format!(
            "{}: {} rows match no grid for a {w}x{h} image",
            self.pixel_file.display(),
            features.rows()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn embedding_is_unit_norm_and_kernel_like() {
        let e = ColourEmbedding::default();
        let mut a = vec![0.0; 64];
        let mut b = vec![0.0; 64];
        let mut c = vec![0.0; 64];
        e.embed([50.0, 10.0, 10.0], &mut a);
        e.embed([50.0, 11.0, 10.0], &mut b);
        e.embed([80.0, -40.0, 30.0], &mut c);
        let n: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(cos(&a, &b) > 0.9);
        assert!(cos(&a, &c).abs() < 0.5);
    }

    #[test]
    fn pixels_and_points_of_the_same_colour_agree() {
        let e = ColourEmbedding::default();
        let img = RgbImage::from_pixel(2, 2, image::Rgb([200, 30, 90]));
        let px = e.pixel_features(&img).unwrap();
        let rgb = [200.0 / 255.0, 30.0 / 255.0, 90.0 / 255.0];
        let cloud = PointCloud::with_features(
            vec![Point3::origin()],
            FeatureMatrix::new(1, 3, rgb.to_vec()).unwrap(),
        )
        .unwrap();
        let pt = e.point_features(&cloud).unwrap();
        assert!(cos(px.at_pixel(1, 1), pt.row(0)) > 0.999_999);
        assert!(e.point_features(&PointCloud::new(vec![Point3::origin()]).unwrap()).is_err());
    }

    #[test]
    fn file_grid_stride_is_inferred() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.r3ft");
        // 10x7 image at stride 2 → 5x4 grid
        io::save_features(&path, &FeatureMatrix::zeros(20, 8)).unwrap();
        let img = RgbImage::new(10, 7);
        let pf = FileFeatures::new(&path).pixel_features(&img).unwrap();
        assert_eq!(pf.stride(), 2);
        assert_eq!(pf.dim(), 8);
        io::save_features(&path, &FeatureMatrix::zeros(19, 8)).unwrap();
        assert!(FileFeatures::new(&path).pixel_features(&img).is_err());
    }
}
