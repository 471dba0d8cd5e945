//! Binary point-cloud (`R3PC`) and feature-matrix (`R3FT`) files.
//!
//! All integers and floats are little-endian. A cloud file is
//! `"R3PC" u32:N N×(f32 x, f32 y, f32 z)`, optionally followed by a feature
//! block `"R3FT" u32:rows u32:dim rows×dim f32`. A standalone feature file is a
//! bare feature block.

use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::{FeatureMatrix, PointCloud};
use crate::{Error, Result};

pub const CLOUD_MAGIC: &[u8; 4] = b"R3PC";
pub const FEATURE_MAGIC: &[u8; 4] = b"R3FT";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != expected {
            self.pos = start;
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let start = self.pos;
        let b = self.take(4, what)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            self.pos = start;
            return Err(self.err(format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn payload_len(&self, count: u64, width: u64, what: &str) -> Result<usize> {
        let need = count
            .checked_mul(width)
            .filter(|&n| n <= (self.buf.len() - self.pos) as u64)
            .ok_or_else(|| self.err(format!("truncated {what}")))?;
        Ok(need as usize)
    }
}

fn read_feature_block(r: &mut Reader<'_>) -> Result<FeatureMatrix> {
    r.magic(FEATURE_MAGIC)?;
    let rows = r.u32("feature row count")? as usize;
    let dim = r.u32("feature dimension")? as usize;
    r.payload_len(rows as u64 * dim as u64, 4, "feature payload")?;
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows * dim {
        data.push(r.f32("feature value")?);
    }
    FeatureMatrix::new(rows, dim, data)
}

fn write_feature_block(out: &mut Vec<u8>, features: &FeatureMatrix) {
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.dim() as u32).to_le_bytes());
    for v in features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let m = read_feature_block(&mut r)?;
    if !r.at_end() {
        return Err(r.err("trailing bytes after feature block"));
    }
    Ok(m)
}

pub fn encode_features(features: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + features.as_slice().len() * 4);
    write_feature_block(&mut out, features);
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(CLOUD_MAGIC)?;
    let n = r.u32("point count")? as usize;
    r.payload_len(n as u64, 12, "point payload")?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let x = r.f32("coordinate")? as f64;
        let y = r.f32("coordinate")? as f64;
        let z = r.f32("coordinate")? as f64;
        points.push(Point3::new(x, y, z));
    }
    let features = if r.at_end() {
        None
    } else {
        let block_start = r.pos;
        let f = read_feature_block(&mut r)?;
        if f.rows() != n {
            r.pos = block_start;
            return Err(r.err(format!("feature block has {} rows for {n} points", f.rows())));
        }
        if !r.at_end() {
            return Err(r.err("trailing bytes after feature block"));
        }
        Some(f)
    };
    let mut cloud = PointCloud::new(points)?;
    cloud.set_features(features)?;
    Ok(cloud)
}

/// Encodes a cloud; coordinates are narrowed to `f32`.
pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 12);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(f) = cloud.features() {
        write_feature_block(&mut out, f);
    }
    out
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes)
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        FeatureMatrix::new(rows, dim, data).unwrap()
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.r3ft");
        let m = random_matrix(10, 64, 1);
        save_features(&path, &m).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back.rows(), 10);
        assert_eq!(back.dim(), 64);
        let bits = |m: &FeatureMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn truncated_feature_file_is_a_format_error() {
        let bytes = encode_features(&random_matrix(4, 3, 2));
        let err = decode_features(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 12, .. }), "{err}");
    }

    #[test]
    fn bad_magic_and_nan_are_rejected() {
        let mut bytes = encode_features(&random_matrix(2, 2, 3));
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = encode_features(&random_matrix(2, 2, 3));
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn zero_rows_is_an_empty_matrix() {
        let m = decode_features(&encode_features(&FeatureMatrix::zeros(0, 8))).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.dim(), 8);
    }

    #[test]
    fn cloud_feature_rows_must_match() {
        let cloud = PointCloud::new(vec![Point3::origin(); 3]).unwrap();
        let mut bytes = encode_cloud(&cloud);
        bytes.extend(encode_features(&FeatureMatrix::zeros(2, 1)));
        assert!(matches!(decode_cloud(&bytes), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn cloud_round_trip(
            pts in prop::collection::vec(prop::array::uniform3(-1e4f32..1e4), 0..50),
            with_features in any::<bool>(),
        ) {
            let points: Vec<_> = pts.iter().map(|p| Point3::new(p[0] as f64, p[1] as f64, p[2] as f64)).collect();
            let mut cloud = PointCloud::new(points).unwrap();
            if with_features {
                cloud.set_features(Some(random_matrix(pts.len(), 3, 9))).unwrap();
            }
            let back = decode_cloud(&encode_cloud(&cloud)).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
