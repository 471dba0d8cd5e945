use std::f64::consts::TAU;

use crate::geom::PointCloud;
use crate::{Error, Result};

pub const DEFAULT_RINGS: usize = 20;
pub const DEFAULT_SECTORS: usize = 60;
pub const DEFAULT_MAX_RADIUS: f64 = 80.0;

/// Polar height image: `rings × sectors` bins holding the maximum point height
/// per bin, 0 for empty bins. Row-major by ring.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanContextDescriptor {
    rings: usize,
    sectors: usize,
    bins: Vec<f64>,
}

impl ScanContextDescriptor {
    pub fn from_bins(rings: usize, sectors: usize, bins: Vec<f64>) -> Result<Self> {
        if rings == 0 || sectors == 0 || bins.len() != rings * sectors {
            return Err(Error::invalid("scan context shape does not match bin count"));
        }
        Ok(Self {
            rings,
            sectors,
            bins,
        })
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    pub fn sectors(&self) -> usize {
        self.sectors
    }

    pub fn get(&self, ring: usize, sector: usize) -> f64 {
        self.bins[ring * self.sectors + sector]
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    /// Column (sector) rotation: output sector `s` takes input sector `s - shift`.
    pub fn column_rotate(&self, shift: usize) -> Self {
        let mut bins = vec![0.0; self.bins.len()];
        for r in 0..self.rings {
            for s in 0..self.sectors {
                bins[r * self.sectors + (s + shift) % self.sectors] = self.get(r, s);
            }
        }
        Self { bins, ..*self }
    }

    fn column(&self, s: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rings).map(move |r| self.get(r, s))
    }
}

/// Ring and sector of a point in the sensor-centred polar grid, if within range.
fn polar_bin(x: f64, y: f64, rings: usize, sectors: usize, max_radius: f64) -> Option<(usize, usize)> {
    let range = x.hypot(y);
    if range >= max_radius {
        return None;
    }
    let ring = (range / (max_radius / rings as f64)).floor() as usize;
    let angle = y.atan2(x).rem_euclid(TAU);
    let sector = (angle / (TAU / sectors as f64)).floor() as usize;
    Some((ring.min(rings - 1), sector % sectors))
}

pub fn extract_scan_context(cloud: &PointCloud, max_radius: f64) -> Result<ScanContextDescriptor> {
    extract_scan_context_with(cloud, DEFAULT_RINGS, DEFAULT_SECTORS, max_radius)
}

pub fn extract_scan_context_with(
    cloud: &PointCloud,
    rings: usize,
    sectors: usize,
    max_radius: f64,
) -> Result<ScanContextDescriptor> {
    if !(max_radius > 0.0) {
        return Err(Error::invalid("scan context radius must be positive"));
    }
    if rings == 0 || sectors == 0 {
        return Err(Error::invalid("scan context needs at least one ring and sector"));
    }
    let mut bins = vec![f64::NEG_INFINITY; rings * sectors];
    for p in cloud.points() {
        if let Some((r, s)) = polar_bin(p.x, p.y, rings, sectors, max_radius) {
            let b = &mut bins[r * sectors + s];
            *b = b.max(p.z);
        }
    }
    for b in &mut bins {
        if *b == f64::NEG_INFINITY {
            *b = 0.0;
        }
    }
    ScanContextDescriptor::from_bins(rings, sectors, bins)
}

/// Cosine distance between two columns; `None` when either column is empty.
fn column_distance(a: &ScanContextDescriptor, sa: usize, b: &ScanContextDescriptor, sb: usize) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.column(sa).zip(b.column(sb)) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

/// Mean column-wise cosine distance with `b` rotated by `shift` sectors;
/// columns empty in either descriptor are skipped. 1 when nothing overlaps.
pub fn shifted_distance(a: &ScanContextDescriptor, b: &ScanContextDescriptor, shift: usize) -> f64 {
    let n = a.sectors;
    let (mut sum, mut count) = (0.0, 0usize);
    for s in 0..n {
        if let Some(d) = column_distance(a, s, b, (s + n - shift % n) % n) {
            sum += d;
            count += 1;
        }
    }
    if count == 0 {
        1.0
    } else {
        (sum / count as f64).max(0.0)
    }
}

/// Yaw-invariant distance: minimum over all sector shifts of the mean
/// column-wise cosine distance.
///
/// Lies in `[0, 1]` for non-negative heights; negative heights can push a
/// column distance up to 2.
pub fn scan_context_distance(a: &ScanContextDescriptor, b: &ScanContextDescriptor) -> Result<f64> {
    if a.rings != b.rings || a.sectors != b.sectors {
        return Err(Error::invalid(format!(
            "scan context shapes differ: {}x{} vs {}x{}",
            a.rings, a.sectors, b.rings, b.sectors
        )));
    }
    Ok((0..a.sectors)
        .map(|shift| shifted_distance(a, b, shift))
        .fold(f64::INFINITY, f64::min))
}
