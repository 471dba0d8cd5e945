use std::collections::VecDeque;

use image::RgbImage;

use crate::colour::{rgb8_to_lab, Lab};
use crate::{Error, Result};

pub const MAX_SUPERPIXELS: usize = 250;
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const SLIC_ITERATIONS: usize = 10;

/// Superpixel label image: labels are `0..count`, row-major, every pixel
/// labelled and every label 4-connected.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: usize,
    centroids: Vec<[f64; 2]>,
}

impl Segmentation {
    /// Builds from a raw label image; labels are compacted to `0..count` in
    /// ascending order of the input values.
    pub fn from_labels(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if width == 0 || height == 0 || raw.len() != width * height {
            return Err(Error::invalid("label image does not match its dimensions"));
        }
        let mut distinct: Vec<u32> = raw.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels: Vec<u32> = raw
            .iter()
            .map(|l| distinct.binary_search(l).unwrap() as u32)
            .collect();
        let count = distinct.len();
        let mut sums = vec![[0.0f64; 3]; count];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s[0] += (i % width) as f64 + 0.5;
            s[1] += (i / width) as f64 + 0.5;
            s[2] += 1.0;
        }
        let centroids = sums.iter().map(|s| [s[0] / s[2], s[1] / s[2]]).collect();
        Ok(Self {
            width,
            height,
            labels,
            count,
            centroids,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// Pixel-centroid `(x, y)` of a label, measured at pixel centres.
    pub fn centroid(&self, label: usize) -> [f64; 2] {
        self.centroids[label]
    }
}

struct Centre {
    lab: Lab,
    x: f64,
    y: f64,
}

/// SLIC superpixels: k-means in (L, a, b, x, y) from a regular grid, with
/// distance `sqrt(d_lab² + (compactness · d_xy / S)²)` where `S` is the grid
/// interval, followed by connectivity enforcement.
///
/// Produces at most `target_count` labels.
pub fn slic_segment(image: &RgbImage, target_count: usize, compactness: f64) -> Result<Segmentation> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot segment an empty image"));
    }
    if !(1..=MAX_SUPERPIXELS).contains(&target_count) {
        return Err(Error::invalid(format!(
            "superpixel target {target_count} outside [1, {MAX_SUPERPIXELS}]"
        )));
    }
    if !(compactness > 0.0) {
        return Err(Error::invalid("SLIC compactness must be positive"));
    }
    let lab: Vec<Lab> = image.pixels().map(|p| rgb8_to_lab(p.0)).collect();
    let k = target_count.min(w * h);
    let s = ((w * h) as f64 / k as f64).sqrt();

    // grid with at most k cells, as square as the image allows
    let mut gx = ((w as f64 / s).round() as usize).clamp(1, w);
    let mut gy = ((h as f64 / s).round() as usize).clamp(1, h);
    while gx * gy > k {
        if gx as f64 / w as f64 >= gy as f64 / h as f64 && gx > 1 {
            gx -= 1;
        } else {
            gy -= 1;
        }
    }
    let (step_x, step_y) = (w as f64 / gx as f64, h as f64 / gy as f64);
    let mut centres: Vec<Centre> = Vec::with_capacity(gx * gy);
    for j in 0..gy {
        for i in 0..gx {
            let x = (i as f64 + 0.5) * step_x;
            let y = (j as f64 + 0.5) * step_y;
            let px = (x as usize).min(w - 1) + (y as usize).min(h - 1) * w;
            centres.push(Centre { lab: lab[px], x, y });
        }
    }

    let spatial = compactness / s;
    let reach = step_x.max(step_y);
    let mut labels = vec![u32::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    for _ in 0..SLIC_ITERATIONS {
        dist.fill(f64::INFINITY);
        for (c_id, c) in centres.iter().enumerate() {
            let x0 = (c.x - reach).floor().max(0.0) as usize;
            let x1 = ((c.x + reach).ceil() as usize).min(w);
            let y0 = (c.y - reach).floor().max(0.0) as usize;
            let y1 = ((c.y + reach).ceil() as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dc = (p[0] - c.lab[0]).powi(2) + (p[1] - c.lab[1]).powi(2) + (p[2] - c.lab[2]).powi(2);
                    let ds = (x as f64 + 0.5 - c.x).powi(2) + (y as f64 + 0.5 - c.y).powi(2);
                    let d = dc + spatial * spatial * ds;
                    // strict comparison: the lower centre index wins ties
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = c_id as u32;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centres.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l == u32::MAX {
                continue;
            }
            let s = &mut sums[l as usize];
            s[0] += lab[i][0];
            s[1] += lab[i][1];
            s[2] += lab[i][2];
            s[3] += (i % w) as f64 + 0.5;
            s[4] += (i / w) as f64 + 0.5;
            s[5] += 1.0;
        }
        for (c, s) in centres.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                c.lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                c.x = s[3] / s[5];
                c.y = s[4] / s[5];
            }
        }
    }
    // pixels no window reached join the nearest centre
    for i in 0..w * h {
        if labels[i] == u32::MAX {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let best = centres
                .iter()
                .enumerate()
                .map(|(id, c)| (id, (x - c.x).powi(2) + (y - c.y).powi(2)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            labels[i] = best.0 as u32;
        }
    }
    enforce_connectivity(w, h, &mut labels, &lab, &centres, spatial);
    Segmentation::from_labels(w, h, &labels)
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn components(w: usize, h: usize, labels: &[u32]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut comp = vec![usize::MAX; w * h];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = members.len();
        let mut list = vec![start];
        comp[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBOURS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if comp[j] == usize::MAX && labels[j] == labels[start] {
                    comp[j] = id;
                    list.push(j);
                    queue.push_back(j);
                }
            }
        }
        members.push(list);
    }
    (comp, members)
}

/// Keeps the largest component of every label; each remaining (orphan)
/// component is merged into the adjacent kept label whose centre is nearest
/// to the orphan's mean in (L, a, b, x, y).
fn enforce_connectivity(w: usize, h: usize, labels: &mut [u32], lab: &[Lab], centres: &[Centre], spatial: f64) {
    let (comp, members) = components(w, h, labels);
    let mut largest: Vec<Option<usize>> = vec![None; centres.len()];
    for (id, m) in members.iter().enumerate() {
        let l = labels[m[0]] as usize;
        // first (scan-order) component wins equal sizes
        if largest[l].is_none_or(|best| m.len() > members[best].len()) {
            largest[l] = Some(id);
        }
    }
    let mut kept: Vec<bool> = (0..members.len())
        .map(|id| largest[labels[members[id][0]] as usize] == Some(id))
        .collect();
    loop {
        let mut changed = false;
        let mut pending = false;
        for id in 0..members.len() {
            if kept[id] {
                continue;
            }
            let m = &members[id];
            let mut adjacent: Vec<u32> = Vec::new();
            for &i in m {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                for (dx, dy) in NEIGHBOURS {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if comp[j] != id && kept[comp[j]] {
                        adjacent.push(labels[j]);
                    }
                }
            }
            if adjacent.is_empty() {
                pending = true;
                continue;
            }
            adjacent.sort_unstable();
            adjacent.dedup();
            let n = m.len() as f64;
            let mut mean = [0.0f64; 5];
            for &i in m {
                mean[0] += lab[i][0] / n;
                mean[1] += lab[i][1] / n;
                mean[2] += lab[i][2] / n;
                mean[3] += ((i % w) as f64 + 0.5) / n;
                mean[4] += ((i / w) as f64 + 0.5) / n;
            }
            let score = |l: u32| {
                let c = &centres[l as usize];
                let dc = (mean[0] - c.lab[0]).powi(2) + (mean[1] - c.lab[1]).powi(2) + (mean[2] - c.lab[2]).powi(2);
                let ds = (mean[3] - c.x).powi(2) + (mean[4] - c.y).powi(2);
                dc + spatial * spatial * ds
            };
            let target = adjacent
                .iter()
                .copied()
                .fold((u32::MAX, f64::INFINITY), |best, l| {
                    let d = score(l);
                    if d < best.1 { (l, d) } else { best }
                })
                .0;
            for &i in m {
                labels[i] = target;
            }
            kept[id] = true;
            changed = true;
        }
        if !pending || !changed {
            break;
        }
    }
}

/// True iff every label of `seg` forms one 4-connected region.
pub fn is_connected(seg: &Segmentation) -> bool {
    let (_, members) = components(seg.width, seg.height, &seg.labels);
    members.len() == seg.count
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_image_splits_into_quadrants() {
        let img = RgbImage::from_pixel(40, 30, image::Rgb([120, 140, 90]));
        let seg = slic_segment(&img, 4, DEFAULT_COMPACTNESS).unwrap();
        assert_eq!(seg.count(), 4);
        for y in 0..30 {
            for x in 0..40 {
                let expect = (x / 20) + 2 * (y / 15);
                assert_eq!(seg.label_at(x, y), expect, "pixel ({x},{y})");
            }
        }
        assert_eq!(seg.centroid(0), [10.0, 7.5]);
    }

    #[test]
    fn two_colour_halves() {
        let img = RgbImage::from_fn(64, 32, |x, _| {
            if x < 32 { image::Rgb([200, 30, 30]) } else { image::Rgb([20, 40, 220]) }
        });
        let seg = slic_segment(&img, 2, DEFAULT_COMPACTNESS).unwrap();
        assert_eq!(seg.count(), 2);
        for y in 0..32 {
            for x in 0..64 {
                assert_eq!(seg.label_at(x, y), usize::from(x >= 32));
            }
        }
    }

    #[test]
    fn random_image_is_covered_connected_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = RgbImage::from_fn(90, 70, |_, _| image::Rgb(rng.random()));
        let a = slic_segment(&img, 100, DEFAULT_COMPACTNESS).unwrap();
        let b = slic_segment(&img, 100, DEFAULT_COMPACTNESS).unwrap();
        assert_eq!(a, b);
        assert!(a.count() <= 100 && a.count() > 10);
        assert!(a.labels().iter().all(|&l| (l as usize) < a.count()));
        assert!(is_connected(&a));
        for l in 0..a.count() {
            let [x, y] = a.centroid(l);
            assert!(x >= 0.0 && y >= 0.0 && x <= 90.0 && y <= 70.0);
        }
    }

    #[test]
    fn textured_image_respects_the_cap() {
        let img = RgbImage::from_fn(160, 120, |x, y| image::Rgb([(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]));
        let seg = slic_segment(&img, MAX_SUPERPIXELS, DEFAULT_COMPACTNESS).unwrap();
        assert!(seg.count() <= MAX_SUPERPIXELS);
        assert!(is_connected(&seg));
    }

    #[test]
    fn arguments_are_checked() {
        let img = RgbImage::new(8, 8);
        assert!(slic_segment(&img, 0, 10.0).is_err());
        assert!(slic_segment(&img, 251, 10.0).is_err());
        assert!(slic_segment(&img, 4, 0.0).is_err());
        assert_eq!(slic_segment(&img, 250, 10.0).unwrap().count(), 64);
    }
}
