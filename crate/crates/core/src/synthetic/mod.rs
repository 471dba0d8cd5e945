//! Seeded procedural forest used for tests, demos and the evaluation harness.
//!
//! A world is an undulating ground height field populated with tree trunks
//! (vertical cylinders) and rocks (spheres). Objects are generated lazily per
//! grid cell from a hash of the world seed, so any region can be sampled
//! without materialising the whole world.
//!
//! Every surface point carries a planted embedding: a class component drawn
//! from the world's style seed plus a random-Fourier-feature encoding of its
//! world position. Pixels and points looking at the same surface therefore
//! share features, and worlds with different seeds share nothing.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::descriptors::{LocalKeypoint, PixelFeatures, LOCAL_DIM};
use crate::geom::{FeatureMatrix, PointCloud, RigidTransform};
use crate::verify::{forward_looking_mount, CameraModel};
use crate::Result;

mod scenario;

pub use scenario::*;

/// Length of a planted embedding.
pub const FEATURE_DIM: usize = 32;
/// Height of the lidar above the ground (meters).
pub const SENSOR_HEIGHT: f64 = 1.8;
/// Horizontal radius of a sampled submap (meters).
pub const SUBMAP_RADIUS: f64 = 20.0;
/// Spacing of surface samples (meters).
pub const SAMPLE_SPACING: f64 = 0.3;
/// Standard deviation of range noise (meters).
pub const RANGE_NOISE: f64 = 0.02;
/// Horizontal length scale of the positional embedding (meters).
pub const FEATURE_LENGTHSCALE: f64 = 1.0;

const CELL: f64 = 8.0;
const REGION: f64 = 40.0;
const RENDER_RANGE: f64 = 80.0;
const CLASSES: usize = 4;

/// Surface class of a world point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceClass {
    Ground = 0,
    Trunk = 1,
    Rock = 2,
    Sky = 3,
}

/// Which per-point feature block a sampled cloud carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFeatureKind {
    /// Planted embeddings of [`FEATURE_DIM`] columns.
    Planted,
    /// Shaded surface colour as sRGB in `[0, 1]`.
    Colour,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amplitude: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

#[derive(Debug, Clone, Copy)]
enum Object {
    Trunk {
        id: u64,
        x: f64,
        y: f64,
        radius: f64,
        base: f64,
        top: f64,
        tint: f64,
    },
    Rock {
        id: u64,
        centre: Point3<f64>,
        radius: f64,
        tint: f64,
    },
}

struct Hit {
    t: f64,
    point: Point3<f64>,
    normal: Vector3<f64>,
    class: SurfaceClass,
    tint: f64,
}

/// A procedural forest.
#[derive(Debug, Clone)]
pub struct World {
    seed: u64,
    waves: Vec<Wave>,
    slope_bound: f64,
    height_bound: f64,
    class_embedding: [[f64; FEATURE_DIM]; CLASSES],
    frequencies: Vec<[f64; 3]>,
    phases: Vec<f64>,
    palette: [[f64; 3]; CLASSES],
    sun: Vector3<f64>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_vector<const N: usize>(rng: &mut ChaCha8Rng) -> [f64; N] {
    let normal = Normal::new(0.0, 1.0).expect("unit sigma");
    let mut v: [f64; N] = std::array::from_fn(|_| normal.sample(rng));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

impl World {
    /// `seed` fixes geometry and positional features; `style` fixes class
    /// embeddings and colours.
    pub fn new(seed: u64, style: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed));
        let waves: Vec<Wave> = (0..4)
            .map(|i| {
                let wavelength = rng.random_range(12.0..40.0);
                let dir = rng.random_range(0.0..2.0 * PI);
                let k = 2.0 * PI / wavelength;
                Wave {
                    amplitude: 0.25 / (1.0 + i as f64 * 0.5),
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        let slope_bound = waves.iter().map(|w| w.amplitude * w.kx.hypot(w.ky)).sum();
        let height_bound = waves.iter().map(|w| w.amplitude).sum();
        let normal = Normal::new(0.0, 1.0 / FEATURE_LENGTHSCALE).expect("finite sigma");
        let frequencies: Vec<[f64; 3]> = (0..FEATURE_DIM / 2)
            .map(|_| std::array::from_fn(|_| normal.sample(&mut rng)))
            .collect();
        let phases = (0..FEATURE_DIM / 2).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

        let mut srng = ChaCha8Rng::seed_from_u64(mix(style ^ 0x5151_5151));
        let class_embedding = std::array::from_fn(|_| unit_vector::<FEATURE_DIM>(&mut srng));
        let mut jitter = |base: [f64; 3]| base.map(|c: f64| (c + srng.random_range(-0.08..0.08)).clamp(0.0, 1.0));
        let palette = [
            jitter([0.30, 0.42, 0.18]),
            jitter([0.36, 0.24, 0.14]),
            jitter([0.52, 0.52, 0.50]),
            jitter([0.62, 0.76, 0.92]),
        ];
        let az = srng.random_range(0.0..2.0 * PI);
        let sun = Vector3::new(az.cos() * 0.6, az.sin() * 0.6, 0.8).normalize();
        Self {
            seed,
            waves,
            slope_bound,
            height_bound,
            class_embedding,
            frequencies,
            phases,
            palette,
            sun,
        }
    }

    pub fn ground_height(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).sin())
            .sum()
    }

    fn ground_normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let (mut dx, mut dy) = (0.0, 0.0);
        for w in &self.waves {
            let c = w.amplitude * (w.kx * x + w.ky * y + w.phase).cos();
            dx += c * w.kx;
            dy += c * w.ky;
        }
        Vector3::new(-dx, -dy, 1.0).normalize()
    }

    /// Sensor pose in world coordinates at `(x, y)` facing `yaw`.
    pub fn sensor_pose(&self, x: f64, y: f64, yaw: f64) -> RigidTransform {
        let z = self.ground_height(x, y) + SENSOR_HEIGHT;
        RigidTransform::from_yaw(yaw, Vector3::new(x, y, z))
    }

    /// Smooth value noise in `[0, 1]` on a lattice of spacing `REGION`.
    fn value_noise(&self, x: f64, y: f64, channel: u64) -> f64 {
        let (gx, gy) = (x / REGION, y / REGION);
        let (ix, iy) = (gx.floor(), gy.floor());
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (smooth(gx - ix), smooth(gy - iy));
        let lattice = |dx: i64, dy: i64| {
            let h = mix(self.seed ^ mix(channel ^ mix((ix as i64 + dx) as u64 ^ mix((iy as i64 + dy) as u64))));
            (h >> 11) as f64 / (1u64 << 53) as f64
        };
        let top = lattice(0, 0) * (1.0 - fx) + lattice(1, 0) * fx;
        let bottom = lattice(0, 1) * (1.0 - fx) + lattice(1, 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn cell_objects(&self, cx: i64, cy: i64) -> Vec<Object> {
        let key = mix(self.seed ^ mix(cx as u64 ^ mix(cy as u64)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        // stand parameters vary slowly so that places differ
        let (mx, my) = ((cx as f64 + 0.5) * CELL, (cy as f64 + 0.5) * CELL);
        let density = self.value_noise(mx, my, 1);
        let girth = 0.6 + 0.9 * self.value_noise(mx, my, 2);
        let height = 0.5 + 1.0 * self.value_noise(mx, my, 3);
        let rockiness = self.value_noise(mx, my, 4);
        let trunks = (1.0 + density * 5.0 + rng.random_range(0.0..1.0)).floor() as usize;
        let mut out = Vec::new();
        for k in 0..trunks {
            let x = mx + rng.random_range(-0.5..0.5) * CELL;
            let y = my + rng.random_range(-0.5..0.5) * CELL;
            let base = self.ground_height(x, y) - 0.3;
            out.push(Object::Trunk {
                id: mix(key ^ k as u64),
                x,
                y,
                radius: rng.random_range(0.12..0.35) * girth,
                base,
                top: base + rng.random_range(3.0..10.0) * height,
                tint: rng.random_range(0.75..1.15),
            });
        }
        let rocks = (rockiness * 2.5 + rng.random_range(0.0..1.0)).floor() as usize;
        for k in 0..rocks {
            let x = mx + rng.random_range(-0.5..0.5) * CELL;
            let y = my + rng.random_range(-0.5..0.5) * CELL;
            let radius = rng.random_range(0.3..1.3);
            let z = self.ground_height(x, y) + radius * rng.random_range(-0.5..0.2);
            out.push(Object::Rock {
                id: mix(key ^ (1000 + k as u64)),
                centre: Point3::new(x, y, z),
                radius,
                tint: rng.random_range(0.8..1.2),
            });
        }
        out
    }

    fn objects_within(&self, x: f64, y: f64, radius: f64) -> Vec<Object> {
        let lo_x = ((x - radius - CELL) / CELL).floor() as i64;
        let hi_x = ((x + radius + CELL) / CELL).floor() as i64;
        let lo_y = ((y - radius - CELL) / CELL).floor() as i64;
        let hi_y = ((y + radius + CELL) / CELL).floor() as i64;
        let mut out = Vec::new();
        for cx in lo_x..=hi_x {
            for cy in lo_y..=hi_y {
                out.extend(self.cell_objects(cx, cy).into_iter().filter(|o| {
                    let (ox, oy, r) = match *o {
                        Object::Trunk { x, y, radius, .. } => (x, y, radius),
                        Object::Rock { centre, radius, .. } => (centre.x, centre.y, radius),
                    };
                    (ox - x).hypot(oy - y) <= radius + r
                }));
            }
        }
        out
    }

    /// True when no object stands within `margin` of `(x, y)`.
    pub fn is_clear(&self, x: f64, y: f64, margin: f64) -> bool {
        self.objects_within(x, y, margin).is_empty()
    }

    /// Nearest clear sensor position to `(x, y)` on an outward spiral.
    pub fn clear_position(&self, x: f64, y: f64, margin: f64) -> (f64, f64) {
        for step in 0..400 {
            let r = 0.25 * step as f64;
            let a = step as f64 * 2.399;
            let (px, py) = (x + r * a.cos(), y + r * a.sin());
            if self.is_clear(px, py, margin) {
                return (px, py);
            }
        }
        (x, y)
    }

    /// Planted embedding of a surface point.
    pub fn planted_feature(&self, p: &Point3<f64>, class: SurfaceClass) -> [f32; FEATURE_DIM] {
        let c = &self.class_embedding[class as usize];
        let mut out = [0.0f32; FEATURE_DIM];
        if class == SurfaceClass::Sky {
            for (o, v) in out.iter_mut().zip(c) {
                *o = *v as f32;
            }
            return out;
        }
        let scale = (1.0 / self.frequencies.len() as f64).sqrt();
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for (k, (w, ph)) in self.frequencies.iter().zip(&self.phases).enumerate() {
            let arg = w[0] * p.x + w[1] * p.y + w[2] * p.z + ph;
            out[2 * k] = (half * (c[2 * k] + scale * arg.cos())) as f32;
            out[2 * k + 1] = (half * (c[2 * k + 1] + scale * arg.sin())) as f32;
        }
        out
    }

    fn texture(&self, p: &Point3<f64>) -> f64 {
        let s = (p.x * 0.9 + 0.3 * p.y).sin() * (p.y * 0.7 - 0.2 * p.x).cos() + 0.5 * (p.x * 0.23 + p.y * 0.31).sin();
        0.85 + 0.1 * s
    }

    /// Lambertian factor under the world's sun with some ambient light.
    fn shade(&self, normal: &Vector3<f64>) -> f64 {
        0.45 + 0.55 * normal.dot(&self.sun).max(0.0)
    }

    /// Surface colour as sRGB in `[0, 1]`, before shading.
    fn albedo(&self, p: &Point3<f64>, class: SurfaceClass, tint: f64) -> [f64; 3] {
        let base = self.palette[class as usize];
        let f = match class {
            SurfaceClass::Ground => self.texture(p),
            SurfaceClass::Trunk | SurfaceClass::Rock => tint,
            SurfaceClass::Sky => 1.0,
        };
        base.map(|c| (c * f).clamp(0.0, 1.0))
    }

    /// Samples a lidar submap around the sensor at `pose` (sensor to world).
    ///
    /// Points are returned in sensor coordinates; `sample_seed` controls the
    /// sampling pattern and noise so that revisits give distinct clouds of the
    /// same surfaces.
    pub fn sample_cloud(&self, pose: &RigidTransform, kind: PointFeatureKind, sample_seed: u64) -> Result<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(sample_seed ^ 0xc10d));
        let noise = Normal::new(0.0, RANGE_NOISE).expect("finite sigma");
        let centre = pose.translation();
        let (ox, oy) = (centre.x, centre.y);
        let objects = self.objects_within(ox, oy, SUBMAP_RADIUS);
        let mut surface: Vec<(Point3<f64>, Vector3<f64>, SurfaceClass, f64)> = Vec::new();
        let inside = |p: &Point3<f64>| (p.x - ox).hypot(p.y - oy) <= SUBMAP_RADIUS;
        let occluded = |p: &Point3<f64>| {
            objects.iter().any(|o| match *o {
                Object::Trunk { x, y, radius, .. } => (p.x - x).hypot(p.y - y) < radius,
                Object::Rock { centre, radius, .. } => (p - centre).norm() < radius,
            })
        };

        let s = SAMPLE_SPACING;
        let n = (SUBMAP_RADIUS / s).ceil() as i64;
        for i in -n..=n {
            for j in -n..=n {
                let x = ox + (i as f64 + rng.random_range(-0.5..0.5)) * s;
                let y = oy + (j as f64 + rng.random_range(-0.5..0.5)) * s;
                let p = Point3::new(x, y, self.ground_height(x, y));
                if inside(&p) && !occluded(&p) {
                    surface.push((p, self.ground_normal(x, y), SurfaceClass::Ground, 1.0));
                }
            }
        }
        for o in &objects {
            match *o {
                Object::Trunk {
                    x,
                    y,
                    radius,
                    base,
                    top,
                    tint,
                    ..
                } => {
                    let count = (2.0 * PI * radius * (top - base) / (s * s)).round() as usize;
                    for _ in 0..count {
                        let a = rng.random_range(0.0..2.0 * PI);
                        let z = rng.random_range(base..top);
                        let p = Point3::new(x + radius * a.cos(), y + radius * a.sin(), z);
                        if inside(&p) && z >= self.ground_height(p.x, p.y) {
                            surface.push((p, Vector3::new(a.cos(), a.sin(), 0.0), SurfaceClass::Trunk, tint));
                        }
                    }
                }
                Object::Rock { centre, radius, tint, .. } => {
                    let count = (4.0 * PI * radius * radius / (s * s)).round() as usize;
                    for _ in 0..count {
                        let d: [f64; 3] = UnitSphere.sample(&mut rng);
                        let p = centre + Vector3::from(d) * radius;
                        if inside(&p) && p.z >= self.ground_height(p.x, p.y) {
                            surface.push((p, Vector3::from(d), SurfaceClass::Rock, tint));
                        }
                    }
                }
            }
        }

        let to_sensor = pose.inverse();
        let dim = match kind {
            PointFeatureKind::Planted => FEATURE_DIM,
            PointFeatureKind::Colour => 3,
        };
        let mut points = Vec::with_capacity(surface.len());
        let mut features = FeatureMatrix::zeros(surface.len(), dim);
        for (i, (p, normal, class, tint)) in surface.iter().enumerate() {
            let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            points.push(to_sensor.apply_point(&(p + jitter)));
            let row = features.row_mut(i);
            match kind {
                PointFeatureKind::Planted => row.copy_from_slice(&self.planted_feature(p, *class)),
                PointFeatureKind::Colour => {
                    let shade = self.shade(normal);
                    let c = self.albedo(p, *class, *tint).map(|v| (v * shade) as f32);
                    row.copy_from_slice(&c);
                }
            }
        }
        PointCloud::with_features(points, features)
    }

    /// Repeatable keypoints with object-specific descriptors, standing in for
    /// a learned detector and descriptor: trunk axis points at fixed heights
    /// above the ground and rock tops, nearest first, at most `budget`.
    /// Positions carry range noise and descriptors a few percent of
    /// per-sample perturbation.
    pub fn simulated_keypoints(&self, pose: &RigidTransform, budget: usize, sample_seed: u64) -> Result<Vec<LocalKeypoint>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(sample_seed ^ 0x6b70));
        let noise = Normal::new(0.0, RANGE_NOISE).expect("finite sigma");
        let wobble = Normal::<f64>::new(0.0, 0.05).expect("finite sigma");
        let centre = pose.translation();
        let mut anchors: Vec<(f64, u64, Point3<f64>)> = Vec::new();
        for o in self.objects_within(centre.x, centre.y, SUBMAP_RADIUS) {
            match o {
                Object::Trunk { id, x, y, top, .. } => {
                    let ground = self.ground_height(x, y);
                    for level in 0..4u64 {
                        let z = ground + 0.5 + level as f64;
                        if z < top {
                            anchors.push((0.0, mix(id ^ level), Point3::new(x, y, z)));
                        }
                    }
                }
                Object::Rock { id, centre, radius, .. } => {
                    anchors.push((0.0, id, centre + Vector3::z() * radius));
                }
            }
        }
        anchors.retain(|a| (a.2.x - centre.x).hypot(a.2.y - centre.y) <= SUBMAP_RADIUS - 0.5);
        for a in anchors.iter_mut() {
            a.0 = (a.2.x - centre.x).hypot(a.2.y - centre.y);
        }
        anchors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        anchors.truncate(budget);
        let to_sensor = pose.inverse();
        anchors
            .iter()
            .map(|(_, id, p)| {
                let mut drng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ id));
                let unit = Normal::<f64>::new(0.0, 1.0).expect("unit sigma");
                let descriptor = (0..LOCAL_DIM)
                    .map(|_| unit.sample(&mut drng).abs() * (1.0 + wobble.sample(&mut rng)).max(0.0))
                    .collect();
                let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                LocalKeypoint::new(to_sensor.apply_point(&(p + jitter)), descriptor, 1.0)
            })
            .collect()
    }

    fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, objects: &[Object]) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        fn consider(best: &mut Option<Hit>, h: Hit) {
            if best.as_ref().is_none_or(|b| h.t < b.t) {
                *best = Some(h);
            }
        }
        for o in objects {
            match *o {
                Object::Trunk {
                    x,
                    y,
                    radius,
                    base,
                    top,
                    tint,
                    ..
                } => {
                    let (ex, ey) = (origin.x - x, origin.y - y);
                    let a = dir.x * dir.x + dir.y * dir.y;
                    if a < 1e-12 {
                        continue;
                    }
                    let b = ex * dir.x + ey * dir.y;
                    let c = ex * ex + ey * ey - radius * radius;
                    let disc = b * b - a * c;
                    if disc < 0.0 {
                        continue;
                    }
                    let t = (-b - disc.sqrt()) / a;
                    if t <= 0.0 {
                        continue;
                    }
                    let p = origin + dir * t;
                    if p.z >= base && p.z <= top {
                        let normal = Vector3::new(p.x - x, p.y - y, 0.0) / radius;
                        consider(&mut best, Hit {
                            t,
                            point: p,
                            normal,
                            class: SurfaceClass::Trunk,
                            tint,
                        });
                    }
                }
                Object::Rock { centre, radius, tint, .. } => {
                    let e = origin - centre;
                    let b = e.dot(dir);
                    let c = e.norm_squared() - radius * radius;
                    let disc = b * b - c;
                    if disc < 0.0 {
                        continue;
                    }
                    let t = -b - disc.sqrt();
                    if t <= 0.0 {
                        continue;
                    }
                    let p = origin + dir * t;
                    consider(&mut best, Hit {
                        t,
                        point: p,
                        normal: (p - centre) / radius,
                        class: SurfaceClass::Rock,
                        tint,
                    });
                }
            }
        }
        let limit = best.as_ref().map_or(RENDER_RANGE, |b| b.t);
        if let Some(t) = self.march_ground(origin, dir, limit) {
            let p = origin + dir * t;
            consider(&mut best, Hit {
                t,
                point: p,
                normal: self.ground_normal(p.x, p.y),
                class: SurfaceClass::Ground,
                tint: 1.0,
            });
        }
        best
    }

    /// First crossing of the ground along a unit ray, with steps bounded by
    /// the height field's Lipschitz constant.
    fn march_ground(&self, origin: &Point3<f64>, dir: &Vector3<f64>, limit: f64) -> Option<f64> {
        let gap = |t: f64| {
            let p = origin + dir * t;
            p.z - self.ground_height(p.x, p.y)
        };
        let rate = dir.z.abs() + self.slope_bound * dir.x.hypot(dir.y);
        let mut t = 0.0;
        let mut g = gap(t);
        if g <= 0.0 {
            return Some(0.0);
        }
        while t < limit {
            if dir.z >= 0.0 && origin.z + dir.z * t > self.height_bound {
                return None;
            }
            let step = (g / rate.max(1e-9)).max(0.01);
            let next = (t + step).min(limit);
            let gn = gap(next);
            if gn <= 0.0 {
                let (mut lo, mut hi) = (t, next);
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    if gap(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(hi);
            }
            if next >= limit {
                break;
            }
            t = next;
            g = gn;
        }
        None
    }

    /// Renders the camera view from a sensor at `pose` (sensor to world),
    /// returning the image and per-pixel planted features.
    pub fn render(&self, camera: &CameraModel, pose: &RigidTransform) -> Result<(RgbImage, PixelFeatures)> {
        let cam_to_world = pose.compose(&camera.lidar_to_camera.inverse());
        let origin = Point3::from(*cam_to_world.translation());
        let objects = self.objects_within(origin.x, origin.y, RENDER_RANGE);
        let (w, h) = (camera.width, camera.height);
        let mut image = RgbImage::new(w as u32, h as u32);
        let mut features = FeatureMatrix::zeros(w * h, FEATURE_DIM);
        for v in 0..h {
            for u in 0..w {
                let ray = Vector3::new(
                    (u as f64 + 0.5 - camera.cx) / camera.fx,
                    (v as f64 + 0.5 - camera.cy) / camera.fy,
                    1.0,
                );
                let dir = cam_to_world.apply_vector(&ray).normalize();
                let (rgb, feat) = match self.cast(&origin, &dir, &objects) {
                    Some(hit) => {
                        let albedo = self.albedo(&hit.point, hit.class, hit.tint);
                        let shade = self.shade(&hit.normal);
                        (albedo.map(|c| c * shade), self.planted_feature(&hit.point, hit.class))
                    }
                    None => {
                        let sky = self.palette[SurfaceClass::Sky as usize];
                        let lift = 0.1 * (1.0 - v as f64 / h as f64);
                        let p = origin + dir;
                        (sky.map(|c| c + lift), self.planted_feature(&p, SurfaceClass::Sky))
                    }
                };
                image.put_pixel(u as u32, v as u32, Rgb(rgb.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)));
                features.row_mut(v * w + u).copy_from_slice(&feat);
            }
        }
        Ok((image, PixelFeatures::new(w, h, 1, features)?))
    }
}

/// Forward-looking 160×120 camera slightly pitched towards the ground.
pub fn default_camera() -> CameraModel {
    let pitch = RigidTransform::from_axis_angle(Vector3::x(), -8f64.to_radians(), Vector3::zeros());
    let mount = pitch.compose(&forward_looking_mount(Vector3::new(0.0, -0.1, -0.05)));
    CameraModel::new(100.0, 100.0, 80.0, 60.0, 160, 120, mount).expect("valid intrinsics")
}

/// Uniform random yaw in `(-π, π]` and offset within `radius` of the origin.
pub fn random_offset(rng: &mut impl Rng, radius: f64) -> (f64, f64, f64) {
    let r = radius * rng.random_range(0.0f64..1.0).sqrt();
    let a = rng.random_range(-PI..PI);
    (r * a.cos(), r * a.sin(), rng.random_range(-PI..PI))
}
