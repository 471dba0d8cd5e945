use std::fmt::Write as _;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use nalgebra::{Point3, Vector3};

use crate::geom::RigidTransform;
use crate::hexfloat;
use crate::{kv, Error, Result};

/// Points closer than this to the image plane are not projected (meters).
pub const MIN_DEPTH: f64 = 0.1;

/// Rectified pinhole camera rigidly attached to the lidar.
///
/// Camera axes: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub lidar_to_camera: RigidTransform,
}

/// Where a point lands on the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

/// Lidar mounting with x forward, y left, z up mapped to camera axes.
pub fn forward_looking_mount(translation: Vector3<f64>) -> RigidTransform {
    // rows (0,-1,0), (0,0,-1), (1,0,0); dyadic components keep it exact
    RigidTransform::from_wxyz([0.5, 0.5, -0.5, 0.5], translation.into()).expect("unit quaternion")
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, lidar_to_camera: RigidTransform) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && fx.is_finite()
            && fy.is_finite()
            && (0.0..width as f64).contains(&cx)
            && (0.0..height as f64).contains(&cy);
        if !ok {
            return Err(Error::invalid(format!(
                "camera intrinsics fx={fx} fy={fy} cx={cx} cy={cy} invalid for {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            lidar_to_camera,
        })
    }

    /// Projects a point given in camera coordinates.
    pub fn project_camera(&self, p: &Point3<f64>) -> Option<Projection> {
        if !(p.z > MIN_DEPTH) {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        let inside = u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64;
        inside.then_some(Projection { u, v, depth: p.z })
    }

    /// Projects a point given in lidar coordinates.
    pub fn project(&self, p: &Point3<f64>) -> Option<Projection> {
        self.project_camera(&self.lidar_to_camera.apply_point(p))
    }

    pub fn check_image(&self, image: &RgbImage) -> Result<()> {
        if image.width() as usize != self.width || image.height() as usize != self.height {
            return Err(Error::invalid(format!(
                "image is {}x{} but the calibration expects {}x{}",
                image.width(),
                image.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut vals: [Option<f64>; 6] = [None; 6];
        let mut mount = None;
        const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];
        for e in &entries {
            if let Some(i) = KEYS.iter().position(|k| *k == e.key) {
                vals[i] = Some(if i >= 4 { e.usize()? as f64 } else { e.f64()? });
            } else if e.key == "lidar_to_camera" {
                let v = e.floats(7)?;
                mount = Some(
                    RigidTransform::from_array(v.try_into().unwrap())
                        .ok_or_else(|| Error::parse(e.line, "lidar_to_camera quaternion has zero norm"))?,
                );
            } else {
                return Err(Error::parse(e.line, format!("unknown calibration key `{}`", e.key)));
            }
        }
        let last = entries.last().map_or(1, |e| e.line);
        let get = |i: usize| vals[i].ok_or_else(|| Error::parse(last, format!("missing calibration key `{}`", KEYS[i])));
        let mount = mount.ok_or_else(|| Error::parse(last, "missing calibration key `lidar_to_camera`"))?;
        Self::new(get(0)?, get(1)?, get(2)?, get(3)?, get(4)? as usize, get(5)? as usize, mount)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [("fx", self.fx), ("fy", self.fy), ("cx", self.cx), ("cy", self.cy)] {
            writeln!(s, "{k} = {}", hexfloat::format(v)).unwrap();
        }
        writeln!(s, "width = {}", self.width).unwrap();
        writeln!(s, "height = {}", self.height).unwrap();
        let m: Vec<String> = self.lidar_to_camera.to_array().iter().map(|v| hexfloat::format(*v)).collect();
        writeln!(s, "lidar_to_camera = {}", m.join(" ")).unwrap();
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads an 8-bit RGB image; binary PPM (P6) and PNG are recognised.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Writes an image; `.ppm` gives binary P6, other extensions pick their
/// container.
pub fn save_image(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let wrap = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary));
        return encoder
            .write_image(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8)
            .map_err(wrap);
    }
    image.save(path).map_err(wrap)
}
