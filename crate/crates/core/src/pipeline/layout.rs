//! On-disk conventions for pipeline inputs.
//!
//! A map directory holds `poses.txt` with one line per root submap:
//!
//! ```text
//! submap <id> <session> <qw qx qy qz tx ty tz> <cloud file>
//! ```
//!
//! Cloud paths are relative to the directory. A query set directory holds one
//! sub-directory per query with `cloud.r3pc`, `image.ppm` and `truth.txt`.
//! Precomputed embeddings sit next to the file they describe:
//! `<stem>.keypoints.r3ft`, `<stem>.global.r3ft` for clouds and
//! `<stem>.features.r3ft` for images.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::geom::RigidTransform;
use crate::verify::Verdict;
use crate::{hexfloat, kv, Error, Result};

pub const POSES_FILE: &str = "poses.txt";
pub const QUERY_CLOUD: &str = "cloud.r3pc";
pub const QUERY_IMAGE: &str = "image.ppm";
pub const TRUTH_FILE: &str = "truth.txt";
pub const SESSION_FILE: &str = "session.txt";

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.r3ft"))
}

pub fn keypoints_sidecar(cloud: &Path) -> PathBuf {
    sidecar(cloud, "keypoints")
}

pub fn global_sidecar(cloud: &Path) -> PathBuf {
    sidecar(cloud, "global")
}

pub fn pixel_features_sidecar(image: &Path) -> PathBuf {
    sidecar(image, "features")
}

/// One root submap of a map directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub id: u64,
    pub session: String,
    pub pose: RigidTransform,
    pub cloud: PathBuf,
}

/// Parses `poses.txt`; cloud paths are joined onto `base`.
pub fn parse_poses(text: &str, base: &Path) -> Result<Vec<PoseEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let t: Vec<&str> = body.split_whitespace().collect();
        if t.len() != 11 || t[0] != "submap" {
            return Err(Error::parse(line, "expected `submap <id> <session> <7 pose values> <cloud>`"));
        }
        let id = t[1].parse().map_err(|_| Error::parse(line, format!("bad submap id `{}`", t[1])))?;
        let vals: Option<Vec<f64>> = t[3..10]
            .iter()
            .map(|s| hexfloat::parse(s).filter(|v| v.is_finite()))
            .collect();
        let pose = vals
            .and_then(|v| RigidTransform::from_array(v.try_into().ok()?))
            .ok_or_else(|| Error::parse(line, "bad pose"))?;
        out.push(PoseEntry {
            id,
            session: t[2].to_string(),
            pose,
            cloud: base.join(t[10]),
        });
    }
    Ok(out)
}

/// Writes entries with cloud paths relative to `base` where possible.
pub fn format_poses(entries: &[PoseEntry], base: &Path) -> String {
    let mut s = String::new();
    for e in entries {
        let pose: Vec<String> = e.pose.to_array().iter().map(|v| hexfloat::format(*v)).collect();
        let cloud = e.cloud.strip_prefix(base).unwrap_or(&e.cloud);
        writeln!(s, "submap {} {} {} {}", e.id, e.session, pose.join(" "), cloud.display()).unwrap();
    }
    s
}

/// Ground truth of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTruth {
    /// Verdict a correct pipeline reaches.
    pub expect: Verdict,
    /// World pose of the query sensor, when the query lies in the mapped world.
    pub pose: Option<RigidTransform>,
    /// Submap the query revisits, if any.
    pub target: Option<u64>,
}

impl QueryTruth {
    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut expect = None;
        let mut pose = None;
        let mut target = None;
        for e in &entries {
            match e.key.as_str() {
                "expect" => {
                    expect = Some(
                        e.value
                            .parse::<Verdict>()
                            .map_err(|_| Error::parse(e.line, format!("unknown class `{}`", e.value)))?,
                    )
                }
                "pose" => {
                    let v = e.floats(7)?;
                    pose = Some(
                        RigidTransform::from_array(v.try_into().unwrap())
                            .ok_or_else(|| Error::parse(e.line, "pose quaternion has zero norm"))?,
                    );
                }
                "target" => target = Some(e.u64()?),
                k => return Err(Error::parse(e.line, format!("unknown truth key `{k}`"))),
            }
        }
        let expect = expect.ok_or_else(|| Error::parse(entries.last().map_or(1, |e| e.line), "missing `expect`"))?;
        Ok(Self { expect, pose, target })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("expect = {}\n", self.expect);
        if let Some(p) = &self.pose {
            let v: Vec<String> = p.to_array().iter().map(|v| hexfloat::format(*v)).collect();
            writeln!(s, "pose = {}", v.join(" ")).unwrap();
        }
        if let Some(t) = self.target {
            writeln!(s, "target = {t}").unwrap();
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn sidecar_names() {
        let c = Path::new("/m/submap_3.r3pc");
        assert_eq!(keypoints_sidecar(c), Path::new("/m/submap_3.keypoints.r3ft"));
        assert_eq!(global_sidecar(c), Path::new("/m/submap_3.global.r3ft"));
        assert_eq!(pixel_features_sidecar(Path::new("q/image.ppm")), Path::new("q/image.features.r3ft"));
    }

    #[test]
    fn poses_round_trip() {
        let base = Path::new("/map");
        let entries = vec![
            PoseEntry {
                id: 0,
                session: "prior".into(),
                pose: RigidTransform::from_yaw(0.3, Vector3::new(1.0, 2.0, 3.0)),
                cloud: base.join("a.r3pc"),
            },
            PoseEntry {
                id: 10,
                session: "prior".into(),
                pose: RigidTransform::identity(),
                cloud: base.join("b.r3pc"),
            },
        ];
        let text = format_poses(&entries, base);
        assert!(text.contains(" a.r3pc\n"));
        assert_eq!(parse_poses(&text, base).unwrap(), entries);
        assert!(matches!(
            parse_poses("# c\nsubmap 1 s 1 0 0 0 0 0\n", base),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn truth_round_trip() {
        let t = QueryTruth {
            expect: Verdict::Matched,
            pose: Some(RigidTransform::from_yaw(-1.0, Vector3::new(5.0, 0.0, 1.0))),
            target: Some(40),
        };
        assert_eq!(QueryTruth::parse(&t.to_text()).unwrap(), t);
        let u = QueryTruth::parse("expect = unmatched\n").unwrap();
        assert_eq!((u.pose, u.target), (None, None));
        assert!(QueryTruth::parse("pose = 1 0 0 0 0 0 0\n").is_err());
        assert!(QueryTruth::parse("expect = maybe\n").is_err());
    }
}
