//! End-to-end orchestration: database building, relocalisation requests,
//! classifier training and evaluation over a query set.

mod config;
mod evaluate;
pub mod layout;
mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{PipelineConfig, ProviderKind};
pub use evaluate::{evaluate, Evaluation, QueryOutcome, RuntimeStats};
pub use report::{FieldValue, RelocalisationReport, StageResult, StageTimings};

use crate::descriptors::{
    global_from_matrix, keypoints_from_matrix, ColourEmbedding, FeatureProvider, FileFeatures, LocalKeypoint,
    SubmapDescriptors,
};
use crate::geom::{io, PointCloud};
use crate::place_recognition::{SubmapDatabase, SubmapRecord};
use crate::pose_graph::GraphEdge;
use crate::registration::{icp_refine, match_keypoints, ransac_register};
use crate::verify::{load_image, verify, CameraModel, Sample, SvcModel, SvcParams, Verdict, VerificationFeatures, VerifyTimings};
use crate::{hexfloat, Error, Result};

/// Reads a keypoint file, naming it in any error.
pub fn load_keypoints(path: &Path) -> Result<Vec<LocalKeypoint>> {
    io::load_features(path)
        .and_then(|m| keypoints_from_matrix(&m))
        .map_err(|e| e.in_file(path))
}

/// Descriptors of one cloud under the configured provider.
///
/// The baseline computes everything from geometry unless `keypoints` names a
/// keypoint file, in which case only the global descriptor is computed. The
/// file provider reads `keypoints` (default: the cloud's keypoint sidecar) and
/// the global sidecar, falling back to pooling the keypoints when the latter
/// is absent.
pub fn describe_cloud(
    config: &PipelineConfig,
    cloud_path: &Path,
    cloud: &PointCloud,
    keypoints: Option<&Path>,
) -> Result<SubmapDescriptors> {
    let pooled = |keypoints: Vec<LocalKeypoint>| -> Result<SubmapDescriptors> {
        let global = config.descriptors.global_for(&keypoints, cloud)?;
        Ok(SubmapDescriptors { global, keypoints })
    };
    match (config.provider, keypoints) {
        (ProviderKind::Baseline, None) => config.descriptors.describe(cloud),
        (ProviderKind::Baseline, Some(k)) => pooled(load_keypoints(k)?),
        (ProviderKind::File, k) => {
            let kpath = k.map_or_else(|| layout::keypoints_sidecar(cloud_path), Path::to_path_buf);
            let keypoints = load_keypoints(&kpath)?;
            let gpath = layout::global_sidecar(cloud_path);
            if !gpath.exists() {
                return pooled(keypoints);
            }
            let global = io::load_features(&gpath)
                .and_then(|m| global_from_matrix(&m))
                .map_err(|e| e.in_file(&gpath))?;
            Ok(SubmapDescriptors { global, keypoints })
        }
    }
}

/// A database together with non-fatal findings.
#[derive(Debug)]
pub struct BuildOutcome {
    pub database: SubmapDatabase,
    pub warnings: Vec<String>,
}

/// Describes every root submap listed in `<dir>/poses.txt`.
///
/// An empty directory yields an empty database and a warning. Every cloud is
/// attempted; failures are reported together, one per file.
pub fn build_database(dir: &Path, config: &PipelineConfig) -> Result<BuildOutcome> {
    let mut warnings = Vec::new();
    let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let poses = dir.join(layout::POSES_FILE);
    if !poses.exists() {
        if listing.count() == 0 {
            warnings.push(format!("{}: empty directory, the database has no records", dir.display()));
            return Ok(BuildOutcome {
                database: SubmapDatabase::new(),
                warnings,
            });
        }
        return Err(Error::io(
            &poses,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing submap pose list"),
        ));
    }
    let text = std::fs::read_to_string(&poses).map_err(|e| Error::io(&poses, e))?;
    let entries = layout::parse_poses(&text, dir).map_err(|e| e.in_file(&poses))?;
    if entries.is_empty() {
        warnings.push(format!("{}: lists no submaps", poses.display()));
    }
    let mut database = SubmapDatabase::new();
    let mut errors = Vec::new();
    for e in entries {
        let record = io::load_cloud(&e.cloud)
            .and_then(|cloud| describe_cloud(config, &e.cloud, &cloud, None))
            .map(|d| SubmapRecord {
                id: e.id,
                session: e.session.clone(),
                root_pose: e.pose,
                global: d.global,
                keypoints: d.keypoints,
                cloud_ref: std::fs::canonicalize(&e.cloud).unwrap_or(e.cloud.clone()),
            })
            .and_then(|r| database.insert(r));
        if let Err(err) = record {
            errors.push(err.in_file(&e.cloud));
        }
    }
    match errors.len() {
        0 => Ok(BuildOutcome { database, warnings }),
        1 => Err(errors.pop().unwrap()),
        _ => Err(Error::Many(errors)),
    }
}

/// Files making up one relocalisation request.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub name: String,
    pub cloud: PathBuf,
    pub image: PathBuf,
    /// Overrides the keypoint source of the query cloud.
    pub keypoints: Option<PathBuf>,
    /// Overrides the pixel feature sidecar of the image (file provider).
    pub pixel_features: Option<PathBuf>,
    /// Root node of the query session that an accepted edge attaches to.
    pub node: u64,
}

impl QueryInput {
    pub fn new(cloud: impl Into<PathBuf>, image: impl Into<PathBuf>) -> Self {
        let cloud = cloud.into();
        // a query directory's standard cloud is named after the directory
        let named = if cloud.file_name() == Some(layout::QUERY_CLOUD.as_ref()) {
            cloud.parent().and_then(Path::file_name)
        } else {
            cloud.file_stem()
        };
        let name = named.map_or_else(|| "query".into(), |s| s.to_string_lossy().into_owned());
        Self {
            name,
            cloud,
            image: image.into(),
            keypoints: None,
            pixel_features: None,
            node: 0,
        }
    }

    /// The standard files of a query directory.
    pub fn from_dir(dir: &Path) -> Self {
        Self::new(dir.join(layout::QUERY_CLOUD), dir.join(layout::QUERY_IMAGE))
    }
}

/// Database, calibration and classifier ready to serve requests.
#[derive(Debug)]
pub struct Relocaliser {
    config: PipelineConfig,
    database: SubmapDatabase,
    camera: CameraModel,
    model: SvcModel,
}

impl Relocaliser {
    pub fn new(config: PipelineConfig, database: SubmapDatabase, camera: CameraModel, model: SvcModel) -> Result<Self> {
        if database.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        Ok(Self {
            config,
            database,
            camera,
            model,
        })
    }

    pub fn open(config: PipelineConfig, db: &Path, calib: &Path, svc: &Path) -> Result<Self> {
        let database = SubmapDatabase::load(db).map_err(|e| e.in_file(db))?;
        let camera = CameraModel::load(calib).map_err(|e| e.in_file(calib))?;
        let model = SvcModel::load(svc).map_err(|e| e.in_file(svc))?;
        Self::new(config, database, camera, model)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn database(&self) -> &SubmapDatabase {
        &self.database
    }

    fn provider(&self, query: &QueryInput) -> Result<Box<dyn FeatureProvider>> {
        Ok(match self.config.provider {
            ProviderKind::Baseline => Box::new(ColourEmbedding::new(self.config.colour_dim, self.config.colour_bandwidth)?),
            ProviderKind::File => Box::new(FileFeatures::new(
                query
                    .pixel_features
                    .clone()
                    .unwrap_or_else(|| layout::pixel_features_sidecar(&query.image)),
            )),
        })
    }

    /// Retrieval, registration against the top candidate, and verification.
    ///
    /// A RANSAC failure leaves no hypothesis and the verdict is `unmatched`;
    /// an ICP failure falls back to the RANSAC estimate.
    pub fn relocalise(&self, query: &QueryInput, seed: u64) -> Result<RelocalisationReport> {
        let c = &self.config;
        let total = Instant::now();
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let cloud = io::load_cloud(&query.cloud).map_err(|e| e.in_file(&query.cloud))?;
        let descriptors = describe_cloud(c, &query.cloud, &cloud, query.keypoints.as_deref())
            .map_err(|e| e.in_file(&query.cloud))?;
        timings.description = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let candidates = self.database.retrieve_topk(&descriptors.global, c.retrieval_k)?;
        let record = self.database.get(candidates[0].0).expect("retrieved ids exist");
        let candidate_cloud = io::load_cloud(&record.cloud_ref).map_err(|e| e.in_file(&record.cloud_ref))?;
        let corr = match_keypoints(&descriptors.keypoints, &record.keypoints, c.lowe_ratio);
        let qp: Vec<_> = descriptors.keypoints.iter().map(|k| *k.position()).collect();
        let cp: Vec<_> = record.keypoints.iter().map(|k| *k.position()).collect();
        let (ransac, icp, transform) = match ransac_register(&corr, &qp, &cp, &c.ransac, seed) {
            Ok(r) => match icp_refine(&cloud, &candidate_cloud, &r.transform, &c.icp) {
                Ok(i) => {
                    let t = i.transform;
                    (Ok(r), Some(Ok(i)), Some(t))
                }
                Err(e @ Error::NoOverlap(_)) => {
                    let t = r.transform;
                    (Ok(r), Some(Err(e.to_string())), Some(t))
                }
                Err(e) => return Err(e),
            },
            Err(e @ (Error::InsufficientData(_) | Error::NoConsensus(_) | Error::DegenerateConfiguration(_))) => {
                (Err(e.to_string()), None, None)
            }
            Err(e) => return Err(e),
        };
        timings.localisation = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let image = load_image(&query.image)?;
        let provider = self.provider(query)?;
        let load = t.elapsed().as_secs_f64();
        let (features, verdict, vt) = match &transform {
            Some(tf) => {
                let out = verify(
                    &image,
                    &candidate_cloud,
                    &tf.inverse(),
                    &self.camera,
                    provider.as_ref(),
                    &self.model,
                    &c.verify,
                )?;
                (out.features, out.verdict, out.timings)
            }
            None => (VerificationFeatures::empty(), Verdict::Unmatched, VerifyTimings::default()),
        };
        timings.superpixel = load + vt.superpixel.as_secs_f64();
        timings.feature_description = vt.description.as_secs_f64();
        timings.mcs = vt.mcs.as_secs_f64();
        timings.verification = vt.verification.as_secs_f64();

        let accepted = verdict == Verdict::Matched;
        let edge = match transform {
            Some(relative) if accepted => Some(GraphEdge {
                from: record.id,
                to: query.node,
                relative,
            }),
            _ => None,
        };
        timings.total = total.elapsed().as_secs_f64();
        Ok(RelocalisationReport {
            query: query.name.clone(),
            candidates,
            correspondences: corr.len(),
            ransac,
            icp,
            transform,
            features,
            verdict,
            accepted,
            edge,
            timings,
        })
    }
}

/// Labelled classifier inputs, one `<class> <mcs> <alignment ratio>` per line.
pub fn parse_samples(text: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let t: Vec<&str> = body.split_whitespace().collect();
        if t.len() != 3 {
            return Err(Error::parse(line, "expected `<class> <mcs> <alignment ratio>`"));
        }
        let class: Verdict = t[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("unknown class `{}`", t[0])))?;
        let num = |s: &str| {
            hexfloat::parse(s)
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("bad number `{s}`")))
        };
        out.push(Sample {
            features: [num(t[1])?, num(t[2])?],
            class,
        });
    }
    Ok(out)
}

pub fn format_samples(samples: &[Sample]) -> String {
    let mut s = String::new();
    for x in samples {
        let [m, n] = x.features;
        writeln!(s, "{} {} {}", x.class, hexfloat::format(m), hexfloat::format(n)).unwrap();
    }
    s
}

/// Trains on a samples file; returns the model and its training accuracy.
pub fn train_svc(samples: &Path, params: &SvcParams) -> Result<(SvcModel, f64)> {
    let text = std::fs::read_to_string(samples).map_err(|e| Error::io(samples, e))?;
    let samples_v = parse_samples(&text).map_err(|e| e.in_file(samples))?;
    let model = SvcModel::train(&samples_v, params)?;
    let accuracy = model.accuracy(&samples_v);
    Ok((model, accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip() {
        let samples = vec![
            Sample {
                features: [0.7, 0.6],
                class: Verdict::Matched,
            },
            Sample {
                features: [-0.05, 0.1],
                class: Verdict::Unmatched,
            },
        ];
        assert_eq!(parse_samples(&format_samples(&samples)).unwrap(), samples);
        assert_eq!(parse_samples("# c\nmatched 0.5 0.25\n").unwrap()[0].features, [0.5, 0.25]);
        assert!(matches!(parse_samples("matched 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_samples("\nsure 1 2\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_directory_builds_an_empty_database() {
        let dir = tempfile::tempdir().unwrap();
        let out = build_database(dir.path(), &PipelineConfig::default()).unwrap();
        assert!(out.database.is_empty());
        assert_eq!(out.warnings.len(), 1);
        std::fs::write(dir.path().join("stray.txt"), "x").unwrap();
        assert!(build_database(dir.path(), &PipelineConfig::default()).is_err());
    }

    #[test]
    fn every_bad_cloud_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.r3pc"), b"garbage").unwrap();
        let poses = "submap 0 s 1 0 0 0 0 0 0 a.r3pc\nsubmap 10 s 1 0 0 0 0 0 0 missing.r3pc\n";
        std::fs::write(dir.path().join(layout::POSES_FILE), poses).unwrap();
        let err = build_database(dir.path(), &PipelineConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Many(ref v) if v.len() == 2), "{msg}");
        assert!(msg.contains("a.r3pc") && msg.contains("missing.r3pc"), "{msg}");
    }
}
