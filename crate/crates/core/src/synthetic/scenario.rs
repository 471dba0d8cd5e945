//! Wake-up scenarios: a prior map of root submaps plus labelled queries,
//! written to disk in the layout the pipeline reads.

use std::path::Path;

use image::RgbImage;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{default_camera, mix, random_offset, PointFeatureKind, World};
use crate::descriptors::{
    global_to_matrix, keypoints_to_matrix, BaselineDescriptors, ColourEmbedding, FeatureProvider, LocalKeypoint,
    PixelFeatures, PrecomputedFeatures, SubmapDescriptors,
};
use crate::geom::{io, PointCloud, RigidTransform};
use crate::pipeline::layout::{self, PoseEntry, QueryTruth};
use crate::pipeline::{format_samples, PipelineConfig, ProviderKind};
use crate::pose_graph::{GraphNode, NodeKind, PoseGraph};
use crate::verify::{save_image, verification_features, CameraModel, Sample, Verdict, VerifyParams};
use crate::{Error, Result};

/// Spacing of prior root node ids; children take the ids just above.
pub const ROOT_ID_STRIDE: u64 = 10;
/// Keypoints per simulated submap.
pub const SIMULATED_KEYPOINTS: usize = 128;
const POSITION_MARGIN: f64 = 1.5;
const UNRELATED_SALT: u64 = 0x0a11_e9ed;
const TRAINING_SALT: u64 = 0x7a1_17e5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub roots: usize,
    pub revisits: usize,
    /// Revisits whose query keypoints are displaced so that registration
    /// lands on a wrong pose.
    pub corrupted: usize,
    /// Queries taken from a different world.
    pub unrelated: usize,
    /// Distance between consecutive prior roots (meters).
    pub spacing: f64,
    /// Largest horizontal offset of a revisit from its root (meters).
    pub revisit_offset: f64,
    /// `Planted` pairs with the file provider, `Colour` with the baseline.
    pub point_features: PointFeatureKind,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            roots: 20,
            revisits: 14,
            corrupted: 3,
            unrelated: 3,
            spacing: 50.0,
            revisit_offset: 2.0,
            point_features: PointFeatureKind::Planted,
        }
    }
}

impl ScenarioConfig {
    fn validate(&self) -> Result<()> {
        if self.roots == 0 || self.revisits + self.corrupted > self.roots {
            return Err(Error::invalid("every revisit needs its own prior root"));
        }
        if self.corrupted > 0 && self.point_features != PointFeatureKind::Planted {
            return Err(Error::invalid(
                "corrupted queries live in keypoint files and need planted point features",
            ));
        }
        if !(self.spacing > 0.0) || !(self.revisit_offset >= 0.0) {
            return Err(Error::invalid("spacing must be positive and the revisit offset non-negative"));
        }
        Ok(())
    }

    /// Provider a pipeline must use on this scenario.
    pub fn provider(&self) -> ProviderKind {
        match self.point_features {
            PointFeatureKind::Planted => ProviderKind::File,
            PointFeatureKind::Colour => ProviderKind::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Revisit,
    Corrupted,
    Unrelated,
}

impl QueryKind {
    pub fn expected(self) -> Verdict {
        match self {
            QueryKind::Revisit => Verdict::Matched,
            QueryKind::Corrupted => Verdict::Mismatched,
            QueryKind::Unrelated => Verdict::Unmatched,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubmapSample {
    pub id: u64,
    /// Sensor to world.
    pub pose: RigidTransform,
    pub cloud: PointCloud,
    pub descriptors: SubmapDescriptors,
}

#[derive(Debug, Clone)]
pub struct QueryCase {
    pub name: String,
    pub kind: QueryKind,
    /// Prior root the query revisits.
    pub target: Option<u64>,
    /// Sensor to world, in the query's own world.
    pub pose: RigidTransform,
    pub cloud: PointCloud,
    pub descriptors: SubmapDescriptors,
    pub image: RgbImage,
    pub pixel_features: PixelFeatures,
    /// The query's mapping session; its root node has id 0 at the identity.
    pub session: PoseGraph,
}

/// The keypoint displacement applied to corrupted queries.
pub fn corruption() -> RigidTransform {
    RigidTransform::from_yaw(40f64.to_radians(), Vector3::new(6.0, -4.0, 0.0))
}

/// Descriptors the matching pipeline provider would produce for a sampled
/// cloud: simulated learned keypoints for planted features, the geometric
/// baseline otherwise.
fn describe(
    world: &World,
    pose: &RigidTransform,
    cloud: &PointCloud,
    kind: PointFeatureKind,
    sample_seed: u64,
) -> Result<SubmapDescriptors> {
    let baseline = BaselineDescriptors::default();
    match kind {
        PointFeatureKind::Planted => {
            let keypoints = world.simulated_keypoints(pose, SIMULATED_KEYPOINTS, sample_seed)?;
            let global = baseline.global_for(&keypoints, cloud)?;
            Ok(SubmapDescriptors { global, keypoints })
        }
        PointFeatureKind::Colour => baseline.describe(cloud),
    }
}

fn session_graph(name: &str) -> Result<PoseGraph> {
    let mut g = PoseGraph::new(name)?;
    let root = RigidTransform::identity();
    let c1 = root.compose(&RigidTransform::from_yaw(0.1, Vector3::new(4.0, 0.5, 0.0)));
    let c2 = c1.compose(&RigidTransform::from_yaw(-0.2, Vector3::new(4.0, -0.3, 0.1)));
    g.add_node(GraphNode {
        id: 0,
        kind: NodeKind::Root { submap: 0 },
        pose: root,
    })?;
    for (id, pose) in [(1, c1), (2, c2)] {
        g.add_node(GraphNode {
            id,
            kind: NodeKind::Child { root: 0 },
            pose,
        })?;
    }
    g.connect(0, 1)?;
    g.connect(1, 2)?;
    Ok(g)
}

/// A generated prior map with its queries.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub world: World,
    pub camera: CameraModel,
    pub prior: Vec<SubmapSample>,
    pub prior_graph: PoseGraph,
    pub queries: Vec<QueryCase>,
}

impl Scenario {
    pub fn generate(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let world = World::new(config.seed, mix(config.seed));
        let camera = default_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0x5ce7));
        let kind = config.point_features;

        let mut prior = Vec::new();
        let mut prior_graph = PoseGraph::new("prior")?;
        for i in 0..config.roots {
            let id = i as u64 * ROOT_ID_STRIDE;
            let (x, y) = world.clear_position(i as f64 * config.spacing, 0.0, POSITION_MARGIN);
            let pose = world.sensor_pose(x, y, rng.random_range(-3.0..3.0));
            let sample_seed = mix(config.seed ^ (1000 + id));
            let cloud = world.sample_cloud(&pose, kind, sample_seed)?;
            let descriptors = describe(&world, &pose, &cloud, kind, sample_seed)?;
            prior_graph.add_node(GraphNode {
                id,
                kind: NodeKind::Root { submap: id },
                pose,
            })?;
            let c1 = pose.compose(&RigidTransform::from_yaw(0.05, Vector3::new(5.0, 0.0, 0.0)));
            let c2 = c1.compose(&RigidTransform::from_yaw(-0.05, Vector3::new(5.0, 0.2, 0.0)));
            for (k, p) in [(1, c1), (2, c2)] {
                prior_graph.add_node(GraphNode {
                    id: id + k,
                    kind: NodeKind::Child { root: id },
                    pose: p,
                })?;
            }
            prior_graph.connect(id, id + 1)?;
            prior_graph.connect(id + 1, id + 2)?;
            if i > 0 {
                prior_graph.connect(id - ROOT_ID_STRIDE, id)?;
            }
            prior.push(SubmapSample {
                id,
                pose,
                cloud,
                descriptors,
            });
        }

        let other = World::new(config.seed ^ UNRELATED_SALT, mix(config.seed ^ UNRELATED_SALT));
        let mut queries = Vec::new();
        let total = config.revisits + config.corrupted + config.unrelated;
        for q in 0..total {
            let qkind = if q < config.revisits {
                QueryKind::Revisit
            } else if q < config.revisits + config.corrupted {
                QueryKind::Corrupted
            } else {
                QueryKind::Unrelated
            };
            let name = format!("q{q:02}");
            let sample_seed = mix(config.seed ^ (5000 + q as u64));
            let (dx, dy, yaw) = random_offset(&mut rng, config.revisit_offset);
            let (w, target, pose) = match qkind {
                QueryKind::Unrelated => {
                    let (x, y) = other.clear_position(q as f64 * config.spacing, 500.0, POSITION_MARGIN);
                    (&other, None, other.sensor_pose(x, y, yaw))
                }
                _ => {
                    let root = &prior[q];
                    let r = root.pose.translation();
                    let (x, y) = world.clear_position(r.x + dx, r.y + dy, POSITION_MARGIN);
                    (&world, Some(root.id), world.sensor_pose(x, y, yaw))
                }
            };
            let cloud = w.sample_cloud(&pose, kind, sample_seed)?;
            let mut descriptors = describe(w, &pose, &cloud, kind, sample_seed)?;
            if qkind == QueryKind::Corrupted {
                let shift = corruption();
                descriptors.keypoints = descriptors
                    .keypoints
                    .iter()
                    .map(|k| k.moved_to(shift.apply_point(k.position())))
                    .collect::<Vec<LocalKeypoint>>();
            }
            let (image, pixel_features) = w.render(&camera, &pose)?;
            queries.push(QueryCase {
                session: session_graph(&name)?,
                name,
                kind: qkind,
                target,
                pose,
                cloud,
                descriptors,
                image,
                pixel_features,
            });
        }
        Ok(Self {
            config,
            world,
            camera,
            prior,
            prior_graph,
            queries,
        })
    }

    pub fn root(&self, id: u64) -> Option<&SubmapSample> {
        self.prior.iter().find(|s| s.id == id)
    }

    /// Ground truth for a query.
    pub fn truth(&self, q: &QueryCase) -> QueryTruth {
        QueryTruth {
            expect: q.kind.expected(),
            pose: q.target.map(|_| q.pose),
            target: q.target,
        }
    }

    /// True query → target transform, for queries in the mapped world.
    pub fn relative_truth(&self, q: &QueryCase) -> Option<RigidTransform> {
        let root = self.root(q.target?)?;
        Some(root.pose.inverse().compose(&q.pose))
    }

    /// Writes `calib.txt`, `config.txt`, `prior/` (clouds, sidecars,
    /// `poses.txt`, `graph.txt`) and `queries/<name>/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        self.camera.save(dir.join("calib.txt"))?;
        let config = PipelineConfig {
            provider: self.config.provider(),
            ..PipelineConfig::default()
        };
        let text = format!("features.provider = {}\n", config.provider.name());
        let path = dir.join("config.txt");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        let prior_dir = dir.join("prior");
        mkdir(&prior_dir)?;
        let mut entries = Vec::new();
        for s in &self.prior {
            let cloud = prior_dir.join(format!("submap_{}.r3pc", s.id));
            write_cloud(&cloud, &s.cloud, &s.descriptors)?;
            entries.push(PoseEntry {
                id: s.id,
                session: self.prior_graph.session().to_string(),
                pose: s.pose,
                cloud,
            });
        }
        let path = prior_dir.join(layout::POSES_FILE);
        std::fs::write(&path, layout::format_poses(&entries, &prior_dir)).map_err(|e| Error::io(&path, e))?;
        self.prior_graph.save(prior_dir.join("graph.txt"))?;

        for q in &self.queries {
            let qdir = dir.join("queries").join(&q.name);
            mkdir(&qdir)?;
            write_cloud(&qdir.join(layout::QUERY_CLOUD), &q.cloud, &q.descriptors)?;
            let image = qdir.join(layout::QUERY_IMAGE);
            save_image(&image, &q.image)?;
            io::save_features(layout::pixel_features_sidecar(&image), q.pixel_features.features())?;
            self.truth(q).save(qdir.join(layout::TRUTH_FILE))?;
            q.session.save(qdir.join(layout::SESSION_FILE))?;
        }
        Ok(())
    }
}

fn write_cloud(path: &Path, cloud: &PointCloud, d: &SubmapDescriptors) -> Result<()> {
    io::save_cloud(path, cloud)?;
    io::save_features(layout::keypoints_sidecar(path), &keypoints_to_matrix(&d.keypoints))?;
    io::save_features(layout::global_sidecar(path), &global_to_matrix(&d.global))
}

/// One camera view of a prior submap plus a view of an unrelated world.
#[derive(Debug, Clone)]
pub struct VerificationScene {
    pub cloud: PointCloud,
    pub image: RgbImage,
    pub pixels: PixelFeatures,
    /// True query → candidate transform.
    pub truth: RigidTransform,
    pub foreign_image: RgbImage,
    pub foreign_pixels: PixelFeatures,
}

/// `count` independent scenes; worlds derive from `seed`.
pub fn verification_scenes(
    seed: u64,
    count: usize,
    kind: PointFeatureKind,
    camera: &CameraModel,
) -> Result<Vec<VerificationScene>> {
    let world = World::new(seed ^ TRAINING_SALT, mix(seed ^ TRAINING_SALT));
    let other = World::new(seed ^ UNRELATED_SALT ^ TRAINING_SALT, mix(seed ^ UNRELATED_SALT ^ 1));
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5ce9e));
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let (x, y) = world.clear_position(i as f64 * 45.0, 300.0, POSITION_MARGIN);
        let root = world.sensor_pose(x, y, rng.random_range(-3.0..3.0));
        let (dx, dy, yaw) = random_offset(&mut rng, 2.0);
        let (qx, qy) = world.clear_position(x + dx, y + dy, POSITION_MARGIN);
        let query = world.sensor_pose(qx, qy, yaw);
        let cloud = world.sample_cloud(&root, kind, mix(seed ^ (7000 + i as u64)))?;
        let (image, pixels) = world.render(camera, &query)?;
        let (ox, oy) = other.clear_position(i as f64 * 45.0, -300.0, POSITION_MARGIN);
        let (foreign_image, foreign_pixels) =
            other.render(camera, &other.sensor_pose(ox, oy, rng.random_range(-3.0..3.0)))?;
        scenes.push(VerificationScene {
            cloud,
            image,
            pixels,
            truth: root.inverse().compose(&query),
            foreign_image,
            foreign_pixels,
        });
    }
    Ok(scenes)
}

/// Registration error of an accepted estimate: centimetres and tenths of a degree.
pub fn match_noise(rng: &mut impl Rng) -> RigidTransform {
    let t = Normal::new(0.0, 0.02).expect("finite sigma");
    let r = Normal::new(0.0, 0.2f64.to_radians()).expect("finite sigma");
    RigidTransform::from_yaw(r.sample(rng), Vector3::new(t.sample(rng), t.sample(rng), 0.0))
}

/// A wrong registration: 20–60° of yaw and 3–8 m of horizontal offset.
pub fn mismatch_perturbation(rng: &mut impl Rng) -> RigidTransform {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let yaw = sign * rng.random_range(20f64..60.0).to_radians();
    let dist = rng.random_range(3.0..8.0);
    let dir = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    RigidTransform::from_yaw(yaw, Vector3::new(dist * dir.cos(), dist * dir.sin(), 0.0))
}

/// Matched, mismatched and unmatched samples of one scene; samples with no
/// overlap at all are dropped since the pipeline classifies those by rule.
pub fn scene_samples(
    scene: &VerificationScene,
    kind: PointFeatureKind,
    camera: &CameraModel,
    params: &VerifyParams,
    rng: &mut impl Rng,
) -> Result<Vec<Sample>> {
    let provider = |pixels: &PixelFeatures| -> Box<dyn FeatureProvider> {
        match kind {
            PointFeatureKind::Planted => Box::new(PrecomputedFeatures::new(pixels.clone())),
            PointFeatureKind::Colour => Box::new(ColourEmbedding::default()),
        }
    };
    let own = provider(&scene.pixels);
    let foreign = provider(&scene.foreign_pixels);
    let matched = scene.truth.compose(&match_noise(rng));
    let mismatched = scene.truth.compose(&mismatch_perturbation(rng));
    let cases: [(&RgbImage, &dyn FeatureProvider, RigidTransform, Verdict); 3] = [
        (&scene.image, own.as_ref(), matched, Verdict::Matched),
        (&scene.image, own.as_ref(), mismatched, Verdict::Mismatched),
        (&scene.foreign_image, foreign.as_ref(), scene.truth, Verdict::Unmatched),
    ];
    let mut out = Vec::new();
    for (image, p, estimate, class) in cases {
        let (f, _) = verification_features(image, &scene.cloud, &estimate.inverse(), camera, p, params)?;
        if f.pair_count > 0 {
            out.push(Sample {
                features: f.as_point(),
                class,
            });
        }
    }
    Ok(out)
}

/// Labelled classifier samples from `scenes` fresh verification scenes.
pub fn training_samples(
    seed: u64,
    scenes: usize,
    kind: PointFeatureKind,
    camera: &CameraModel,
    params: &VerifyParams,
) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x7a3));
    let mut out = Vec::new();
    for scene in verification_scenes(seed, scenes, kind, camera)? {
        out.extend(scene_samples(&scene, kind, camera, params, &mut rng)?);
    }
    Ok(out)
}

/// Writes [`training_samples`] as a samples file.
pub fn write_training_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::write(path, format_samples(samples)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            roots: 3,
            revisits: 1,
            corrupted: 1,
            unrelated: 1,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn scenario_is_deterministic_and_consistent() {
        let a = Scenario::generate(small()).unwrap();
        let b = Scenario::generate(small()).unwrap();
        assert_eq!(a.queries[0].cloud, b.queries[0].cloud);
        assert_eq!(a.prior.len(), 3);
        assert_eq!(a.prior_graph.node_count(), 9);
        assert!(a.prior_graph.is_connected());
        let kinds: Vec<QueryKind> = a.queries.iter().map(|q| q.kind).collect();
        assert_eq!(kinds, [QueryKind::Revisit, QueryKind::Corrupted, QueryKind::Unrelated]);
        let rel = a.relative_truth(&a.queries[0]).unwrap();
        assert!(rel.translation().xy().norm() <= 2.0 + POSITION_MARGIN + 1.0);
        assert!(a.relative_truth(&a.queries[2]).is_none());
    }

    #[test]
    fn corrupted_keypoints_are_displaced() {
        let s = Scenario::generate(small()).unwrap();
        let q = &s.queries[1];
        let clean = s.world.simulated_keypoints(&q.pose, SIMULATED_KEYPOINTS, mix(42 ^ 5001)).unwrap();
        let w = corruption();
        assert_eq!(clean.len(), q.descriptors.keypoints.len());
        for (c, k) in clean.iter().zip(&q.descriptors.keypoints) {
            assert!((w.apply_point(c.position()) - k.position()).norm() < 1e-4);
        }
    }

    #[test]
    fn colour_scenarios_reject_corruption() {
        let c = ScenarioConfig {
            point_features: PointFeatureKind::Colour,
            ..small()
        };
        assert!(Scenario::generate(c).is_err());
    }

    #[test]
    fn simulated_keypoints_are_repeatable_across_visits() {
        let w = World::new(9, 9);
        let (x, y) = w.clear_position(0.0, 0.0, 1.5);
        let a = w.simulated_keypoints(&w.sensor_pose(x, y, 0.0), 64, 1).unwrap();
        let b_pose = w.sensor_pose(x, y, 1.0);
        let b = w.simulated_keypoints(&b_pose, 64, 2).unwrap();
        assert!(!a.is_empty() && a.len() <= 64);
        // the same landmark seen twice keeps a near-identical descriptor
        let world_a: Vec<_> = a.iter().map(|k| w.sensor_pose(x, y, 0.0).apply_point(k.position())).collect();
        let mut close = 0;
        for k in &b {
            let p = b_pose.apply_point(k.position());
            if let Some(i) = world_a.iter().position(|q| (q - p).norm() < 0.1) {
                let d: f64 = a[i].descriptor().iter().zip(k.descriptor()).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d.sqrt() < 0.3);
                close += 1;
            }
        }
        assert!(close * 2 > b.len(), "{close} of {}", b.len());
    }
}
