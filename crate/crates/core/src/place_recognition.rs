//! Prior-map submap database: top-K retrieval over global descriptors and
//! Recall@K scoring.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use crate::descriptors::{keypoints_from_matrix, keypoints_to_matrix, GlobalDescriptor, LocalKeypoint, GLOBAL_DIM};
use crate::geom::{io, KdTree, RigidTransform};
use crate::hexfloat;
use crate::{Error, Result};

/// Default distance within which a retrieved submap counts as a revisit (meters).
pub const DEFAULT_REVISIT_RADIUS: f64 = 3.0;

/// Databases at least this large answer queries through a k-d tree.
pub const TREE_THRESHOLD: usize = 1000;

pub const INDEX_FILE: &str = "index.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct SubmapRecord {
    pub id: u64,
    pub session: String,
    /// Root node pose in the world frame.
    pub root_pose: RigidTransform,
    pub global: GlobalDescriptor,
    /// Positions in the submap frame.
    pub keypoints: Vec<LocalKeypoint>,
    pub cloud_ref: PathBuf,
}

/// Records kept in ascending id order, so that index order and id order agree
/// and k-d tree ties resolve to the lower id.
#[derive(Debug, Clone, Default)]
pub struct SubmapDatabase {
    records: Vec<SubmapRecord>,
    tree: Option<KdTree>,
}

impl SubmapDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SubmapRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&SubmapRecord> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn insert(&mut self, record: SubmapRecord) -> Result<()> {
        if record.session.is_empty() || record.session.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("session tag `{}` must be a non-empty word", record.session)));
        }
        match self.records.binary_search_by_key(&record.id, |r| r.id) {
            Ok(_) => Err(Error::Conflict(format!("submap {} already in the database", record.id))),
            Err(pos) => {
                self.records.insert(pos, record);
                self.rebuild_index();
                Ok(())
            }
        }
    }

    fn rebuild_index(&mut self) {
        self.tree = (self.records.len() >= TREE_THRESHOLD).then(|| {
            let flat = self.records.iter().flat_map(|r| r.global.as_slice().iter().copied()).collect();
            KdTree::from_flat(GLOBAL_DIM, flat)
        });
    }

    /// The `k` nearest records by descriptor distance, ascending, ties to the
    /// lower id.
    pub fn retrieve_topk(&self, query: &GlobalDescriptor, k: usize) -> Result<Vec<(u64, f64)>> {
        if self.records.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if let Some(tree) = &self.tree {
            return Ok(tree
                .knn(query.as_slice(), k)
                .into_iter()
                .map(|(i, d)| (self.records[i].id, d))
                .collect());
        }
        let mut all: Vec<(u64, f64)> = self.records.iter().map(|r| (r.id, r.global.distance(query))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        Ok(all)
    }

    /// Writes `index.txt` plus one keypoint file per record into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = String::from("reloc-db 1\n");
        for r in &self.records {
            let pose: Vec<String> = r.root_pose.to_array().iter().map(|v| hexfloat::format(*v)).collect();
            writeln!(text, "submap {} {} {} {}", r.id, r.session, pose.join(" "), r.cloud_ref.display()).unwrap();
            let global: Vec<String> = r.global.as_slice().iter().map(|v| hexfloat::format(*v)).collect();
            writeln!(text, "global {}", global.join(" ")).unwrap();
            io::save_features(dir.join(keypoint_file(r.id)), &keypoints_to_matrix(&r.keypoints))?;
        }
        let path = dir.join(INDEX_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "reloc-db 1")) => {}
            _ => return Err(Error::parse(1, "expected `reloc-db 1` header")),
        }
        let mut db = SubmapDatabase::new();
        let mut records = Vec::new();
        while let Some((line, l)) = lines.next() {
            if l.trim().is_empty() {
                continue;
            }
            let mut t = l.splitn(11, ' ');
            if t.next() != Some("submap") {
                return Err(Error::parse(line, "expected a `submap` line"));
            }
            let id: u64 = t
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(line, "bad submap id"))?;
            let session = t.next().ok_or_else(|| Error::parse(line, "missing session"))?.to_string();
            let pose: Option<Vec<f64>> = (0..7).map(|_| t.next().and_then(hexfloat::parse)).collect();
            let root_pose = pose
                .and_then(|p| RigidTransform::from_array(p.try_into().ok()?))
                .ok_or_else(|| Error::parse(line, "bad root pose"))?;
            let cloud_ref = PathBuf::from(t.next().ok_or_else(|| Error::parse(line, "missing cloud path"))?);
            let (gline, g) = lines.next().ok_or_else(|| Error::parse(line + 1, "missing `global` line"))?;
            let values: Option<Vec<f64>> = g
                .strip_prefix("global ")
                .and_then(|rest| rest.split_whitespace().map(hexfloat::parse).collect::<Option<Vec<f64>>>());
            let global = values
                .ok_or_else(|| Error::parse(gline, "bad `global` line"))
                .and_then(|v| GlobalDescriptor::from_unit(v).map_err(|e| Error::parse(gline, e.to_string())))?;
            let keypoints = keypoints_from_matrix(&io::load_features(dir.join(keypoint_file(id)))?)?;
            records.push((
                line,
                SubmapRecord {
                    id,
                    session,
                    root_pose,
                    global,
                    keypoints,
                    cloud_ref,
                },
            ));
        }
        for (line, r) in records {
            db.insert(r).map_err(|e| Error::parse(line, e.to_string()))?;
        }
        Ok(db)
    }
}

fn keypoint_file(id: u64) -> String {
    format!("submap_{id}.keypoints.r3ft")
}

/// Recall@k for `k = 1..=k_max`: the fraction of queries whose top-k list
/// holds a submap within `radius` of the query's true position.
pub fn recall_at_k(
    predictions: &[Vec<u64>],
    query_positions: &[Point3<f64>],
    submap_positions: &std::collections::BTreeMap<u64, Point3<f64>>,
    k_max: usize,
    radius: f64,
) -> Result<Vec<f64>> {
    if predictions.len() != query_positions.len() {
        return Err(Error::invalid("one true position per query is required"));
    }
    if k_max == 0 || !(radius > 0.0) {
        return Err(Error::invalid("k_max must be positive and radius > 0"));
    }
    let mut hits = vec![0usize; k_max];
    for (ranked, q) in predictions.iter().zip(query_positions) {
        let mut first = None;
        for (rank, id) in ranked.iter().enumerate() {
            let p = submap_positions
                .get(id)
                .ok_or_else(|| Error::invalid(format!("prediction names unknown submap {id}")))?;
            if first.is_none() && (p - q).norm() <= radius {
                first = Some(rank);
            }
        }
        if let Some(r) = first.filter(|r| *r < k_max) {
            for h in &mut hits[r..] {
                *h += 1;
            }
        }
    }
    let n = predictions.len().max(1) as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random_global(rng: &mut ChaCha8Rng) -> GlobalDescriptor {
        GlobalDescriptor::new((0..GLOBAL_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn record(id: u64, global: GlobalDescriptor) -> SubmapRecord {
        let kp = LocalKeypoint::new(Point3::new(id as f64, 1.0, 2.0), vec![1.0; 128], 1.0).unwrap();
        SubmapRecord {
            id,
            session: "prior".into(),
            root_pose: RigidTransform::from_yaw(0.1 * id as f64, Vector3::new(id as f64, 0.0, 0.0)),
            global,
            keypoints: vec![kp],
            cloud_ref: PathBuf::from(format!("clouds/submap {id}.r3pc")),
        }
    }

    fn random_db(seed: u64, n: usize) -> SubmapDatabase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut db = SubmapDatabase::new();
        // shuffled ids exercise sorted insertion
        let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        for id in ids {
            db.insert(record(id, random_global(&mut rng))).unwrap();
        }
        db
    }

    fn brute(db: &SubmapDatabase, q: &GlobalDescriptor, k: usize) -> Vec<(u64, f64)> {
        let mut all: Vec<(u64, f64)> = db
            .records()
            .iter()
            .map(|r| {
                let d: f64 = r.global.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
                (r.id, d.sqrt())
            })
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.into_iter().take(k).collect()
    }

    #[test]
    fn insert_and_conflict() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut db = SubmapDatabase::new();
        db.insert(record(7, random_global(&mut rng))).unwrap();
        assert_eq!(db.len(), 1);
        let err = db.insert(record(7, random_global(&mut rng))).unwrap_err();
        assert!(matches!(err, Error::Conflict(_)));
        assert!(matches!(
            SubmapDatabase::new().retrieve_topk(&random_global(&mut rng), 1),
            Err(Error::EmptyDatabase)
        ));
    }

    #[test]
    fn stored_descriptor_is_found_first() {
        let db = random_db(2, 20);
        let target = db.get(13).unwrap().global.clone();
        let res = db.retrieve_topk(&target, 20).unwrap();
        assert_eq!(res.len(), 20);
        assert_eq!(res[0], (13, 0.0));
        assert_eq!(db.retrieve_topk(&target, 50).unwrap().len(), 20);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_global(&mut rng);
        let mut db = SubmapDatabase::new();
        for id in [9, 4, 6] {
            db.insert(record(id, g.clone())).unwrap();
        }
        let ids: Vec<u64> = db.retrieve_topk(&g, 3).unwrap().iter().map(|r| r.0).collect();
        assert_eq!(ids, vec![4, 6, 9]);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..100 {
            let n = rng.random_range(1..40);
            let db = random_db(100 + trial, n);
            let q = random_global(&mut rng);
            let k = rng.random_range(1..10);
            assert_eq!(db.retrieve_topk(&q, k).unwrap(), brute(&db, &q, k));
        }
    }

    #[test]
    fn tree_path_matches_brute_force() {
        let db = random_db(5, TREE_THRESHOLD + 50);
        assert!(db.tree.is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let q = random_global(&mut rng);
            assert_eq!(db.retrieve_topk(&q, 5).unwrap(), brute(&db, &q, 5));
        }
    }

    #[test]
    fn save_load_preserves_retrieval() {
        let db = random_db(7, 20);
        let dir = tempfile::tempdir().unwrap();
        db.save(dir.path()).unwrap();
        let back = SubmapDatabase::load(dir.path()).unwrap();
        assert_eq!(back.len(), 20);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let q = random_global(&mut rng);
            assert_eq!(db.retrieve_topk(&q, 5).unwrap(), back.retrieve_topk(&q, 5).unwrap());
        }
        for (a, b) in db.records().iter().zip(back.records()) {
            assert_eq!(a.global, b.global);
            assert_eq!(a.root_pose, b.root_pose);
            assert_eq!(a.cloud_ref, b.cloud_ref);
            assert_eq!(a.keypoints.len(), b.keypoints.len());
        }
    }

    #[test]
    fn load_reports_bad_lines() {
        let db = random_db(9, 2);
        let dir = tempfile::tempdir().unwrap();
        db.save(dir.path()).unwrap();
        let path = dir.path().join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("global 0x", "global zz", 1)).unwrap();
        assert!(matches!(SubmapDatabase::load(dir.path()), Err(Error::Parse { line: 3, .. })));
    }

    fn line_positions() -> BTreeMap<u64, Point3<f64>> {
        (0..10).map(|i| (i, Point3::new(10.0 * i as f64, 0.0, 0.0))).collect()
    }

    #[test]
    fn perfect_and_hopeless_recall() {
        let pos = line_positions();
        let queries: Vec<Point3<f64>> = (0..10).map(|i| Point3::new(10.0 * i as f64 + 1.0, 0.0, 0.0)).collect();
        let perfect: Vec<Vec<u64>> = (0..10).map(|i| vec![i, (i + 1) % 10]).collect();
        assert_eq!(recall_at_k(&perfect, &queries, &pos, 2, 3.0).unwrap(), vec![1.0, 1.0]);
        let wrong: Vec<Vec<u64>> = (0..10).map(|i| vec![(i + 5) % 10]).collect();
        assert_eq!(recall_at_k(&wrong, &queries, &pos, 3, 3.0).unwrap(), vec![0.0; 3]);
        assert!(recall_at_k(&[vec![99]], &queries[..1], &pos, 1, 3.0).is_err());
    }

    #[test]
    fn hand_computed_curve() {
        // hits at ranks 1,1,2,5,3,1,none,2,4,none (1-based)
        let pos = line_positions();
        let queries: Vec<Point3<f64>> = (0..10).map(|i| Point3::new(10.0 * i as f64, 2.0, 0.0)).collect();
        let ranks = [Some(1), Some(1), Some(2), Some(5), Some(3), Some(1), None, Some(2), Some(4), None];
        let preds: Vec<Vec<u64>> = ranks
            .iter()
            .enumerate()
            .map(|(q, r)| {
                let mut list: Vec<u64> = (0..10).filter(|&i| i != q as u64).take(5).collect();
                if let Some(r) = r {
                    list[r - 1] = q as u64;
                }
                list
            })
            .collect();
        let curve = recall_at_k(&preds, &queries, &pos, 5, 3.0).unwrap();
        assert_eq!(curve, vec![0.3, 0.5, 0.6, 0.7, 0.8]);
    }

    proptest! {
        #[test]
        fn recall_is_monotone(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos = line_positions();
            let n = rng.random_range(1..15);
            let preds: Vec<Vec<u64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(0..10)).collect()).collect();
            let queries: Vec<Point3<f64>> = (0..n).map(|_| Point3::new(rng.random_range(0.0..90.0), 0.0, 0.0)).collect();
            let curve = recall_at_k(&preds, &queries, &pos, 8, 3.0).unwrap();
            prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(curve.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
