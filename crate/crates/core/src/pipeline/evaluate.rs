use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use super::layout::{QueryTruth, QUERY_CLOUD, TRUTH_FILE};
use super::report::runtime_rows;
use super::{QueryInput, RelocalisationReport, Relocaliser, StageTimings};
use crate::place_recognition::recall_at_k;
use crate::registration::{pose_error, registration_success};
use crate::verify::Verdict;
use crate::{Error, Result};

/// One evaluated query.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub truth: QueryTruth,
    pub report: RelocalisationReport,
    /// Rotation (degrees) and translation (meters) error of the final
    /// estimate against the retrieved candidate, when the truth has a pose.
    pub error: Option<(f64, f64)>,
    pub success: Option<bool>,
}

/// Mean and sample standard deviation of one stage, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeStats {
    pub mean: f64,
    pub std: f64,
}

impl RuntimeStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Metrics over a query set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub outcomes: Vec<QueryOutcome>,
    /// Recall@1..=K over queries whose truth has a pose.
    pub recall: Vec<f64>,
    pub successes: usize,
    /// Queries whose truth has a pose.
    pub registrable: usize,
    /// `confusion[truth][predicted]` in [`Verdict::ALL`] order.
    pub confusion: [[usize; 3]; 3],
    /// Per stage in [`StageTimings::STAGES`] order, then the total.
    pub runtime: Vec<RuntimeStats>,
}

fn query_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(QUERY_CLOUD).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Relocalises every query directory under `query_set` and scores the
/// results. Every query needs a `truth.txt`; all are checked before any
/// query runs.
pub fn evaluate(relocaliser: &Relocaliser, query_set: &Path, seed: u64) -> Result<Evaluation> {
    let config = relocaliser.config();
    let dirs = query_dirs(query_set)?;
    if dirs.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no query directories", query_set.display())));
    }
    let truths = dirs
        .iter()
        .map(|d| QueryTruth::load(d.join(TRUTH_FILE)))
        .collect::<Result<Vec<_>>>()?;

    let mut outcomes = Vec::new();
    for (dir, truth) in dirs.iter().zip(truths) {
        let report = relocaliser.relocalise(&QueryInput::from_dir(dir), seed)?;
        let relative = truth.pose.map(|p| {
            let root = relocaliser.database().get(report.candidate()).expect("candidate exists").root_pose;
            root.inverse().compose(&p)
        });
        let (error, success) = match (&relative, &report.transform) {
            (Some(truth_rel), Some(est)) => {
                let (r, t) = pose_error(est, truth_rel);
                let ok = registration_success(est, truth_rel, config.rot_tol_deg, config.trans_tol_m);
                (Some((r.to_degrees(), t)), Some(ok))
            }
            (Some(_), None) => (None, Some(false)),
            (None, _) => (None, None),
        };
        outcomes.push(QueryOutcome {
            truth,
            report,
            error,
            success,
        });
    }

    let posed: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.truth.pose.is_some()).collect();
    let recall = if posed.is_empty() {
        vec![0.0; config.retrieval_k]
    } else {
        let predictions: Vec<Vec<u64>> = posed
            .iter()
            .map(|o| o.report.candidates.iter().map(|c| c.0).collect())
            .collect();
        let positions: Vec<_> = posed.iter().map(|o| Point3::from(*o.truth.pose.unwrap().translation())).collect();
        let map: BTreeMap<u64, _> = relocaliser
            .database()
            .records()
            .iter()
            .map(|r| (r.id, Point3::from(*r.root_pose.translation())))
            .collect();
        recall_at_k(&predictions, &positions, &map, config.retrieval_k, config.revisit_radius)?
    };
    let successes = outcomes.iter().filter(|o| o.success == Some(true)).count();
    let mut confusion = [[0; 3]; 3];
    for o in &outcomes {
        confusion[o.truth.expect.index()][o.report.verdict.index()] += 1;
    }
    let mut runtime = Vec::new();
    for i in 0..StageTimings::STAGES.len() {
        let v: Vec<f64> = outcomes.iter().map(|o| o.report.timings.stages()[i]).collect();
        runtime.push(RuntimeStats::of(&v));
    }
    let totals: Vec<f64> = outcomes.iter().map(|o| o.report.timings.total).collect();
    runtime.push(RuntimeStats::of(&totals));
    Ok(Evaluation {
        recall,
        successes,
        registrable: posed.len(),
        confusion,
        runtime,
        outcomes,
    })
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

impl Evaluation {
    pub fn success_rate(&self) -> Option<f64> {
        ratio(self.successes, self.registrable)
    }

    pub fn precision(&self, class: Verdict) -> Option<f64> {
        let c = class.index();
        ratio(self.confusion[c][c], (0..3).map(|t| self.confusion[t][c]).sum())
    }

    pub fn recall_of(&self, class: Verdict) -> Option<f64> {
        let c = class.index();
        ratio(self.confusion[c][c], self.confusion[c].iter().sum())
    }

    /// `key: value` metrics.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "queries: {}", self.outcomes.len()).unwrap();
        for (k, r) in self.recall.iter().enumerate() {
            writeln!(s, "recall@{}: {r:.6}", k + 1).unwrap();
        }
        writeln!(s, "success_rate: {}", opt(self.success_rate())).unwrap();
        writeln!(s, "successes: {}/{}", self.successes, self.registrable).unwrap();
        for t in Verdict::ALL {
            for p in Verdict::ALL {
                writeln!(s, "confusion.{t}.{p}: {}", self.confusion[t.index()][p.index()]).unwrap();
            }
        }
        for c in Verdict::ALL {
            writeln!(s, "precision.{c}: {}", opt(self.precision(c))).unwrap();
            writeln!(s, "recall.{c}: {}", opt(self.recall_of(c))).unwrap();
        }
        let names = StageTimings::STAGES.iter().copied().chain(["total"]);
        for (name, r) in names.zip(&self.runtime) {
            writeln!(s, "time.{name}.mean: {}", r.mean).unwrap();
            writeln!(s, "time.{name}.std: {}", r.std).unwrap();
        }
        s
    }

    /// Stage runtimes in milliseconds, `mean ± std` per column.
    pub fn runtime_table(&self) -> String {
        let cells: Vec<String> = self
            .runtime
            .iter()
            .map(|r| format!("{:.1} ± {:.1}", r.mean * 1e3, r.std * 1e3))
            .collect();
        runtime_rows(&cells)
    }

    pub fn recall_csv(&self) -> String {
        let mut s = String::from("k,recall\n");
        for (k, r) in self.recall.iter().enumerate() {
            writeln!(s, "{},{r}", k + 1).unwrap();
        }
        s
    }

    /// Verification features per query, for scatter plots.
    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("query,expect,verdict,mcs,alignment_ratio,pair_count,rot_err_deg,trans_err_m\n");
        for o in &self.outcomes {
            let f = &o.report.features;
            let (r, t) = o.error.map_or((String::new(), String::new()), |(r, t)| (r.to_string(), t.to_string()));
            writeln!(
                s,
                "{},{},{},{},{},{},{r},{t}",
                o.report.query, o.truth.expect, o.report.verdict, f.mcs, f.alignment_ratio, f.pair_count
            )
            .unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runtime_stats_use_the_sample_deviation() {
        let r = RuntimeStats::of(&[1.0, 2.0, 3.0]);
        assert_eq!(r.mean, 2.0);
        assert!((r.std - 1.0).abs() < 1e-12);
        assert_eq!(RuntimeStats::of(&[4.0]).std, 0.0);
    }
}
