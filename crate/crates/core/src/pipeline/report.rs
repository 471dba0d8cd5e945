use std::fmt::Write as _;

use crate::geom::RigidTransform;
use crate::pose_graph::{edge_line, GraphEdge};
use crate::registration::RegistrationResult;
use crate::verify::{Verdict, VerificationFeatures};

/// A registration stage's result, or why it produced none.
pub type StageResult = std::result::Result<RegistrationResult, String>;

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    /// Loading and describing the query cloud.
    pub description: f64,
    /// Retrieval, keypoint matching, RANSAC and ICP.
    pub localisation: f64,
    /// Loading and segmenting the image.
    pub superpixel: f64,
    /// Per-pixel and per-point features.
    pub feature_description: f64,
    /// Superpoints, similarity matrix and MCS.
    pub mcs: f64,
    /// Alignment ratio and classification.
    pub verification: f64,
    pub total: f64,
}

impl StageTimings {
    pub const STAGES: [&'static str; 6] = [
        "description",
        "localisation",
        "superpixel",
        "feature_description",
        "mcs",
        "verification",
    ];

    /// Stage durations in [`Self::STAGES`] order.
    pub fn stages(&self) -> [f64; 6] {
        [
            self.description,
            self.localisation,
            self.superpixel,
            self.feature_description,
            self.mcs,
            self.verification,
        ]
    }
}

/// A report value; the CLI renders it as text or JSON.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Text(String),
    Int(u64),
    Float(f64),
    Bool(bool),
}

impl std::fmt::Display for FieldValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldValue::Text(s) => f.write_str(s),
            FieldValue::Int(v) => write!(f, "{v}"),
            FieldValue::Float(v) => write!(f, "{v}"),
            FieldValue::Bool(v) => write!(f, "{v}"),
        }
    }
}

/// Everything one relocalisation request produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RelocalisationReport {
    pub query: String,
    /// Ranked `(submap id, descriptor distance)`; registration uses the first.
    pub candidates: Vec<(u64, f64)>,
    pub correspondences: usize,
    pub ransac: StageResult,
    /// Absent when RANSAC failed.
    pub icp: Option<StageResult>,
    /// Final query → candidate estimate.
    pub transform: Option<RigidTransform>,
    pub features: VerificationFeatures,
    pub verdict: Verdict,
    pub accepted: bool,
    /// Present only when the verdict is `matched`.
    pub edge: Option<GraphEdge>,
    pub timings: StageTimings,
}

fn pose_text(t: &RigidTransform) -> String {
    t.to_array().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn stage_fields(out: &mut Vec<(String, FieldValue)>, name: &str, stage: &StageResult) {
    match stage {
        Ok(r) => {
            out.push((format!("{name}.status"), FieldValue::Text("ok".into())));
            out.push((format!("{name}.inliers"), FieldValue::Int(r.inlier_count as u64)));
            out.push((format!("{name}.inlier_rms"), FieldValue::Float(r.inlier_rms)));
            if name == "icp" {
                out.push((format!("{name}.iterations"), FieldValue::Int(r.icp_iterations as u64)));
                out.push((format!("{name}.converged"), FieldValue::Bool(r.converged)));
            }
            out.push((format!("{name}.transform"), FieldValue::Text(pose_text(&r.transform))));
        }
        Err(why) => out.push((format!("{name}.status"), FieldValue::Text(format!("failed: {why}")))),
    }
}

impl RelocalisationReport {
    pub fn candidate(&self) -> u64 {
        self.candidates[0].0
    }

    /// Ordered `key, value` pairs shared by the text and JSON renderings.
    pub fn fields(&self) -> Vec<(String, FieldValue)> {
        let mut f = Vec::new();
        let mut put = |k: &str, v: FieldValue| f.push((k.to_string(), v));
        put("query", FieldValue::Text(self.query.clone()));
        let ranked: Vec<String> = self.candidates.iter().map(|(id, d)| format!("{id}:{d}")).collect();
        put("candidates", FieldValue::Text(ranked.join(" ")));
        put("candidate", FieldValue::Int(self.candidates[0].0));
        put("candidate_distance", FieldValue::Float(self.candidates[0].1));
        put("correspondences", FieldValue::Int(self.correspondences as u64));
        stage_fields(&mut f, "ransac", &self.ransac);
        if let Some(icp) = &self.icp {
            stage_fields(&mut f, "icp", icp);
        }
        let mut put = |k: &str, v: FieldValue| f.push((k.to_string(), v));
        if let Some(t) = &self.transform {
            put("transform", FieldValue::Text(pose_text(t)));
        }
        put("mcs", FieldValue::Float(self.features.mcs));
        put("alignment_ratio", FieldValue::Float(self.features.alignment_ratio));
        put("pair_count", FieldValue::Int(self.features.pair_count as u64));
        put("mismatch_count", FieldValue::Int(self.features.mismatch_count as u64));
        put("verdict", FieldValue::Text(self.verdict.to_string()));
        put("accepted", FieldValue::Bool(self.accepted));
        if let Some(e) = &self.edge {
            put("edge", FieldValue::Text(edge_line(e)));
        }
        for (name, v) in StageTimings::STAGES.iter().zip(self.timings.stages()) {
            put(&format!("time.{name}"), FieldValue::Float(v));
        }
        put("time.total", FieldValue::Float(self.timings.total));
        f
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            writeln!(s, "{k}: {v}").unwrap();
        }
        s
    }

    /// Per-stage milliseconds as a two-row table.
    pub fn runtime_table(&self) -> String {
        let values: Vec<String> = self
            .timings
            .stages()
            .iter()
            .chain([&self.timings.total])
            .map(|v| format!("{:.1}", v * 1e3))
            .collect();
        runtime_rows(&values)
    }
}

/// Header of stage names plus one row of preformatted cells.
pub(super) fn runtime_rows(values: &[String]) -> String {
    let names: Vec<&str> = StageTimings::STAGES.iter().copied().chain(["total"]).collect();
    let widths: Vec<usize> = names.iter().zip(values).map(|(n, v)| n.len().max(v.len())).collect();
    let row = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    format!(
        "{}\n{}\n",
        row(names.clone()),
        row(values.iter().map(String::as_str).collect())
    )
}
