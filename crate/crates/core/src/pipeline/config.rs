use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::descriptors::{BaselineDescriptors, DEFAULT_COLOUR_BANDWIDTH, DEFAULT_FEATURE_DIM};
use crate::place_recognition::DEFAULT_REVISIT_RADIUS;
use crate::registration::{IcpParams, RansacParams, DEFAULT_LOWE_RATIO, DEFAULT_ROT_TOL_DEG, DEFAULT_TRANS_TOL_M};
use crate::verify::{SvcParams, VerifyParams, MAX_SUPERPIXELS};
use crate::{hexfloat, kv, Error, Result};

/// Where descriptors and cross-modal features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    /// Hand-crafted geometry descriptors and colour embeddings.
    Baseline,
    /// Precomputed embeddings read from sidecar files.
    File,
}

impl ProviderKind {
    pub fn name(self) -> &'static str {
        match self {
            ProviderKind::Baseline => "baseline",
            ProviderKind::File => "file",
        }
    }
}

/// Every tunable of the pipeline.
///
/// Parsed from `section.key = value` lines; unknown keys and out-of-range
/// values are rejected with the offending line number. Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub provider: ProviderKind,
    pub colour_dim: usize,
    pub colour_bandwidth: f64,
    pub descriptors: BaselineDescriptors,
    /// Length of the ranked candidate list; registration uses the first and
    /// evaluation reports Recall@1..=K over it.
    pub retrieval_k: usize,
    pub revisit_radius: f64,
    pub lowe_ratio: f64,
    pub ransac: RansacParams,
    pub icp: IcpParams,
    pub rot_tol_deg: f64,
    pub trans_tol_m: f64,
    pub verify: VerifyParams,
    pub svc: SvcParams,
    pub db: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub svc_model: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Baseline,
            colour_dim: DEFAULT_FEATURE_DIM,
            colour_bandwidth: DEFAULT_COLOUR_BANDWIDTH,
            descriptors: BaselineDescriptors::default(),
            retrieval_k: 5,
            revisit_radius: DEFAULT_REVISIT_RADIUS,
            lowe_ratio: DEFAULT_LOWE_RATIO,
            ransac: RansacParams::default(),
            icp: IcpParams::default(),
            rot_tol_deg: DEFAULT_ROT_TOL_DEG,
            trans_tol_m: DEFAULT_TRANS_TOL_M,
            verify: VerifyParams::default(),
            svc: SvcParams::default(),
            db: None,
            calib: None,
            svc_model: None,
        }
    }
}

fn positive(e: &kv::Entry) -> Result<f64> {
    let v = e.f64()?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::parse(e.line, format!("`{}` must be positive", e.key)))
    }
}

fn non_negative(e: &kv::Entry) -> Result<f64> {
    let v = e.f64()?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::parse(e.line, format!("`{}` must not be negative", e.key)))
    }
}

fn count(e: &kv::Entry, lo: usize, hi: usize) -> Result<usize> {
    let v = e.usize()?;
    if (lo..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(Error::parse(e.line, format!("`{}` must lie in [{lo}, {hi}]", e.key)))
    }
}

fn open_unit(e: &kv::Entry, include_one: bool) -> Result<f64> {
    let v = e.f64()?;
    if v > 0.0 && (v < 1.0 || (include_one && v == 1.0)) {
        Ok(v)
    } else {
        let hi = if include_one { "1]" } else { "1)" };
        Err(Error::parse(e.line, format!("`{}` must lie in (0, {hi}", e.key)))
    }
}

fn boolean(e: &kv::Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(Error::parse(e.line, format!("`{v}` is not `true` or `false`"))),
    }
}

impl PipelineConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = Self::default();
        for e in kv::parse(text)? {
            let path = || {
                if e.value.is_empty() {
                    return Err(Error::parse(e.line, format!("`{}` needs a path", e.key)));
                }
                Ok(base.join(&e.value))
            };
            match e.key.as_str() {
                "features.provider" => {
                    c.provider = match e.value.as_str() {
                        "baseline" => ProviderKind::Baseline,
                        "file" => ProviderKind::File,
                        v => return Err(Error::parse(e.line, format!("unknown provider `{v}`"))),
                    }
                }
                "features.colour_dim" => {
                    c.colour_dim = count(&e, 2, 4096)?;
                    if c.colour_dim % 2 != 0 {
                        return Err(Error::parse(e.line, "`features.colour_dim` must be even"));
                    }
                }
                "features.colour_bandwidth" => c.colour_bandwidth = positive(&e)?,
                "descriptors.keypoint_budget" => c.descriptors.keypoint_budget = count(&e, 1, 100_000)?,
                "descriptors.local_radius" => c.descriptors.local_radius = positive(&e)?,
                "descriptors.gem_p" => {
                    c.descriptors.gem_p = e.f64()?;
                    if c.descriptors.gem_p < 1.0 {
                        return Err(Error::parse(e.line, "`descriptors.gem_p` must be at least 1"));
                    }
                }
                "descriptors.density_voxel" => c.descriptors.density_voxel = positive(&e)?,
                "retrieval.k" => c.retrieval_k = count(&e, 1, 10_000)?,
                "retrieval.revisit_radius" => c.revisit_radius = positive(&e)?,
                "registration.lowe_ratio" => c.lowe_ratio = open_unit(&e, true)?,
                "registration.inlier_threshold" => c.ransac.inlier_threshold = positive(&e)?,
                "registration.max_iters" => c.ransac.max_iters = count(&e, 1, 10_000_000)?,
                "registration.confidence" => c.ransac.confidence = open_unit(&e, false)?,
                "registration.icp_resolution" => c.icp.resolution = positive(&e)?,
                "registration.icp_max_corr_dist" => c.icp.max_corr_dist = positive(&e)?,
                "registration.icp_max_iters" => c.icp.max_iters = count(&e, 0, 100_000)?,
                "registration.icp_tolerance" => c.icp.tolerance = non_negative(&e)?,
                "registration.icp_reject_range_boundary" => c.icp.reject_range_boundary = boolean(&e)?,
                "registration.rot_tol_deg" => c.rot_tol_deg = positive(&e)?,
                "registration.trans_tol_m" => c.trans_tol_m = positive(&e)?,
                "verification.superpixels" => c.verify.superpixels = count(&e, 1, MAX_SUPERPIXELS)?,
                "verification.compactness" => c.verify.compactness = positive(&e)?,
                "verification.top_k" => c.verify.top_k = count(&e, 1, 10_000)?,
                "svc.c" => c.svc.c = positive(&e)?,
                "svc.gamma" => c.svc.gamma = positive(&e)?,
                "svc.coef0" => c.svc.coef0 = non_negative(&e)?,
                "svc.tolerance" => c.svc.tolerance = positive(&e)?,
                "paths.db" => c.db = Some(path()?),
                "paths.calib" => c.calib = Some(path()?),
                "paths.svc" => c.svc_model = Some(path()?),
                k => return Err(Error::parse(e.line, format!("unknown config key `{k}`"))),
            }
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    /// Every key with its current value; numbers are written exactly.
    pub fn to_text(&self) -> String {
        let f = hexfloat::format;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("features.provider", self.provider.name().into());
        put("features.colour_dim", self.colour_dim.to_string());
        put("features.colour_bandwidth", f(self.colour_bandwidth));
        put("descriptors.keypoint_budget", self.descriptors.keypoint_budget.to_string());
        put("descriptors.local_radius", f(self.descriptors.local_radius));
        put("descriptors.gem_p", f(self.descriptors.gem_p));
        put("descriptors.density_voxel", f(self.descriptors.density_voxel));
        put("retrieval.k", self.retrieval_k.to_string());
        put("retrieval.revisit_radius", f(self.revisit_radius));
        put("registration.lowe_ratio", f(self.lowe_ratio));
        put("registration.inlier_threshold", f(self.ransac.inlier_threshold));
        put("registration.max_iters", self.ransac.max_iters.to_string());
        put("registration.confidence", f(self.ransac.confidence));
        put("registration.icp_resolution", f(self.icp.resolution));
        put("registration.icp_max_corr_dist", f(self.icp.max_corr_dist));
        put("registration.icp_max_iters", self.icp.max_iters.to_string());
        put("registration.icp_tolerance", f(self.icp.tolerance));
        put("registration.icp_reject_range_boundary", self.icp.reject_range_boundary.to_string());
        put("registration.rot_tol_deg", f(self.rot_tol_deg));
        put("registration.trans_tol_m", f(self.trans_tol_m));
        put("verification.superpixels", self.verify.superpixels.to_string());
        put("verification.compactness", f(self.verify.compactness));
        put("verification.top_k", self.verify.top_k.to_string());
        put("svc.c", f(self.svc.c));
        put("svc.gamma", f(self.svc.gamma));
        put("svc.coef0", f(self.svc.coef0));
        put("svc.tolerance", f(self.svc.tolerance));
        for (k, p) in [("paths.db", &self.db), ("paths.calib", &self.calib), ("paths.svc", &self.svc_model)] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let mut c = PipelineConfig {
            provider: ProviderKind::File,
            db: Some(PathBuf::from("/data/db")),
            ..Default::default()
        };
        c.ransac.inlier_threshold = 0.3;
        c.icp.reject_range_boundary = false;
        let back = PipelineConfig::parse(&c.to_text(), Path::new("/")).unwrap();
        assert_eq!(back, c);
        assert_eq!(PipelineConfig::parse("", Path::new(".")).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn sectioned_keys_and_relative_paths() {
        let c = PipelineConfig::parse(
            "# tuned\nregistration.inlier_threshold = 0.5\nverification.top_k = 3\npaths.svc = models/svc.txt\n",
            Path::new("/etc/reloc"),
        )
        .unwrap();
        assert_eq!(c.ransac.inlier_threshold, 0.5);
        assert_eq!(c.verify.top_k, 3);
        assert_eq!(c.svc_model, Some(PathBuf::from("/etc/reloc/models/svc.txt")));
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        let base = Path::new(".");
        for (text, line) in [
            ("registration.inlier_treshold = 0.5", 1),
            ("\nregistration.inlier_threshold = -1", 2),
            ("verification.superpixels = 251", 1),
            ("registration.confidence = 1", 1),
            ("features.provider = neural", 1),
            ("features.colour_dim = 7", 1),
            ("registration.icp_reject_range_boundary = yes", 1),
            ("retrieval.k = 0", 1),
        ] {
            match PipelineConfig::parse(text, base) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
