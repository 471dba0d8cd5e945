use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorrespondenceSet, RegistrationResult};
use crate::geom::{kabsch_fit, rms_residual, RigidTransform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RansacParams {
    /// Residual below which a correspondence counts as an inlier (meters).
    pub inlier_threshold: f64,
    pub max_iters: usize,
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.5,
            max_iters: 10_000,
            confidence: 0.99,
        }
    }
}

/// Iterations needed to draw one all-inlier triple with the given confidence.
pub fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w3 = inlier_ratio.clamp(0.0, 1.0).powi(3);
    if w3 >= 1.0 {
        return 1;
    }
    if w3 <= 0.0 {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - w3).ln()).ceil();
    if n.is_finite() && n >= 1.0 {
        (n as usize).min(cap)
    } else {
        cap
    }
}

struct Model {
    transform: RigidTransform,
    inliers: Vec<usize>,
    rms: f64,
}

fn score(t: RigidTransform, src: &[Point3<f64>], dst: &[Point3<f64>], threshold: f64) -> Model {
    let mut inliers = Vec::new();
    let mut sum = 0.0;
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let r2 = (t.apply_point(s) - d).norm_squared();
        if r2 < threshold * threshold {
            inliers.push(i);
            sum += r2;
        }
    }
    let rms = if inliers.is_empty() {
        0.0
    } else {
        (sum / inliers.len() as f64).sqrt()
    };
    Model {
        transform: t,
        inliers,
        rms,
    }
}

fn better(a: &Model, b: &Model) -> bool {
    a.inliers.len() > b.inliers.len() || (a.inliers.len() == b.inliers.len() && a.rms < b.rms)
}

/// Robust rigid fit from query keypoints to candidate keypoints.
///
/// Draws 3-subsets from a seeded ChaCha stream, keeps the model with the most
/// inliers (lower RMS on ties), shrinks the iteration budget with the usual
/// `log(1-p)/log(1-w³)` rule and finally refits on all inliers. The returned
/// transform maps query coordinates into candidate coordinates.
pub fn ransac_register(
    corr: &CorrespondenceSet,
    query_pts: &[Point3<f64>],
    cand_pts: &[Point3<f64>],
    params: &RansacParams,
    seed: u64,
) -> Result<RegistrationResult> {
    if !(params.inlier_threshold > 0.0) {
        return Err(Error::invalid("RANSAC inlier threshold must be positive"));
    }
    let n = corr.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "RANSAC needs at least 3 correspondences, got {n}"
        )));
    }
    let mut src = Vec::with_capacity(n);
    let mut dst = Vec::with_capacity(n);
    for c in &corr.pairs {
        let (Some(s), Some(d)) = (query_pts.get(c.query), cand_pts.get(c.candidate)) else {
            return Err(Error::invalid("correspondence index out of range"));
        };
        src.push(*s);
        dst.push(*d);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = params.max_iters.max(1);
    let mut best: Option<Model> = None;
    let mut iterations = 0;
    while iterations < budget {
        iterations += 1;
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng.random_range(0..n - 2);
        for taken in [a.min(b), a.max(b)] {
            if c >= taken {
                c += 1;
            }
        }
        let sample = [a, b, c];
        let s: Vec<_> = sample.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = sample.iter().map(|&i| dst[i]).collect();
        let Ok(t) = kabsch_fit(&s, &d) else { continue };
        let model = score(t, &src, &dst, params.inlier_threshold);
        if best.as_ref().is_none_or(|b| better(&model, b)) {
            let w = model.inliers.len() as f64 / n as f64;
            budget = budget.min(required_iterations(w, params.confidence, params.max_iters));
            best = Some(model);
        }
    }

    let best = best.filter(|m| m.inliers.len() >= 3).ok_or_else(|| {
        Error::NoConsensus("no model is supported by at least 3 correspondences".into())
    })?;
    let inlier_src: Vec<_> = best.inliers.iter().map(|&i| src[i]).collect();
    let inlier_dst: Vec<_> = best.inliers.iter().map(|&i| dst[i]).collect();
    let final_model = match kabsch_fit(&inlier_src, &inlier_dst) {
        Ok(t) => {
            let refit = score(t, &src, &dst, params.inlier_threshold);
            if refit.inliers.len() >= best.inliers.len() {
                refit
            } else {
                best
            }
        }
        Err(_) => best,
    };
    let inl_s: Vec<_> = final_model.inliers.iter().map(|&i| src[i]).collect();
    let inl_d: Vec<_> = final_model.inliers.iter().map(|&i| dst[i]).collect();
    Ok(RegistrationResult {
        transform: final_model.transform,
        inlier_count: final_model.inliers.len(),
        inlier_rms: rms_residual(&final_model.transform, &inl_s, &inl_d),
        converged: iterations < params.max_iters,
        icp_iterations: 0,
        error_history: Vec::new(),
    })
}
