use nalgebra::Point3;

use super::RegistrationResult;
use crate::geom::{kabsch_fit, voxel_downsample, KdTree, PointCloud, RigidTransform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IcpParams {
    /// Voxel size both clouds are downsampled to (meters).
    pub resolution: f64,
    /// Correspondences farther apart than this are rejected (meters).
    pub max_corr_dist: f64,
    pub max_iters: usize,
    /// Stop once the error improves by less than this (m²).
    pub tolerance: f64,
    /// Treat query points landing within `max_corr_dist` of the candidate's
    /// outermost horizontal range at the initial pose as outliers. Both
    /// clouds are sensor-centred with a finite range, so near that edge a
    /// query point's true partner may be missing and its nearest neighbour
    /// would drag the fit inward.
    pub reject_range_boundary: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            resolution: 0.4,
            max_corr_dist: 1.0,
            max_iters: 50,
            tolerance: 1e-6,
            reject_range_boundary: true,
        }
    }
}

struct Matches {
    /// Truncated mean-squared error over all source points.
    error: f64,
    src: Vec<Point3<f64>>,
    dst: Vec<Point3<f64>>,
    inlier_sq_sum: f64,
}

fn correspond(t: &RigidTransform, source: &[Point3<f64>], active: &[bool], target: &KdTree, max_dist: f64) -> Matches {
    let cap = max_dist * max_dist;
    let mut m = Matches {
        error: 0.0,
        src: Vec::new(),
        dst: Vec::new(),
        inlier_sq_sum: 0.0,
    };
    let mut total = 0.0;
    for (p, _) in source.iter().zip(active).filter(|(_, a)| **a) {
        let q = t.apply_point(p);
        let (id, d) = target
            .nearest(&[q.x, q.y, q.z])
            .expect("target tree is non-empty");
        let d2 = d * d;
        if d2 <= cap {
            let tp = target.point(id);
            m.src.push(*p);
            m.dst.push(Point3::new(tp[0], tp[1], tp[2]));
            m.inlier_sq_sum += d2;
            total += d2;
        } else {
            total += cap;
        }
    }
    total += cap * active.iter().filter(|a| !**a).count() as f64;
    m.error = total / source.len() as f64;
    m
}

/// Point-to-point ICP of `query` onto `candidate`, starting from `initial`
/// (query → candidate frame).
///
/// The tracked error is the mean over all downsampled query points of
/// `min(d², max_corr_dist²)`. Points that start beyond the candidate's range
/// boundary are charged the cap for the whole run. A rigid fit on the current inliers followed by
/// re-association cannot increase it, and a step that would (through rounding)
/// is discarded, so `error_history` is non-increasing.
pub fn icp_refine(
    query: &PointCloud,
    candidate: &PointCloud,
    initial: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    if query.is_empty() || candidate.is_empty() {
        return Err(Error::invalid("ICP needs two non-empty clouds"));
    }
    if !(params.max_corr_dist > 0.0) {
        return Err(Error::invalid("ICP max correspondence distance must be positive"));
    }
    let source = voxel_downsample(query, params.resolution)?;
    let target = voxel_downsample(candidate, params.resolution)?;
    let tree = KdTree::from_points(target.points());
    let source = source.points();
    // decided once so that the tracked error stays monotone
    let active: Vec<bool> = if params.reject_range_boundary {
        let extent = target.points().iter().map(|p| p.x.hypot(p.y)).fold(0.0, f64::max);
        let reach = extent - params.max_corr_dist;
        source
            .iter()
            .map(|p| {
                let q = initial.apply_point(p);
                q.x.hypot(q.y) <= reach
            })
            .collect()
    } else {
        vec![true; source.len()]
    };

    let mut transform = *initial;
    let mut current = correspond(&transform, source, &active, &tree, params.max_corr_dist);
    if current.src.is_empty() {
        return Err(Error::NoOverlap(format!(
            "no correspondences within {} m at the initial pose",
            params.max_corr_dist
        )));
    }
    let mut history = vec![current.error];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iters {
        let Ok(step) = kabsch_fit(&current.src, &current.dst) else { break };
        iterations += 1;
        let next = correspond(&step, source, &active, &tree, params.max_corr_dist);
        if next.error > current.error || next.src.is_empty() {
            converged = true;
            break;
        }
        let improvement = current.error - next.error;
        transform = step;
        current = next;
        history.push(current.error);
        if improvement < params.tolerance {
            converged = true;
            break;
        }
    }

    let n = current.src.len();
    Ok(RegistrationResult {
        transform,
        inlier_count: n,
        inlier_rms: (current.inlier_sq_sum / n.max(1) as f64).sqrt(),
        converged,
        icp_iterations: iterations,
        error_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::pose_error;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Ground plane, a wall and a few posts: enough structure to constrain
    /// all six degrees of freedom.
    pub(crate) fn structured_scene(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for _ in 0..6000 {
            pts.push(Point3::new(
                rng.random_range(-15.0..15.0),
                rng.random_range(-15.0..15.0),
                0.1 * rng.random_range(-1.0..1.0f64).sin(),
            ));
        }
        for _ in 0..2000 {
            pts.push(Point3::new(12.0, rng.random_range(-10.0..10.0), rng.random_range(0.0..3.0)));
        }
        for _ in 0..6 {
            let (cx, cy) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            for _ in 0..400 {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                pts.push(Point3::new(cx + 0.3 * a.cos(), cy + 0.3 * a.sin(), rng.random_range(0.0..4.0)));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let scene = structured_scene(1);
        let res = icp_refine(&scene, &scene, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!(res.converged);
        assert!(res.icp_iterations <= 2);
        let (r, t) = pose_error(&res.transform, &RigidTransform::identity());
        assert!(r < 1e-9 && t < 1e-9);
    }

    #[test]
    fn recovers_from_small_perturbation() {
        let query = structured_scene(2);
        let truth = RigidTransform::from_yaw(0.4, Vector3::new(1.0, -2.0, 0.1));
        let candidate = query.transformed(&truth);
        let perturb = RigidTransform::from_axis_angle(Vector3::new(0.2, 0.1, 1.0), 3f64.to_radians(), Vector3::new(0.2, -0.2, 0.1));
        let initial = perturb.compose(&truth);
        let res = icp_refine(&query, &candidate, &initial, &IcpParams::default()).unwrap();
        let (r, t) = pose_error(&res.transform, &truth);
        assert!(r.to_degrees() < 0.5 && t < 0.05, "rot {} trans {t}", r.to_degrees());
        assert!(res.error_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn far_apart_clouds_do_not_overlap() {
        let a = structured_scene(3);
        let b = a.transformed(&RigidTransform::from_translation(Vector3::new(100.0, 0.0, 0.0)));
        let err = icp_refine(&a, &b, &RigidTransform::identity(), &IcpParams::default()).unwrap_err();
        assert!(matches!(err, Error::NoOverlap(_)));
    }
}
