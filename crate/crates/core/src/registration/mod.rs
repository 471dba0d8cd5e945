//! Relative pose estimation between a query submap and its retrieved
//! candidate: keypoint matching, RANSAC, ICP refinement and success scoring.

mod icp;
mod matching;
mod ransac;

pub use icp::{icp_refine, IcpParams};
pub use matching::{match_keypoints, Correspondence, CorrespondenceSet, DEFAULT_LOWE_RATIO};
pub use ransac::{ransac_register, required_iterations, RansacParams};

use crate::geom::RigidTransform;

/// Outcome of a registration stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps query-frame coordinates into candidate-frame coordinates.
    pub transform: RigidTransform,
    pub inlier_count: usize,
    pub inlier_rms: f64,
    pub converged: bool,
    pub icp_iterations: usize,
    /// ICP error after each accepted iteration (first entry: initial pose).
    pub error_history: Vec<f64>,
}

pub const DEFAULT_ROT_TOL_DEG: f64 = 5.0;
pub const DEFAULT_TRANS_TOL_M: f64 = 2.0;

/// Rotation error (radians, geodesic angle of `estimate · truth⁻¹`) and
/// translation error (meters, distance between the translation parts).
pub fn pose_error(estimate: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let delta = estimate.compose(&truth.inverse());
    (
        delta.rotation_angle(),
        (estimate.translation() - truth.translation()).norm(),
    )
}

/// True iff both errors are within tolerance (inclusive).
pub fn registration_success(
    estimate: &RigidTransform,
    truth: &RigidTransform,
    rot_tol_deg: f64,
    trans_tol_m: f64,
) -> bool {
    let (rot, trans) = pose_error(estimate, truth);
    rot.to_degrees() <= rot_tol_deg && trans <= trans_tol_m
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn yaw_deg(d: f64) -> RigidTransform {
        RigidTransform::from_yaw(d.to_radians(), Vector3::zeros())
    }

    #[test]
    fn success_thresholds() {
        let truth = RigidTransform::from_yaw(0.3, Vector3::new(4.0, 5.0, 1.0));
        assert!(registration_success(&truth, &truth, 5.0, 2.0));
        assert!(!registration_success(&yaw_deg(6.0).compose(&truth), &truth, 5.0, 2.0));
        assert!(registration_success(&yaw_deg(4.0).compose(&truth), &truth, 5.0, 2.0));
        let shift = |d: f64| {
            RigidTransform::new(*truth.rotation(), truth.translation() + Vector3::new(d, 0.0, 0.0))
        };
        assert!(registration_success(&shift(1.9), &truth, 5.0, 2.0));
        assert!(!registration_success(&shift(2.1), &truth, 5.0, 2.0));
    }

    #[test]
    fn boundary_is_inclusive() {
        let at = RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0));
        assert!(registration_success(&at, &RigidTransform::identity(), 5.0, 2.0));
        let (rot, _) = pose_error(&yaw_deg(5.0), &RigidTransform::identity());
        let measured = rot.to_degrees();
        assert!(registration_success(&yaw_deg(5.0), &RigidTransform::identity(), measured, 2.0));
        assert!(!registration_success(&yaw_deg(5.0), &RigidTransform::identity(), measured - 1e-9, 2.0));
    }
}
