use nalgebra::{Matrix3, Point3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};

/// A rigid-body transform in SE(3): `p ↦ R·p + t`.
///
/// The quaternion is kept normalised with a non-negative scalar part so that
/// equal rotations serialise to identical bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(*rotation.quaternion()),
            translation,
        }
    }

    /// Builds from raw quaternion components `(w, x, y, z)`; the quaternion is
    /// renormalised unless it is already canonical to rounding, so serialised
    /// transforms reload bit-exactly. Returns `None` for a zero or non-finite
    /// quaternion.
    pub fn from_wxyz(q: [f64; 4], translation: [f64; 3]) -> Option<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 || translation.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let rotation = if q[0] >= 0.0 && (norm - 1.0).abs() <= 1e-14 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            canonical(quat)
        };
        Some(Self {
            rotation,
            translation: Vector3::from(translation),
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    /// Rotation about `axis` by `angle` radians followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self::new(rot, translation)
    }

    /// Yaw rotation (about +z) by `angle` radians followed by `translation`.
    pub fn from_yaw(angle: f64, translation: Vector3<f64>) -> Self {
        Self::from_axis_angle(Vector3::z(), angle, translation)
    }

    /// Projects an arbitrary 3×3 matrix onto the nearest rotation.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_eps(rotation, 1e-15, 100, Rotation3::identity());
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `(w, x, y, z, tx, ty, tz)`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = &self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z]
    }

    pub fn from_array(v: [f64; 7]) -> Option<Self> {
        Self::from_wxyz([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]])
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        Self {
            rotation: canonical(*rotation.quaternion()),
            translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        Self {
            rotation: canonical(*inv.quaternion()),
            translation: -(inv * self.translation),
        }
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Geodesic rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Rotation angle and translation norm of `self · other⁻¹`.
    pub fn error_to(&self, other: &RigidTransform) -> (f64, f64) {
        let delta = self.compose(&other.inverse());
        (delta.rotation_angle(), delta.translation.norm())
    }
}

fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let q = if q.w < 0.0 { -q } else { q };
    let unit = UnitQuaternion::from_quaternion(q);
    // A second pass absorbs the residual from the first normalisation.
    UnitQuaternion::from_quaternion(*unit.quaternion())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_filter_map("zero quaternion", |(q, t)| RigidTransform::from_wxyz(q, t))
    }

    #[test]
    fn identity_is_neutral() {
        let t = RigidTransform::from_yaw(0.3, Vector3::new(1.0, -2.0, 0.5));
        assert_eq!(RigidTransform::identity().compose(&t), t);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let q = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        let half = q.compose(&q);
        let (rot_err, trans_err) = half.error_to(&RigidTransform::from_yaw(PI, Vector3::zeros()));
        assert!(rot_err < 1e-9 && trans_err < 1e-9);
    }

    #[test]
    fn yaw_rotates_x_onto_y() {
        let q = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        let p = q.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn scalar_part_is_non_negative() {
        let t = RigidTransform::from_wxyz([-0.5, 0.5, 0.5, 0.5], [0.0; 3]).unwrap();
        assert!(t.to_array()[0] >= 0.0);
        assert!(RigidTransform::from_wxyz([0.0; 4], [0.0; 3]).is_none());
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(t in arb_transform()) {
            let id = t.compose(&t.inverse());
            prop_assert!(id.rotation_angle() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
            prop_assert!((id.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_matches_sequential_application(
            a in arb_transform(), b in arb_transform(), p in prop::array::uniform3(-20.0f64..20.0)
        ) {
            let p = Point3::from(p);
            let lhs = a.compose(&b).apply_point(&p);
            let rhs = a.apply_point(&b.apply_point(&p));
            prop_assert!((lhs - rhs).norm() < 1e-9);
            prop_assert!((a.compose(&b).rotation().quaternion().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn matrix_round_trip(t in arb_transform()) {
            let m = t.rotation_matrix();
            let back = RigidTransform::from_matrix(&m, Vector3::zeros()).rotation_matrix();
            prop_assert!((m - back).abs().max() < 1e-9);
        }
    }
}
