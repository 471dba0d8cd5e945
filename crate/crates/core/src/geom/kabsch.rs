use nalgebra::{Matrix3, Point3, Vector3};

use super::RigidTransform;
use crate::{Error, Result};

/// Least-squares rigid transform taking `source[i]` onto `target[i]`.
///
/// SVD of the centred cross-covariance; a reflection is replaced by the closest
/// proper rotation. Needs at least three pairs whose centred covariance has
/// rank ≥ 2.
pub fn kabsch_fit(source: &[Point3<f64>], target: &[Point3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::invalid(format!(
            "kabsch: {} source points vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "kabsch needs at least 3 pairs, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let src_c = source.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let dst_c = target.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;

    let mut cov = Matrix3::zeros();
    let mut spread = 0.0f64;
    for (s, t) in source.iter().zip(target) {
        let ds = s.coords - src_c;
        let dt = t.coords - dst_c;
        cov += dt * ds.transpose();
        spread = spread.max(ds.norm()).max(dt.norm());
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD failed".into())),
    };
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let scale = spread * spread * n;
    if scale == 0.0 || sorted[1] <= 1e-12 * scale {
        return Err(Error::DegenerateConfiguration(
            "point set is collinear or coincident".into(),
        ));
    }

    // Flip the axis of the smallest singular value when the fit is a reflection.
    let smallest = sv.imin();
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[smallest] = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&diag);
    let rotation = u * correction * v_t;
    let tmp = RigidTransform::from_matrix(&rotation, Vector3::zeros());
    let translation = dst_c - tmp.apply_vector(&src_c);
    Ok(RigidTransform::new(*tmp.rotation(), translation))
}

/// Root-mean-square residual of `t` over the pairs.
pub fn rms_residual(t: &RigidTransform, source: &[Point3<f64>], target: &[Point3<f64>]) -> f64 {
    if source.is_empty() {
        return 0.0;
    }
    let sum: f64 = source
        .iter()
        .zip(target)
        .map(|(s, d)| (t.apply_point(s) - d).norm_squared())
        .sum();
    (sum / source.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect()
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 10);
        let t = kabsch_fit(&pts, &pts).unwrap();
        assert!(t.rotation_angle() < 1e-9 && t.translation().norm() < 1e-9);
    }

    #[test]
    fn recovers_planted_yaw_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_points(&mut rng, 20);
        let truth = RigidTransform::from_yaw(30f64.to_radians(), Vector3::new(1.0, 2.0, 3.0));
        let dst: Vec<_> = src.iter().map(|p| truth.apply_point(p)).collect();
        let (r, t) = kabsch_fit(&src, &dst).unwrap().error_to(&truth);
        assert!(r < 1e-9 && t < 1e-9);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let line: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(kabsch_fit(&line, &line), Err(Error::DegenerateConfiguration(_))));
        let two = &line[..2];
        assert!(matches!(kabsch_fit(two, two), Err(Error::DegenerateConfiguration(_))));
        let same = vec![Point3::new(1.0, 1.0, 1.0); 4];
        assert!(kabsch_fit(&same, &same).is_err());
    }

    #[test]
    fn planar_points_are_fine() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let truth = RigidTransform::from_axis_angle(Vector3::new(1.0, 1.0, 0.0), 0.7, Vector3::x());
        let dst: Vec<_> = pts.iter().map(|p| truth.apply_point(p)).collect();
        let (r, t) = kabsch_fit(&pts, &dst).unwrap().error_to(&truth);
        assert!(r < 1e-9 && t < 1e-9);
    }

    /// Coarse-to-fine grid search over SE(3) used as an independent optimum
    /// estimate; the closed form must never be worse.
    #[test]
    fn noisy_fit_is_no_worse_than_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_points(&mut rng, 50);
        let truth = RigidTransform::from_yaw(0.2, Vector3::new(0.5, -0.3, 0.1));
        let noise = Normal::new(0.0, 0.01).unwrap();
        let dst: Vec<_> = src
            .iter()
            .map(|p| {
                let q = truth.apply_point(p);
                Point3::new(
                    q.x + noise.sample(&mut rng),
                    q.y + noise.sample(&mut rng),
                    q.z + noise.sample(&mut rng),
                )
            })
            .collect();
        let fit = kabsch_fit(&src, &dst).unwrap();
        let fit_rms = rms_residual(&fit, &src, &dst);

        // Grid: 0.5° over roll/pitch/yaw and 1 cm over translation, centred on
        // the planted transform, ±2 steps per axis.
        let step_r = 0.5f64.to_radians();
        let step_t = 0.01;
        let mut best = f64::INFINITY;
        for i in -2..=2 {
            for j in -2..=2 {
                for k in -2..=2 {
                    let rot = nalgebra::UnitQuaternion::from_euler_angles(
                        i as f64 * step_r,
                        j as f64 * step_r,
                        0.2 + k as f64 * step_r,
                    );
                    let rotated: Vec<_> = src.iter().map(|p| rot * p).collect();
                    for a in -2..=2 {
                        for b in -2..=2 {
                            for c in -2..=2 {
                                let t = Vector3::new(
                                    0.5 + a as f64 * step_t,
                                    -0.3 + b as f64 * step_t,
                                    0.1 + c as f64 * step_t,
                                );
                                let sum: f64 = rotated
                                    .iter()
                                    .zip(&dst)
                                    .map(|(p, d)| (p + t - d).norm_squared())
                                    .sum();
                                best = best.min((sum / src.len() as f64).sqrt());
                            }
                        }
                    }
                }
            }
        }
        assert!(fit_rms <= best + 1e-12, "fit {fit_rms} grid {best}");
    }

    #[test]
    fn exact_on_many_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let src = random_points(&mut rng, 8);
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-20.0..20.0));
            let Some(truth) = RigidTransform::from_wxyz(q, t) else { continue };
            let dst: Vec<_> = src.iter().map(|p| truth.apply_point(p)).collect();
            let (r, e) = kabsch_fit(&src, &dst).unwrap().error_to(&truth);
            assert!(r < 1e-9 && e < 1e-9, "rot {r} trans {e}");
        }
    }
}
