use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use reloc_core::geom::{kabsch_fit, voxel_downsample, KdTree};
use reloc_core::{PointCloud, RigidTransform};

fn transform() -> impl Strategy<Value = RigidTransform> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..3.1,
        prop::array::uniform3(-50.0f64..50.0),
    )
        .prop_filter_map("degenerate axis", |(a, angle, t)| {
            let axis = Vector3::from(a);
            (axis.norm() > 1e-2).then(|| RigidTransform::from_axis_angle(axis.normalize(), angle, Vector3::from(t)))
        })
}

fn points(min: usize) -> impl Strategy<Value = Vec<Point3<f64>>> {
    prop::collection::vec(prop::array::uniform3(-20.0f64..20.0).prop_map(Point3::from), min..80)
}

proptest! {
    #[test]
    fn compose_with_inverse_is_identity(t in transform(), p in prop::array::uniform3(-30.0f64..30.0)) {
        let p = Point3::from(p);
        let back = t.inverse().compose(&t).apply_point(&p);
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn kabsch_recovers_planted_transforms(t in transform(), src in points(4)) {
        let dst: Vec<_> = src.iter().map(|p| t.apply_point(p)).collect();
        if let Ok(fit) = kabsch_fit(&src, &dst) {
            for (s, d) in src.iter().zip(&dst) {
                prop_assert!((fit.apply_point(s) - d).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn nearest_matches_linear_scan(cloud in points(1), q in prop::array::uniform3(-25.0f64..25.0)) {
        let tree = KdTree::from_points(&cloud);
        let q = Point3::from(q);
        let (_, d) = tree.knn3(&q, 1)[0];
        let best = cloud.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(d, best);
    }

    #[test]
    fn voxel_downsample_keeps_one_point_per_voxel(cloud in points(1), res in 0.5f64..5.0) {
        let cloud = PointCloud::new(cloud).unwrap();
        let down = voxel_downsample(&cloud, res).unwrap();
        prop_assert!(down.len() <= cloud.len());
        let mut keys: Vec<_> = down.points().iter().map(|p| reloc_core::geom::voxel_key(p, res)).collect();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys.len(), down.len());
    }
}
