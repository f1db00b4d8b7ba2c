use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use proptest::prelude::*;

use superprim::eval::{ate, associate, lower_median, Trajectory};
use superprim::Pose;

fn positions() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 4..25)
}

fn traj(points: &[Vector3<f64>], t0: f64) -> Trajectory {
    Trajectory::new(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (t0 + i as f64 * 0.1, Pose::from_translation(*p)))
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ate_ignores_similarity_of_the_estimate(
        pts in positions(),
        noise in prop::collection::vec((-0.1f64..0.1, -0.1f64..0.1, -0.1f64..0.1), 25),
        axis in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        scale in 0.1f64..10.0,
        shift in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
    ) {
        let gt: Vec<Vector3<f64>> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
        let est: Vec<Vector3<f64>> = gt
            .iter()
            .zip(&noise)
            .map(|(p, &(a, b, c))| p + Vector3::new(a, b, c))
            .collect();
        let r = Rotation3::new(Vector3::new(axis.0, axis.1, axis.2));
        let moved: Vec<Vector3<f64>> = est
            .iter()
            .map(|p| scale * (r * p) + Vector3::new(shift.0, shift.1, shift.2))
            .collect();
        let g = traj(&gt, 0.0);
        let a = ate(&traj(&est, 0.0), &g, 0.02);
        let b = ate(&traj(&moved, 0.0), &g, 0.02);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(a.similarity, b.similarity);
            prop_assert!((a.rmse - b.rmse).abs() < 1e-8 * a.rmse.max(1.0));
        }
    }

    #[test]
    fn lower_median_matches_sorting(mut v in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(lower_median(&mut v), Some(sorted[(sorted.len() - 1) / 2]));
    }

    #[test]
    fn association_respects_tolerance(offset in 0.0f64..0.05) {
        let pts: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let pairs = associate(&traj(&pts, offset), &traj(&pts, 0.0), 0.02);
        if offset <= 0.02 - 1e-9 {
            prop_assert_eq!(pairs.len(), 10);
            prop_assert!(pairs.iter().all(|(e, g)| e == g));
        } else if offset > 0.02 + 1e-9 {
            prop_assert!(pairs.is_empty());
        }
    }
}

#[test]
fn tum_round_trip() {
    let q = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3);
    let t = Trajectory::new(vec![
        (0.5, Pose::from_quaternion(&q, Vector3::new(1.0, 2.0, 3.0))),
        (1.5, Pose::identity()),
    ])
    .unwrap();
    let back = Trajectory::parse(&t.to_text()).unwrap();
    for ((ta, pa), (tb, pb)) in t.entries().iter().zip(back.entries()) {
        assert!((ta - tb).abs() < 1e-9);
        assert!((pa.rotation() - pb.rotation()).norm() < 1e-8);
        assert!((pa.translation() - pb.translation()).norm() < 1e-8);
    }
}

#[test]
fn static_ground_truth_falls_back_to_centroids() {
    let gt = traj(&vec![Vector3::new(1.0, 1.0, 1.0); 5], 0.0);
    let est = traj(&vec![Vector3::zeros(); 5], 0.0);
    let r = ate(&est, &gt, 0.02).unwrap();
    assert!(!r.similarity);
    assert_eq!(r.rmse, 0.0);
}
