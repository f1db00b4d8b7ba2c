use nalgebra::Vector3;
use proptest::prelude::*;

use superprim::alignment::ScaledPrimitive;
use superprim::frontend::{scenes, synth_scene, FrameBundle};
use superprim::integration::integrate_bundle;
use superprim::vo::{track, TrackedView};
use superprim::{ImageBuffer, IntegrationMode, Intrinsics, Keyframe, Pose, PoseIncrement, VoConfig, WindowState};

fn dummy_keyframe(id: usize) -> Keyframe {
    Keyframe {
        id,
        timestamp: id as f64,
        image: ImageBuffer::filled(2, 2, 1, 0.0),
        intr: Intrinsics::new(1.0, 1.0, 0.5, 0.5, 2, 2).unwrap(),
        pose: Pose::identity(),
        primitives: Vec::new(),
    }
}

proptest! {
    #[test]
    fn window_is_a_bounded_fifo(max_len in 2usize..8, pushes in 0usize..30) {
        let mut w = WindowState::new(dummy_keyframe(0), max_len);
        for id in 1..=pushes {
            let before: Vec<usize> = w.keyframes.iter().map(|k| k.id).collect();
            let evicted = w.push(dummy_keyframe(id));
            prop_assert!(w.len() <= max_len);
            prop_assert_eq!(w.keyframes.len(), w.tracked.len());
            prop_assert_eq!(w.latest().id, id);
            match evicted {
                Some(k) => prop_assert_eq!(k.id, before[0]),
                None => prop_assert_eq!(before.len() + 1, w.len()),
            }
        }
        prop_assert_eq!(w.first_id, 0);
    }

    #[test]
    fn supplementary_views_are_spread_and_include_the_latest(m in 0usize..40, n in 0usize..8) {
        let mut w = WindowState::new(dummy_keyframe(0), 5);
        for id in 1..=m {
            w.tracked[0].push(TrackedView {
                id,
                timestamp: id as f64,
                image: ImageBuffer::filled(1, 1, 1, 0.0),
                intr: Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap(),
                pose: Pose::identity(),
            });
        }
        let ids: Vec<usize> = w.supplementary(0, n).iter().map(|v| v.id).collect();
        prop_assert_eq!(ids.len(), m.min(n));
        prop_assert!(ids.windows(2).all(|p| p[0] < p[1]));
        if !ids.is_empty() {
            prop_assert_eq!(*ids.last().unwrap(), m);
        }
    }
}

fn gt_keyframe(b: &FrameBundle) -> Keyframe {
    let d = b.gt_depth.as_ref().unwrap();
    let primitives = integrate_bundle(b, IntegrationMode::Full, &Default::default())
        .into_successful()
        .into_iter()
        .map(|p| {
            let a = p.anchor();
            let ls = d.get(a.u as usize, a.v as usize, 0).ln();
            ScaledPrimitive::new(p, ls)
        })
        .collect();
    Keyframe {
        id: 0,
        timestamp: b.timestamp,
        image: b.image.clone(),
        intr: b.intr,
        pose: b.gt_pose.unwrap(),
        primitives,
    }
}

#[test]
fn tracking_recovers_and_keeps_the_true_pose() {
    let out = synth_scene(&scenes::orbit(1, 4, 60.0).unwrap(), 1).unwrap();
    let w = WindowState::new(gt_keyframe(&out.bundles[0]), 5);
    let cfg = VoConfig::default();
    let b = &out.bundles[2];
    let truth = b.gt_pose.unwrap();
    let err = |p: &Pose| {
        let d = p.inverse() * truth;
        (d.translation().norm(), d.angle().to_degrees())
    };
    // Starting at the truth stays there; a nearby start converges to it.
    let near = truth.retract(&PoseIncrement::new(Vector3::new(0.01, -0.01, 0.005), Vector3::new(0.004, -0.002, 0.003)));
    for init in [truth, near] {
        let r = track(&w, &b.image, &b.intr, &init, &cfg).unwrap();
        let (t, a) = err(&r.pose);
        assert!(t < 5e-3 && a < 0.1, "translation {t}, rotation {a} deg");
        assert!(r.active_fraction > 0.5);
    }
}
