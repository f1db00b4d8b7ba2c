use nalgebra::Vector3;
use proptest::prelude::*;

use superprim::completion::{complete, fit_scale, render_depth, CompletionConfig, DepthSample, ScaleFit};
use superprim::frontend::{scenes, synth_scene};
use superprim::{Intrinsics, Pixel, PointCloud, Pose, Provenance, Segment, SparseDepth, SuperPrimitive};

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn least_squares_fit_minimises_depth_error(
        logs in prop::collection::vec(-0.5f64..0.5, 1..12),
        depths in prop::collection::vec(0.3f64..6.0, 12),
    ) {
        let px: Vec<Pixel> = (0..logs.len() as u32).map(|u| Pixel::new(u, 0)).collect();
        let prim = SuperPrimitive::new(Segment::new(px, Pixel::new(0, 0)).unwrap(), {
            let mut l = logs.clone();
            l[0] = 0.0;
            l
        }).unwrap();
        let samples: Vec<DepthSample> = (0..prim.len())
            .map(|i| DepthSample { u: i as f64, v: 0.0, depth: depths[i] })
            .collect();
        let sparse = SparseDepth { samples };
        let got = fit_scale(&prim, &sparse, ScaleFit::LeastSquares).unwrap().exp();
        let cost = |s: f64| (0..prim.len()).map(|i| (s * prim.udepth(i) - depths[i]).powi(2)).sum::<f64>();
        let best = golden_section(cost, 1e-3, 50.0);
        prop_assert!((got - best).abs() < 1e-6 * best.max(1.0), "{got} vs {best}");

        let med = fit_scale(&prim, &sparse, ScaleFit::MedianRatio).unwrap();
        let mut r: Vec<f64> = (0..prim.len()).map(|i| (depths[i] / prim.udepth(i)).ln()).collect();
        r.sort_by(f64::total_cmp);
        prop_assert_eq!(med, r[(r.len() - 1) / 2]);
    }

    #[test]
    fn render_matches_brute_force(pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -0.5f64..4.0), 1..60)) {
        let intr = Intrinsics::new(6.0, 6.0, 3.5, 2.5, 8, 6).unwrap();
        let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect(), None).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.1, -0.1, 0.2));
        let map = render_depth(&cloud, &intr, &pose);
        for v in 0..6usize {
            for u in 0..8usize {
                let mut hits = Vec::new();
                for p in &cloud.points {
                    let q = p + Vector3::new(0.1, -0.1, 0.2);
                    if q.z <= 0.0 {
                        continue;
                    }
                    let (pu, pv) = ((6.0 * q.x / q.z + 3.5).round(), (6.0 * q.y / q.z + 2.5).round());
                    if pu == u as f64 && pv == v as f64 {
                        hits.push(q.z);
                    }
                }
                let i = v * 8 + u;
                if hits.is_empty() {
                    prop_assert_eq!(map.provenance[i], Provenance::Undefined);
                } else {
                    let mean = hits.iter().sum::<f64>() / hits.len() as f64;
                    prop_assert_eq!(map.provenance[i], Provenance::Primitive);
                    prop_assert!((map.depth.data()[i] - mean).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn completion_is_dense_and_exact_on_primitives() {
    let out = synth_scene(&scenes::two_view(3).unwrap(), 3).unwrap();
    let b = &out.bundles[0];
    let gt = b.gt_depth.as_ref().unwrap();
    let sparse = SparseDepth::from_depth_map(gt, 150, 3);
    let cfg = CompletionConfig {
        d_min: 0.0,
        d_max: f64::INFINITY,
        ..Default::default()
    };
    let c = complete(b, &sparse, &cfg).unwrap();
    assert!(c.depth.is_dense());
    assert_eq!(c.depth.count(Provenance::Undefined), 0);
    for (i, p) in c.depth.provenance.iter().enumerate() {
        if *p == Provenance::Primitive {
            assert!((c.depth.depth.data()[i] / gt.data()[i] - 1.0).abs() < 1e-3);
        }
    }
}

#[test]
fn far_samples_are_ignored() {
    let out = synth_scene(&scenes::two_view(0).unwrap(), 0).unwrap();
    let b = &out.bundles[0];
    let mut sparse = SparseDepth::from_depth_map(b.gt_depth.as_ref().unwrap(), 150, 0);
    sparse.samples.iter_mut().for_each(|d| d.depth *= 100.0);
    assert!(complete(b, &sparse, &CompletionConfig::default()).is_err());
}
