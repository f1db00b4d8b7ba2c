use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use superprim::alignment::{
    optimize, primitive_residual, AlignmentProblem, OptimizerConfig, ScaledPrimitive, Target,
};
use superprim::frontend::{scenes, synth_scene, FrameBundle};
use superprim::integration::integrate_bundle;
use superprim::{ImageBuffer, IntegrationMode, Loss, Pose, PoseIncrement};

fn scene(seed: u64) -> Vec<FrameBundle> {
    synth_scene(&scenes::two_view(seed).unwrap(), seed).unwrap().bundles
}

fn gt_scaled(b: &FrameBundle) -> Vec<ScaledPrimitive> {
    let d = b.gt_depth.as_ref().unwrap();
    integrate_bundle(b, IntegrationMode::Full, &Default::default())
        .into_successful()
        .into_iter()
        .map(|p| {
            let a = p.anchor();
            let ls = d.get(a.u as usize, a.v as usize, 0).ln();
            ScaledPrimitive::new(p, ls)
        })
        .collect()
}

/// Bilinear sample written out by hand; `None` outside `[0, w-1] x [0, h-1]`.
fn bilinear(img: &ImageBuffer, u: f64, v: f64) -> Option<Vec<f64>> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
        return None;
    }
    let (u0, v0) = ((u.floor() as usize).min(img.width() - 2), (v.floor() as usize).min(img.height() - 2));
    let (a, b) = (u - u0 as f64, v - v0 as f64);
    Some(
        (0..img.channels())
            .map(|c| {
                img.get(u0, v0, c) * (1.0 - a) * (1.0 - b)
                    + img.get(u0 + 1, v0, c) * a * (1.0 - b)
                    + img.get(u0, v0 + 1, c) * (1.0 - a) * b
                    + img.get(u0 + 1, v0 + 1, c) * a * b
            })
            .collect(),
    )
}

#[test]
fn residual_matches_brute_force() {
    let bundles = scene(4);
    let (b0, b1) = (&bundles[0], &bundles[1]);
    let k = b0.intr;
    let t_tr = b1.gt_pose.unwrap().inverse();
    let loss = Loss::default();
    let mut checked = 0;
    for sp in gt_scaled(b0).iter().take(40) {
        let (mut sum, mut n) = (0.0, 0usize);
        for (i, p) in sp.prim.pixels().iter().enumerate() {
            let z = sp.depth(i);
            let x = Vector3::new((p.u as f64 - k.cu) / k.fu * z, (p.v as f64 - k.cv) / k.fv * z, z);
            let y = t_tr.transform(&x);
            if y.z <= 1e-6 {
                continue;
            }
            let Some(s) = bilinear(&b1.image, k.fu * y.x / y.z + k.cu, k.fv * y.y / y.z + k.cv) else { continue };
            let r = b0.image.pixel(p.u as usize, p.v as usize);
            sum += s.iter().zip(r).map(|(a, b)| loss.value(a - b)).sum::<f64>();
            n += 1;
        }
        let got = primitive_residual(sp, &b0.image, &b1.image, &t_tr, &k, &k, loss, 0.3);
        if (n as f64) < 0.3 * sp.prim.len() as f64 {
            // Border round-off may admit a handful of extra pixels.
            continue;
        }
        let want = sum / n as f64;
        let got = got.expect("enough valid pixels");
        assert!((got - want).abs() < 1e-9 * want.max(1.0), "{got} vs {want}");
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn cost_is_invariant_to_global_scale() {
    let bundles = scene(1);
    let (b0, b1) = (&bundles[0], &bundles[1]);
    let mut rng = StdRng::seed_from_u64(1);
    let prims: Vec<ScaledPrimitive> = gt_scaled(b0)
        .into_iter()
        .map(|mut p| {
            p.log_scale += rng.gen_range(-0.1..0.1);
            p
        })
        .collect();
    let pose = b1.gt_pose.unwrap().retract(&PoseIncrement::new(
        Vector3::new(0.01, -0.005, 0.002),
        Vector3::new(0.002, 0.001, -0.003),
    ));
    let cost_at = |c: f64| {
        let problem = AlignmentProblem {
            image: b0.image.clone(),
            intr: b0.intr,
            primitives: prims
                .iter()
                .map(|p| ScaledPrimitive::new(p.prim.clone(), p.log_scale + c))
                .collect(),
            targets: vec![Target {
                image: b1.image.clone(),
                intr: b1.intr,
                pose: pose.with_scaled_translation(c.exp()),
                fixed: false,
            }],
            config: OptimizerConfig {
                scale_penalty: 0.0,
                ..Default::default()
            },
        };
        let j = problem.to_joint().unwrap();
        j.evaluate(&j.initial_state(), false).unwrap().0.cost
    };
    let base = cost_at(0.0);
    for c in [-0.7, 0.3, 1.2] {
        assert!((cost_at(c) - base).abs() < 1e-10 * base.max(1.0));
    }
}

#[test]
fn optimisation_never_raises_the_cost() {
    let bundles = scene(2);
    let (b0, b1) = (&bundles[0], &bundles[1]);
    for (seed, jitter) in [(0u64, 0.0), (1, 0.3)] {
        let mut rng = StdRng::seed_from_u64(seed);
        let prims = gt_scaled(b0)
            .into_iter()
            .map(|mut p| {
                p.log_scale += rng.gen_range(-jitter - 1e-9..jitter + 1e-9);
                p
            })
            .collect();
        let problem = AlignmentProblem {
            image: b0.image.clone(),
            intr: b0.intr,
            primitives: prims,
            targets: vec![Target {
                image: b1.image.clone(),
                intr: b1.intr,
                pose: if jitter > 0.0 { Pose::identity() } else { b1.gt_pose.unwrap() },
                fixed: false,
            }],
            config: OptimizerConfig {
                levels: 2,
                iterations: 25,
                ..Default::default()
            },
        };
        let r = optimize(&problem.to_joint().unwrap()).unwrap();
        assert!(r.final_cost <= r.initial_cost, "{} > {}", r.final_cost, r.initial_cost);
    }
}
