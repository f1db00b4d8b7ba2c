use nalgebra::Vector2;
use proptest::prelude::*;

use superprim::frontend::{
    load_bundle, save_bundle, scenes, select_masks, synth_scene, MaskCandidate, MaskSelection,
};
use superprim::Pixel;

fn rect(u0: u32, v0: u32, w: u32, h: u32) -> Vec<Pixel> {
    (v0..v0 + h).flat_map(|v| (u0..u0 + w).map(move |u| Pixel::new(u, v))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_selection_ignores_candidate_order(
        boxes in prop::collection::vec((0u32..20, 0u32..20, 4u32..12, 4u32..12, 0.8f64..1.0, 0usize..3), 1..12),
        perm_seed in any::<u64>(),
    ) {
        let mut per_query: Vec<(Pixel, Vec<MaskCandidate>)> = Vec::new();
        for (k, &(u, v, w, h, stab, score)) in boxes.iter().enumerate() {
            // Coarse scores so ties are common.
            let c = MaskCandidate::new(rect(u, v, w, h), stab, score as f64);
            let q = Pixel::new(u + w / 2, v + h / 2);
            match per_query.iter_mut().find(|(p, _)| *p == q) {
                Some((_, list)) if k % 2 == 0 => list.push(c),
                _ => per_query.push((q, vec![c])),
            }
        }
        let params = MaskSelection::default();
        let reference = select_masks(&per_query, &params);

        let mut shuffled = per_query.clone();
        let mut s = perm_seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        for (_, list) in shuffled.iter_mut() {
            list.reverse();
        }
        prop_assert_eq!(select_masks(&shuffled, &params), reference);
    }
}

#[test]
fn generator_is_deterministic() {
    let spec = scenes::orbit(4, 3, 60.0).unwrap();
    let a = synth_scene(&spec, 4).unwrap();
    let b = synth_scene(&spec, 4).unwrap();
    assert_eq!(a.bundles, b.bundles);
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn exact_warps_are_photometrically_consistent() {
    let out = synth_scene(&scenes::two_view(0).unwrap(), 0).unwrap();
    let (b0, b1) = (&out.bundles[0], &out.bundles[1]);
    let (d0, d1) = (b0.gt_depth.as_ref().unwrap(), b1.gt_depth.as_ref().unwrap());
    let t = b1.gt_pose.unwrap().inverse();
    let k = b0.intr;
    let mut errs = Vec::new();
    for v in 0..k.height {
        for u in 0..k.width {
            let x = k.unproject(&Vector2::new(u as f64, v as f64), d0.get(u, v, 0)).unwrap();
            let y = t.transform(&x);
            let Ok(p) = k.project(&y) else { continue };
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x < (k.width - 1) as f64 && p.y < (k.height - 1) as f64) {
                continue;
            }
            // Skip occlusions and depth discontinuities.
            let same_surface = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|&(du, dv)| {
                let z = d1.get(p.x as usize + du, p.y as usize + dv, 0);
                (z / y.z - 1.0).abs() < 0.01
            });
            if !same_surface {
                continue;
            }
            let s = b1.image.bilinear_sample(p.x, p.y).unwrap();
            for (a, b) in s.iter().zip(b0.image.pixel(u, v)) {
                errs.push((a - b).abs());
            }
        }
    }
    errs.sort_by(f64::total_cmp);
    assert!(errs.len() > 10_000);
    assert!(errs[errs.len() / 2] < 1e-3, "median {}", errs[errs.len() / 2]);
}

#[test]
fn bundles_round_trip_through_disk() {
    let out = synth_scene(&scenes::two_view(2).unwrap(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for b in &out.bundles {
        save_bundle(b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back.segments, b.segments);
        assert_eq!(back.intr, b.intr);
        assert_eq!(back.gt_pose.is_some(), b.gt_pose.is_some());
        let close = |a: &[f64], c: &[f64]| a.iter().zip(c).all(|(x, y)| (x - y).abs() < 1e-6);
        assert!(close(back.normals.data(), b.normals.data()));
        assert!(close(back.gt_depth.as_ref().unwrap().data(), b.gt_depth.as_ref().unwrap().data()));
        assert!(back.image.data().iter().zip(b.image.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
    }
}
