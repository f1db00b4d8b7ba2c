//! Photometric alignment of depth-scaled primitives.
//!
//! A primitive from a reference frame is lifted to 3D with its depth
//! `exp(log_scale + log_udepth)`, moved into a target camera and compared
//! with the target image there. [`joint`] holds the multi-frame cost, its
//! analytic gradient and the coarse-to-fine Adam optimiser; [`sfm`] wraps it
//! for reference/target problems.

pub mod joint;
pub mod sfm;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{ImageBuffer, Intrinsics, PointCloud, Pose};
use crate::integration::SuperPrimitive;

pub use joint::{
    optimize, Edge, Evaluation, Frame, Gradient, JointProblem, JointResult, Normalization,
    OptimizerConfig, State,
};
pub use sfm::{
    align, photometric_cost, sfm_from_bundles, AlignmentProblem, AlignmentResult, SfmOutput,
    Target,
};

/// Points closer than this to the target image plane are invalid.
pub(crate) const MIN_DEPTH: f64 = 1e-6;

/// Coordinates this far outside the interpolation domain are snapped onto
/// its border, absorbing round-off in project/unproject chains.
const DOMAIN_SLACK: f64 = 1e-9;

#[inline]
pub(crate) fn snap_to_domain(x: f64, max: f64) -> Option<f64> {
    if x >= 0.0 && x <= max {
        Some(x)
    } else if x > -DOMAIN_SLACK && x < 0.0 {
        Some(0.0)
    } else if x > max && x < max + DOMAIN_SLACK {
        Some(max)
    } else {
        None
    }
}

/// A primitive with its log depth scale (the log-depth at the anchor).
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPrimitive {
    pub prim: SuperPrimitive,
    pub log_scale: f64,
}

impl ScaledPrimitive {
    pub fn new(prim: SuperPrimitive, log_scale: f64) -> Self {
        Self { prim, log_scale }
    }

    /// Depth of the `i`-th pixel.
    pub fn depth(&self, i: usize) -> f64 {
        (self.log_scale + self.prim.log_udepth()[i]).exp()
    }

    pub fn anchor_depth(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Camera-frame points, one per pixel.
    pub fn points(&self, intr: &Intrinsics) -> Vec<Vector3<f64>> {
        self.prim
            .pixels()
            .iter()
            .enumerate()
            .map(|(i, p)| intr.unproject_unchecked(p.u as f64, p.v as f64, self.depth(i)))
            .collect()
    }
}

/// Unprojects every pixel of every primitive (overlaps give repeated rays).
/// Colours are taken from `image` when given.
pub fn fuse(scaled: &[ScaledPrimitive], intr: &Intrinsics, image: Option<&ImageBuffer>) -> PointCloud {
    let mut points = Vec::new();
    let mut colors = image.map(|_| Vec::new());
    for sp in scaled {
        points.extend(sp.points(intr));
        if let (Some(img), Some(c)) = (image, colors.as_mut()) {
            for p in sp.prim.pixels() {
                let px = img.pixel(p.u as usize, p.v as usize);
                c.push(match px.len() {
                    1 => [px[0]; 3],
                    _ => [px[0], px[1], px[2]],
                });
            }
        }
    }
    PointCloud { points, colors }
}

/// Per-pixel photometric penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Absolute difference; derivative 0 at 0.
    L1,
    /// `sqrt(e^2 + eps^2) - eps`.
    Charbonnier { eps: f64 },
}

impl Default for Loss {
    fn default() -> Self {
        Loss::Charbonnier { eps: 1e-3 }
    }
}

impl Loss {
    #[inline]
    pub fn value(&self, e: f64) -> f64 {
        match *self {
            Loss::L1 => e.abs(),
            Loss::Charbonnier { eps } => (e * e + eps * eps).sqrt() - eps,
        }
    }

    #[inline]
    pub fn derivative(&self, e: f64) -> f64 {
        match *self {
            Loss::L1 => {
                if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Loss::Charbonnier { eps } => e / (e * e + eps * eps).sqrt(),
        }
    }
}

/// Target-image coordinates of every primitive pixel under `t_tr`
/// (target-from-reference). `None` marks points behind the target camera
/// or outside its interpolation domain.
pub fn warp_primitive(
    sp: &ScaledPrimitive,
    t_tr: &Pose,
    intr_ref: &Intrinsics,
    intr_t: &Intrinsics,
) -> Vec<Option<Vector2<f64>>> {
    sp.points(intr_ref)
        .iter()
        .map(|x| {
            let y = t_tr.transform(x);
            if y.z <= MIN_DEPTH {
                return None;
            }
            let p = intr_t.project_unchecked(&y);
            Some(Vector2::new(
                snap_to_domain(p.x, (intr_t.width - 1) as f64)?,
                snap_to_domain(p.y, (intr_t.height - 1) as f64)?,
            ))
        })
        .collect()
}

/// Mean over valid pixels of the channel-summed loss between the reference
/// pixel and the target sample. `None` when fewer than `min_valid_fraction`
/// of the pixels are valid.
#[allow(clippy::too_many_arguments)]
pub fn primitive_residual(
    sp: &ScaledPrimitive,
    i_ref: &ImageBuffer,
    i_t: &ImageBuffer,
    t_tr: &Pose,
    intr_ref: &Intrinsics,
    intr_t: &Intrinsics,
    loss: Loss,
    min_valid_fraction: f64,
) -> Option<f64> {
    let warped = warp_primitive(sp, t_tr, intr_ref, intr_t);
    let ch = i_ref.channels();
    let mut sample = vec![0.0; ch];
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, w) in sp.prim.pixels().iter().zip(&warped) {
        let Some(w) = w else { continue };
        if !i_t.sample_into(w.x, w.y, &mut sample) {
            continue;
        }
        let r = i_ref.pixel(p.u as usize, p.v as usize);
        sum += r.iter().zip(&sample).map(|(a, b)| loss.value(b - a)).sum::<f64>();
        n += 1;
    }
    let total = sp.prim.len();
    if n == 0 || (n as f64) < min_valid_fraction * total as f64 {
        None
    } else {
        Some(sum / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{Pixel, Segment};

    fn flat_prim(w: u32, h: u32) -> SuperPrimitive {
        let px: Vec<Pixel> = (0..h)
            .flat_map(|v| (0..w).map(move |u| Pixel::new(u, v)))
            .collect();
        SuperPrimitive::flat(Segment::with_centroid_anchor(px).unwrap())
    }

    #[test]
    fn identity_warp_is_exact() {
        let k = Intrinsics::new(50.0, 50.0, 7.5, 7.5, 16, 16).unwrap();
        let sp = ScaledPrimitive::new(flat_prim(16, 16), 0.7);
        let w = warp_primitive(&sp, &Pose::identity(), &k, &k);
        for (p, q) in sp.prim.pixels().iter().zip(&w) {
            let q = q.unwrap();
            assert!((q.x - p.u as f64).abs() < 1e-12 && (q.y - p.v as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn lateral_translation_shifts_pixels() {
        let k = Intrinsics::new(100.0, 100.0, 20.0, 20.0, 64, 40).unwrap();
        let sp = ScaledPrimitive::new(flat_prim(30, 30), 0.0);
        let t = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        for (p, q) in sp.prim.pixels().iter().zip(warp_primitive(&sp, &t, &k, &k)) {
            let q = q.unwrap();
            assert!((q.x - p.u as f64 - 10.0).abs() < 1e-9);
            assert!((q.y - p.v as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn behind_camera_is_invalid() {
        let k = Intrinsics::new(10.0, 10.0, 1.5, 1.5, 4, 4).unwrap();
        let sp = ScaledPrimitive::new(flat_prim(4, 4), 0.0);
        let t = Pose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        assert!(warp_primitive(&sp, &t, &k, &k).iter().all(|w| w.is_none()));
    }

    #[test]
    fn constant_offset_residual() {
        let k = Intrinsics::new(10.0, 10.0, 3.5, 3.5, 8, 8).unwrap();
        let a = ImageBuffer::from_fn(8, 8, 3, |u, v, c| 0.1 * (u + v + c) as f64 / 20.0);
        let mut b = a.clone();
        b.data_mut().iter_mut().for_each(|x| *x += 0.1);
        let sp = ScaledPrimitive::new(flat_prim(8, 8), 0.0);
        let id = Pose::identity();
        let same = primitive_residual(&sp, &a, &a, &id, &k, &k, Loss::L1, 0.3).unwrap();
        assert_eq!(same, 0.0);
        let off = primitive_residual(&sp, &a, &b, &id, &k, &k, Loss::L1, 0.3).unwrap();
        assert!((off - 0.3).abs() < 1e-12);
    }

    #[test]
    fn loss_derivatives() {
        let l = Loss::Charbonnier { eps: 1e-3 };
        for e in [-0.3, -1e-4, 0.0, 2e-3, 0.5] {
            let h = 1e-7;
            let fd = (l.value(e + h) - l.value(e - h)) / (2.0 * h);
            assert!((fd - l.derivative(e)).abs() < 1e-5);
        }
        assert_eq!(Loss::L1.derivative(0.0), 0.0);
    }

    #[test]
    fn fuse_single_pixel() {
        let k = Intrinsics::new(10.0, 10.0, 1.0, 1.0, 3, 3).unwrap();
        let seg = Segment::new(vec![Pixel::new(1, 1)], Pixel::new(1, 1)).unwrap();
        let sp = ScaledPrimitive::new(SuperPrimitive::flat(seg), 2f64.ln());
        let cloud = fuse(&[sp.clone(), sp], &k, None);
        assert_eq!(cloud.len(), 2);
        for p in &cloud.points {
            assert!((p - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        }
    }
}
