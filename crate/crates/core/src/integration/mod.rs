//! Normal integration: per-segment unscaled log-depth from surface normals.
//!
//! Under perspective projection the log-depth `z = log(depth)` of a smooth
//! surface satisfies, at pixel `(u, v)` with camera-frame normal `n`,
//!
//! ```text
//! a_u * dz/du + n_x = 0,   a_u = n_x (u - c_u) + n_y (f_u / f_v) (v - c_v) + n_z f_u
//! a_v * dz/dv + n_y = 0,   a_v = n_x (f_v / f_u) (u - c_u) + n_y (v - c_v) + n_z f_v
//! ```
//!
//! One equation is written per pair of 4-neighbours inside the segment,
//! with the coefficients averaged over the pair (a centred difference at
//! the edge midpoint). The least-squares normal equations form a weighted
//! graph Laplacian per segment; all segments are stacked into one
//! block-diagonal system and solved together.

pub mod cg;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{FrameBundle, Pixel, Segment};
use crate::geometry::{ImageBuffer, Intrinsics};

pub use cg::{batched_pcg, BlockStatus, CsrMatrix};

/// A segment with its unscaled log-depth, zero at the anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperPrimitive {
    segment: Segment,
    log_udepth: Vec<f64>,
}

impl SuperPrimitive {
    /// `log_udepth` is indexed like `segment.pixels()` and must be zero at
    /// the anchor.
    pub fn new(segment: Segment, log_udepth: Vec<f64>) -> Result<Self> {
        if log_udepth.len() != segment.area() {
            return Err(Error::Domain(format!(
                "{} log-depth values for {} pixels",
                log_udepth.len(),
                segment.area()
            )));
        }
        if log_udepth.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite log-depth".into()));
        }
        if log_udepth[segment.anchor_position()] != 0.0 {
            return Err(Error::Domain("log-depth must vanish at the anchor".into()));
        }
        Ok(Self {
            segment,
            log_udepth,
        })
    }

    /// Constant unscaled depth over the segment.
    pub fn flat(segment: Segment) -> Self {
        let n = segment.area();
        Self {
            segment,
            log_udepth: vec![0.0; n],
        }
    }

    pub fn segment(&self) -> &Segment {
        &self.segment
    }

    pub fn pixels(&self) -> &[Pixel] {
        self.segment.pixels()
    }

    pub fn anchor(&self) -> Pixel {
        self.segment.anchor()
    }

    pub fn log_udepth(&self) -> &[f64] {
        &self.log_udepth
    }

    pub fn len(&self) -> usize {
        self.log_udepth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_udepth.is_empty()
    }

    /// Unscaled depth at the `i`-th pixel.
    pub fn udepth(&self, i: usize) -> f64 {
        self.log_udepth[i].exp()
    }
}

/// Constant-depth ablation.
pub fn flatten_constant_depth(p: &SuperPrimitive) -> SuperPrimitive {
    SuperPrimitive::flat(p.segment.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationConfig {
    /// Relative residual at which CG stops.
    pub cg_tol: f64,
    /// Iteration cap; `None` means `10 sqrt(n) + 200` for `n` unknowns.
    pub cg_maxiter: Option<usize>,
    /// Coefficients are clamped to at least `grazing_clamp * f` in
    /// magnitude.
    pub grazing_clamp: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            cg_tol: 1e-8,
            cg_maxiter: None,
            grazing_clamp: 1e-2,
        }
    }
}

impl IntegrationConfig {
    pub fn maxiter(&self, n: usize) -> usize {
        self.cg_maxiter
            .unwrap_or_else(|| (10.0 * (n as f64).sqrt()) as usize + 200)
    }
}

/// Which geometry a primitive is given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMode {
    /// Integrate the per-pixel normals.
    #[default]
    Full,
    /// Constant unscaled depth.
    ConstDepth,
    /// Integrate the segment's mean normal (a plane).
    ConstNormal,
}

impl std::str::FromStr for IntegrationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "const-depth" => Ok(Self::ConstDepth),
            "const-normal" => Ok(Self::ConstNormal),
            other => Err(Error::Domain(format!("unknown integration mode {other}"))),
        }
    }
}

/// One finite-difference equation `coeff * (z[j] - z[i]) + rhs = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Equation {
    pub i: usize,
    pub j: usize,
    pub coeff: f64,
    pub rhs: f64,
}

/// Least-squares problem for one segment; unknowns follow
/// `segment.pixels()` order.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalSystem {
    pub unknowns: usize,
    pub anchor: usize,
    pub equations: Vec<Equation>,
}

impl NormalSystem {
    pub fn residuals(&self, z: &[f64]) -> Vec<f64> {
        self.equations
            .iter()
            .map(|e| e.coeff * (z[e.j] - z[e.i]) + e.rhs)
            .collect()
    }

    /// Value of the discrete least-squares functional.
    pub fn functional(&self, z: &[f64]) -> f64 {
        self.residuals(z).iter().map(|r| r * r).sum()
    }

    /// Triplets of the normal matrix and its right-hand side, with unknown
    /// indices shifted by `offset`.
    fn normal_equations(&self, offset: usize, trip: &mut Vec<(usize, usize, f64)>, rhs: &mut [f64]) {
        for e in &self.equations {
            let (i, j) = (e.i + offset, e.j + offset);
            let w = e.coeff * e.coeff;
            trip.push((i, i, w));
            trip.push((j, j, w));
            trip.push((i, j, -w));
            trip.push((j, i, -w));
            let g = e.coeff * e.rhs;
            rhs[j] -= g;
            rhs[i] += g;
        }
    }
}

/// Perspective-corrected coefficients `(a_u, a_v)` at a pixel.
#[inline]
fn coefficients(n: [f64; 3], u: f64, v: f64, intr: &Intrinsics) -> (f64, f64) {
    let (du, dv) = (u - intr.cu, v - intr.cv);
    let a_u = n[0] * du + n[1] * (intr.fu / intr.fv) * dv + n[2] * intr.fu;
    let a_v = n[0] * (intr.fv / intr.fu) * du + n[1] * dv + n[2] * intr.fv;
    (a_u, a_v)
}

fn clamp_coeff(c: f64, eps: f64) -> f64 {
    if c.abs() >= eps {
        c
    } else if c > 0.0 {
        eps
    } else {
        -eps
    }
}

/// Assembles the finite-difference system for `seg` with normals given per
/// pixel by `normal_at`.
pub fn assemble_with(
    seg: &Segment,
    normal_at: impl Fn(Pixel) -> [f64; 3],
    intr: &Intrinsics,
    cfg: &IntegrationConfig,
) -> NormalSystem {
    let px = seg.pixels();
    let eps_u = cfg.grazing_clamp * intr.fu;
    let eps_v = cfg.grazing_clamp * intr.fv;
    let mut equations = Vec::with_capacity(2 * px.len());
    let info: Vec<([f64; 3], f64, f64)> = px
        .iter()
        .map(|p| {
            let n = normal_at(*p);
            let (a_u, a_v) = coefficients(n, p.u as f64, p.v as f64, intr);
            (n, a_u, a_v)
        })
        .collect();
    for (i, p) in px.iter().enumerate() {
        // +u neighbour is the next entry in row-major order when present.
        if let Some(j) = seg.position(Pixel::new(p.u + 1, p.v)) {
            let c = 0.5 * (info[i].1 + info[j].1);
            equations.push(Equation {
                i,
                j,
                coeff: clamp_coeff(c, eps_u),
                rhs: 0.5 * (info[i].0[0] + info[j].0[0]),
            });
        }
        if let Some(j) = seg.position(Pixel::new(p.u, p.v + 1)) {
            let c = 0.5 * (info[i].2 + info[j].2);
            equations.push(Equation {
                i,
                j,
                coeff: clamp_coeff(c, eps_v),
                rhs: 0.5 * (info[i].0[1] + info[j].0[1]),
            });
        }
    }
    NormalSystem {
        unknowns: px.len(),
        anchor: seg.anchor_position(),
        equations,
    }
}

pub fn assemble(
    seg: &Segment,
    normals: &ImageBuffer,
    intr: &Intrinsics,
    cfg: &IntegrationConfig,
) -> NormalSystem {
    assemble_with(
        seg,
        |p| {
            let n = normals.pixel(p.u as usize, p.v as usize);
            [n[0], n[1], n[2]]
        },
        intr,
        cfg,
    )
}

/// Result of a batched integration, in input order.
#[derive(Clone, Debug)]
pub struct Integrated {
    /// `None` where CG did not converge within its iteration cap.
    pub primitives: Vec<Option<SuperPrimitive>>,
    pub status: Vec<BlockStatus>,
}

impl Integrated {
    pub fn successful(&self) -> impl Iterator<Item = &SuperPrimitive> {
        self.primitives.iter().flatten()
    }

    pub fn into_successful(self) -> Vec<SuperPrimitive> {
        self.primitives.into_iter().flatten().collect()
    }
}

/// Solves already-assembled systems as one block-diagonal system.
pub fn solve_systems(
    segments: &[Segment],
    systems: &[NormalSystem],
    cfg: &IntegrationConfig,
) -> Integrated {
    let total: usize = systems.iter().map(|s| s.unknowns).sum();
    let mut blocks = Vec::with_capacity(systems.len());
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; total];
    let mut off = 0;
    for s in systems {
        s.normal_equations(off, &mut trip, &mut rhs);
        // Keep every unknown present on the diagonal.
        for k in off..off + s.unknowns {
            trip.push((k, k, 0.0));
        }
        blocks.push(off..off + s.unknowns);
        off += s.unknowns;
    }
    let matrix = CsrMatrix::from_triplets(total, trip);
    let (x, status) = batched_pcg(&matrix, &blocks, &rhs, cfg.cg_tol, |n| cfg.maxiter(n));
    let primitives = segments
        .iter()
        .zip(systems)
        .zip(blocks.iter().zip(&status))
        .map(|((seg, sys), (range, st))| {
            if !st.converged {
                warn!(
                    "normal integration did not converge for segment at ({}, {}): residual {:e}",
                    seg.anchor().u,
                    seg.anchor().v,
                    st.relative_residual
                );
                return None;
            }
            let z = &x[range.clone()];
            let shift = z[sys.anchor];
            let mut out: Vec<f64> = z.iter().map(|v| v - shift).collect();
            out[sys.anchor] = 0.0;
            Some(SuperPrimitive {
                segment: seg.clone(),
                log_udepth: out,
            })
        })
        .collect();
    Integrated { primitives, status }
}

/// Integrates every segment against the same normal map.
pub fn integrate_batch(
    segments: &[Segment],
    normals: &ImageBuffer,
    intr: &Intrinsics,
    cfg: &IntegrationConfig,
) -> Integrated {
    let systems: Vec<NormalSystem> = segments
        .iter()
        .map(|s| assemble(s, normals, intr, cfg))
        .collect();
    solve_systems(segments, &systems, cfg)
}

/// Mean normal of a segment, normalised; `None` when it cancels out.
pub fn mean_normal(seg: &Segment, normals: &ImageBuffer) -> Option<[f64; 3]> {
    let mut m = [0.0; 3];
    for p in seg.pixels() {
        let n = normals.pixel(p.u as usize, p.v as usize);
        for k in 0..3 {
            m[k] += n[k];
        }
    }
    let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
    if len < 1e-9 * seg.area() as f64 {
        None
    } else {
        Some([m[0] / len, m[1] / len, m[2] / len])
    }
}

/// Constant-normal ablation output for one segment.
#[derive(Clone, Debug)]
pub struct FlattenedNormal {
    pub primitive: Option<SuperPrimitive>,
    /// Set when the mean normal vanished and constant depth was used.
    pub fell_back: bool,
}

/// Constant-normal ablation: integrates the segment's mean normal.
pub fn flatten_constant_normal(
    seg: &Segment,
    normals: &ImageBuffer,
    intr: &Intrinsics,
    cfg: &IntegrationConfig,
) -> FlattenedNormal {
    match mean_normal(seg, normals) {
        None => {
            warn!("mean normal vanishes; using constant depth");
            FlattenedNormal {
                primitive: Some(SuperPrimitive::flat(seg.clone())),
                fell_back: true,
            }
        }
        Some(n) => {
            let sys = assemble_with(seg, |_| n, intr, cfg);
            let out = solve_systems(std::slice::from_ref(seg), &[sys], cfg);
            FlattenedNormal {
                primitive: out.primitives.into_iter().next().flatten(),
                fell_back: false,
            }
        }
    }
}

/// Integrates all segments of `segments` under the given mode.
pub fn integrate_mode(
    segments: &[Segment],
    normals: &ImageBuffer,
    intr: &Intrinsics,
    mode: IntegrationMode,
    cfg: &IntegrationConfig,
) -> Integrated {
    match mode {
        IntegrationMode::Full => integrate_batch(segments, normals, intr, cfg),
        IntegrationMode::ConstDepth => Integrated {
            primitives: segments
                .iter()
                .map(|s| Some(SuperPrimitive::flat(s.clone())))
                .collect(),
            status: vec![
                BlockStatus {
                    converged: true,
                    iterations: 0,
                    relative_residual: 0.0,
                };
                segments.len()
            ],
        },
        IntegrationMode::ConstNormal => {
            let flat: Vec<Option<[f64; 3]>> =
                segments.iter().map(|s| mean_normal(s, normals)).collect();
            let systems: Vec<NormalSystem> = segments
                .iter()
                .zip(&flat)
                .map(|(s, n)| {
                    let n = n.unwrap_or([0.0, 0.0, -1.0]);
                    assemble_with(s, |_| n, intr, cfg)
                })
                .collect();
            let mut out = solve_systems(segments, &systems, cfg);
            for (p, n) in out.primitives.iter_mut().zip(&flat) {
                if n.is_none() {
                    if let Some(prim) = p {
                        *prim = flatten_constant_depth(prim);
                    }
                }
            }
            out
        }
    }
}

/// Integrates a bundle's own segments against its normal map.
pub fn integrate_bundle(
    bundle: &FrameBundle,
    mode: IntegrationMode,
    cfg: &IntegrationConfig,
) -> Integrated {
    integrate_mode(&bundle.segments, &bundle.normals, &bundle.intr, mode, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 31.5, 31.5, 64, 64).unwrap()
    }

    fn block(u0: u32, v0: u32, w: u32, h: u32) -> Segment {
        let px: Vec<Pixel> = (v0..v0 + h)
            .flat_map(|v| (u0..u0 + w).map(move |u| Pixel::new(u, v)))
            .collect();
        Segment::with_centroid_anchor(px).unwrap()
    }

    #[test]
    fn fronto_parallel_equations() {
        let normals = ImageBuffer::from_fn(64, 64, 3, |_, _, c| if c == 2 { -1.0 } else { 0.0 });
        let seg = block(0, 0, 64, 64);
        let sys = assemble(&seg, &normals, &cam(), &IntegrationConfig::default());
        assert_eq!(sys.equations.len(), 2 * 64 * 63);
        for e in &sys.equations {
            assert_eq!(e.coeff, -100.0);
            assert_eq!(e.rhs, 0.0);
        }
        let out = integrate_batch(&[seg], &normals, &cam(), &IntegrationConfig::default());
        let p = out.primitives[0].as_ref().unwrap();
        assert!(p.log_udepth().iter().all(|&z| z.abs() < 1e-8));
    }

    #[test]
    fn single_pixel_segment() {
        let normals = ImageBuffer::from_fn(4, 4, 3, |_, _, c| if c == 2 { -1.0 } else { 0.0 });
        let seg = block(1, 1, 1, 1);
        let k = Intrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let sys = assemble(&seg, &normals, &k, &IntegrationConfig::default());
        assert!(sys.equations.is_empty());
        let out = integrate_batch(&[seg], &normals, &k, &IntegrationConfig::default());
        assert_eq!(out.primitives[0].as_ref().unwrap().log_udepth(), &[0.0]);
    }

    #[test]
    fn grazing_coefficients_are_clamped() {
        // Normal perpendicular to the optical axis at the principal point.
        let normals = ImageBuffer::from_fn(3, 1, 3, |_, _, c| if c == 1 { -1.0 } else { 0.0 });
        let k = Intrinsics::new(50.0, 50.0, 1.0, 0.0, 3, 1).unwrap();
        let seg = block(0, 0, 3, 1);
        let sys = assemble(&seg, &normals, &k, &IntegrationConfig::default());
        assert!(sys.equations.iter().all(|e| e.coeff.abs() >= 0.5));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("full".parse::<IntegrationMode>().unwrap(), IntegrationMode::Full);
        assert_eq!(
            "const-normal".parse::<IntegrationMode>().unwrap(),
            IntegrationMode::ConstNormal
        );
        assert!("bogus".parse::<IntegrationMode>().is_err());
    }

    #[test]
    fn primitive_validation() {
        let seg = block(0, 0, 2, 2);
        assert!(SuperPrimitive::new(seg.clone(), vec![0.0; 3]).is_err());
        assert!(SuperPrimitive::new(seg.clone(), vec![0.1; 4]).is_err());
        let mut v = vec![0.3; 4];
        v[seg.anchor_position()] = 0.0;
        assert!(SuperPrimitive::new(seg, v).is_ok());
    }

    #[test]
    fn opposing_normals_fall_back_to_constant_depth() {
        let normals = ImageBuffer::from_fn(2, 1, 3, |u, _, c| match (u, c) {
            (0, 0) => 1.0,
            (1, 0) => -1.0,
            _ => 0.0,
        });
        let k = Intrinsics::new(10.0, 10.0, 0.5, 0.0, 2, 1).unwrap();
        let out = flatten_constant_normal(&block(0, 0, 2, 1), &normals, &k, &IntegrationConfig::default());
        assert!(out.fell_back);
        assert_eq!(out.primitive.unwrap().log_udepth(), &[0.0, 0.0]);
    }
}
