//! Joint photometric cost over posed frames and its coarse-to-fine Adam
//! minimisation.
//!
//! Poses are camera-to-world and are perturbed on the left,
//! `T <- exp(xi) T`. An [`Edge`] warps every primitive of its reference
//! frame into its target frame.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::{Matrix3, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Pixel;
use crate::geometry::{ImageBuffer, Intrinsics, Pose, PoseIncrement};

use super::{snap_to_domain, Loss, ScaledPrimitive, MIN_DEPTH};

const MAX_CHANNELS: usize = 4;

/// One camera in a joint problem.
#[derive(Clone, Debug)]
pub struct Frame {
    pub image: ImageBuffer,
    pub intr: Intrinsics,
    /// Camera-to-world.
    pub pose: Pose,
    pub pose_fixed: bool,
    /// Primitives anchored in this frame; empty for pose-only views.
    pub primitives: Vec<ScaledPrimitive>,
    pub scales_fixed: bool,
}

/// Warp the primitives of `reference` into `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub reference: usize,
    pub target: usize,
}

/// How primitive residuals are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Mean over active primitives per edge, summed over edges.
    #[default]
    MeanPerEdge,
    /// Plain sum over edges and primitives.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub levels: usize,
    pub iterations: usize,
    pub pose_step: f64,
    pub scale_step: f64,
    /// Learning rates decay geometrically within a level down to this
    /// fraction of their initial value.
    pub final_step_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub scale_penalty: f64,
    pub loss: Loss,
    pub min_valid_fraction: f64,
    pub normalization: Normalization,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: 200,
            pose_step: 1e-2,
            scale_step: 1e-2,
            final_step_ratio: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-12,
            scale_penalty: 1e-5,
            loss: Loss::default(),
            min_valid_fraction: 0.3,
            normalization: Normalization::MeanPerEdge,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointProblem {
    pub frames: Vec<Frame>,
    pub edges: Vec<Edge>,
    pub config: OptimizerConfig,
}

/// Optimisation variables.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub poses: Vec<Pose>,
    pub log_scales: Vec<Vec<f64>>,
}

/// Derivatives with respect to left pose increments and log-scales.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub poses: Vec<Vector6<f64>>,
    pub log_scales: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub cost: f64,
    pub photometric: f64,
    pub penalty: f64,
    /// Active primitives summed over edges.
    pub active: usize,
    /// Per edge, per reference primitive: residual or `None` if inactive.
    pub residuals: Vec<Vec<Option<f64>>>,
    /// Per edge, per reference primitive.
    pub valid_fraction: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct JointResult {
    pub state: State,
    /// Cost of the initial state at full resolution.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub evaluation: Evaluation,
    /// Per frame, per primitive: valid fraction averaged over the frame's
    /// outgoing edges.
    pub valid_fraction: Vec<Vec<f64>>,
}

/// A primitive resampled to one pyramid level.
#[derive(Clone, Debug, Default)]
struct LevelPrim {
    /// `exp(log_udepth) * K^-1 (u, v, 1)`.
    rays: Vec<Vector3<f64>>,
    /// Reference colours, `channels` per pixel.
    colors: Vec<f64>,
}

struct Level {
    images: Vec<ImageBuffer>,
    intr: Vec<Intrinsics>,
    prims: Vec<Vec<LevelPrim>>,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    loss: f64,
    valid: usize,
    total: usize,
    g_scale: f64,
    b: Vector3<f64>,
    wxb: Vector3<f64>,
}

impl JointProblem {
    pub fn initial_state(&self) -> State {
        State {
            poses: self.frames.iter().map(|f| f.pose).collect(),
            log_scales: self
                .frames
                .iter()
                .map(|f| f.primitives.iter().map(|p| p.log_scale).collect())
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.edges.is_empty() {
            return Err(Error::Degenerate("no edges".into()));
        }
        for e in &self.edges {
            if e.reference >= self.frames.len() || e.target >= self.frames.len() {
                return Err(Error::Precondition(format!("edge {e:?} out of range")));
            }
            if e.reference == e.target {
                return Err(Error::Precondition(format!("edge {e:?} is a self-loop")));
            }
        }
        for f in &self.frames {
            let ch = f.image.channels();
            if ch == 0 || ch > MAX_CHANNELS {
                return Err(Error::Precondition(format!("{ch} image channels")));
            }
            if f.image.width() != f.intr.width || f.image.height() != f.intr.height {
                return Err(Error::Precondition("image and intrinsics disagree".into()));
            }
            if ch != self.frames[0].image.channels() {
                return Err(Error::Precondition("mixed channel counts".into()));
            }
        }
        Ok(())
    }

    /// Usable pyramid depth given the image sizes.
    fn levels(&self) -> usize {
        let min_side = self
            .frames
            .iter()
            .map(|f| f.intr.width.min(f.intr.height))
            .min()
            .unwrap_or(1);
        let mut n = 1;
        while n < self.config.levels.max(1) && (min_side >> n) >= 8 {
            n += 1;
        }
        n
    }

    fn build_levels(&self, count: usize) -> Vec<Level> {
        let mut out: Vec<Level> = Vec::with_capacity(count);
        // Pixel lists and log-depths per primitive at the current level.
        let mut cur: Vec<Vec<(Vec<Pixel>, Vec<f64>)>> = self
            .frames
            .iter()
            .map(|f| {
                f.primitives
                    .iter()
                    .map(|p| (p.prim.pixels().to_vec(), p.prim.log_udepth().to_vec()))
                    .collect()
            })
            .collect();
        let mut images: Vec<ImageBuffer> = self.frames.iter().map(|f| f.image.clone()).collect();
        let mut intr: Vec<Intrinsics> = self.frames.iter().map(|f| f.intr).collect();
        for level in 0..count {
            if level > 0 {
                images = images.iter().map(|i| i.downsample()).collect();
                intr = intr.iter().map(|k| k.downscaled(1)).collect();
                cur = cur
                    .into_iter()
                    .map(|ps| ps.into_iter().map(|(px, z)| coarsen(&px, &z)).collect())
                    .collect();
            }
            let prims = cur
                .iter()
                .enumerate()
                .map(|(fi, ps)| {
                    ps.iter()
                        .map(|(px, z)| {
                            let k = &intr[fi];
                            let img = &images[fi];
                            let ch = img.channels();
                            let mut colors = Vec::with_capacity(px.len() * ch);
                            let rays = px
                                .iter()
                                .zip(z)
                                .map(|(p, z)| {
                                    colors.extend_from_slice(img.pixel(p.u as usize, p.v as usize));
                                    z.exp() * k.ray(p.u as f64, p.v as f64)
                                })
                                .collect();
                            LevelPrim { rays, colors }
                        })
                        .collect()
                })
                .collect();
            out.push(Level {
                images: images.clone(),
                intr: intr.clone(),
                prims,
            });
        }
        out
    }

    /// Cost at full resolution, with the gradient when `with_gradient`.
    pub fn evaluate(&self, state: &State, with_gradient: bool) -> Result<(Evaluation, Option<Gradient>)> {
        self.validate()?;
        let levels = self.build_levels(1);
        Ok(self.evaluate_level(&levels[0], state, with_gradient))
    }

    fn evaluate_level(
        &self,
        level: &Level,
        state: &State,
        with_gradient: bool,
    ) -> (Evaluation, Option<Gradient>) {
        let cfg = &self.config;
        let mut grad = with_gradient.then(|| Gradient {
            poses: vec![Vector6::zeros(); self.frames.len()],
            log_scales: state.log_scales.iter().map(|s| vec![0.0; s.len()]).collect(),
        });
        let mut photometric = 0.0;
        let mut active = 0;
        let mut residuals = Vec::with_capacity(self.edges.len());
        let mut fractions = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let (r, t) = (e.reference, e.target);
            let pose_grad = with_gradient && (!self.frames[r].pose_fixed || !self.frames[t].pose_fixed);
            let scale_grad = with_gradient && !self.frames[r].scales_fixed;
            let accs: Vec<Acc> = level.prims[r]
                .par_iter()
                .zip(state.log_scales[r].par_iter())
                .map(|(lp, &ls)| {
                    accumulate(
                        lp,
                        ls,
                        &state.poses[r],
                        &state.poses[t],
                        &level.images[t],
                        &level.intr[t],
                        cfg.loss,
                        pose_grad,
                        scale_grad,
                    )
                })
                .collect();
            let is_active = |a: &Acc| {
                a.total > 0 && a.valid > 0 && a.valid as f64 >= cfg.min_valid_fraction * a.total as f64
            };
            let n_active = accs.iter().filter(|a| is_active(a)).count();
            active += n_active;
            let edge_weight = match cfg.normalization {
                Normalization::MeanPerEdge if n_active > 0 => 1.0 / n_active as f64,
                Normalization::MeanPerEdge => 0.0,
                Normalization::Sum => 1.0,
            };
            let mut res = Vec::with_capacity(accs.len());
            let mut fr = Vec::with_capacity(accs.len());
            for (i, a) in accs.iter().enumerate() {
                fr.push(if a.total > 0 { a.valid as f64 / a.total as f64 } else { 0.0 });
                if !is_active(a) {
                    res.push(None);
                    continue;
                }
                let inv = 1.0 / a.valid as f64;
                res.push(Some(a.loss * inv));
                let w = edge_weight * inv;
                photometric += w * a.loss;
                if let Some(g) = grad.as_mut() {
                    if scale_grad {
                        g.log_scales[r][i] += w * a.g_scale;
                    }
                    if pose_grad {
                        let d = Vector6::new(a.b.x, a.b.y, a.b.z, a.wxb.x, a.wxb.y, a.wxb.z) * w;
                        g.poses[r] += d;
                        g.poses[t] -= d;
                    }
                }
            }
            residuals.push(res);
            fractions.push(fr);
        }
        let mut penalty = 0.0;
        for (fi, f) in self.frames.iter().enumerate() {
            if f.scales_fixed {
                continue;
            }
            for (i, p) in f.primitives.iter().enumerate() {
                let d = state.log_scales[fi][i] - p.log_scale;
                penalty += cfg.scale_penalty * d * d;
                if let Some(g) = grad.as_mut() {
                    g.log_scales[fi][i] += 2.0 * cfg.scale_penalty * d;
                }
            }
        }
        if let Some(g) = grad.as_mut() {
            for (fi, f) in self.frames.iter().enumerate() {
                if f.pose_fixed {
                    g.poses[fi] = Vector6::zeros();
                }
                if f.scales_fixed {
                    g.log_scales[fi].iter_mut().for_each(|x| *x = 0.0);
                }
            }
        }
        (
            Evaluation {
                cost: photometric + penalty,
                photometric,
                penalty,
                active,
                residuals,
                valid_fraction: fractions,
            },
            grad,
        )
    }
}

/// Halves a pixel list: a coarse pixel is kept when at least two of its
/// four children are present; its log-depth is the children's mean.
fn coarsen(pixels: &[Pixel], z: &[f64]) -> (Vec<Pixel>, Vec<f64>) {
    let mut acc: BTreeMap<Pixel, (usize, f64)> = BTreeMap::new();
    for (p, &z) in pixels.iter().zip(z) {
        let e = acc.entry(Pixel::new(p.u / 2, p.v / 2)).or_default();
        e.0 += 1;
        e.1 += z;
    }
    acc.into_iter()
        .filter(|(_, (n, _))| *n >= 2)
        .map(|(p, (n, s))| (p, s / n as f64))
        .unzip()
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate(
    lp: &LevelPrim,
    log_scale: f64,
    pose_r: &Pose,
    pose_t: &Pose,
    image: &ImageBuffer,
    intr: &Intrinsics,
    loss: Loss,
    pose_grad: bool,
    scale_grad: bool,
) -> Acc {
    let rr: &Matrix3<f64> = pose_r.rotation();
    let rt: &Matrix3<f64> = pose_t.rotation();
    let r_tr = rt.transpose() * rr;
    let t_tr = rt.transpose() * (pose_r.translation() - pose_t.translation());
    let s = log_scale.exp();
    let ch = image.channels();
    let (fu, fv, cu, cv) = (intr.fu, intr.fv, intr.cu, intr.cv);
    let mut val = [0.0; MAX_CHANNELS];
    let mut du = [0.0; MAX_CHANNELS];
    let mut dv = [0.0; MAX_CHANNELS];
    let (umax, vmax) = ((image.width() - 1) as f64, (image.height() - 1) as f64);
    let mut acc = Acc {
        total: lp.rays.len(),
        ..Acc::default()
    };
    let grad = pose_grad || scale_grad;
    for (k, ray) in lp.rays.iter().enumerate() {
        let x = ray * s;
        let rx = r_tr * x;
        let y = rx + t_tr;
        if y.z <= MIN_DEPTH {
            continue;
        }
        let iz = 1.0 / y.z;
        let (Some(pu), Some(pv)) = (
            snap_to_domain(fu * y.x * iz + cu, umax),
            snap_to_domain(fv * y.y * iz + cv, vmax),
        ) else {
            continue;
        };
        if !image.sample_with_gradient(pu, pv, &mut val[..ch], &mut du[..ch], &mut dv[..ch]) {
            continue;
        }
        acc.valid += 1;
        let col = &lp.colors[k * ch..(k + 1) * ch];
        let (mut gu, mut gv) = (0.0, 0.0);
        for c in 0..ch {
            let e = val[c] - col[c];
            acc.loss += loss.value(e);
            if grad {
                let d = loss.derivative(e);
                gu += d * du[c];
                gv += d * dv[c];
            }
        }
        if !grad {
            continue;
        }
        // dL/dY through the projection.
        let a = Vector3::new(
            gu * fu * iz,
            gv * fv * iz,
            -(gu * fu * y.x + gv * fv * y.y) * iz * iz,
        );
        if scale_grad {
            acc.g_scale += a.dot(&rx);
        }
        if pose_grad {
            let w = rr * x + pose_r.translation();
            let b = rt * a;
            acc.b += b;
            acc.wxb += w.cross(&b);
        }
    }
    acc
}

/// Adam moments for one level.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, g: &[f64], lr: &[f64], cfg: &OptimizerConfig) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        g.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                -lr[i] * mh / (vh.sqrt() + cfg.adam_eps)
            })
            .collect()
    }
}

/// Which entries of a [`State`] are free, in a flat order.
struct Layout {
    poses: Vec<usize>,
    scales: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(p: &JointProblem) -> Self {
        let poses = p
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.pose_fixed)
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        let scales = p
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.scales_fixed && !f.primitives.is_empty())
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        let len = 6 * poses.len() + scales.iter().map(|&i| p.frames[i].primitives.len()).sum::<usize>();
        Self { poses, scales, len }
    }

    fn flatten(&self, g: &Gradient) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for &i in &self.poses {
            out.extend(g.poses[i].iter());
        }
        for &i in &self.scales {
            out.extend(&g.log_scales[i]);
        }
        out
    }

    fn rates(&self, p: &JointProblem, factor: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for _ in &self.poses {
            out.extend([p.config.pose_step * factor; 6]);
        }
        for &i in &self.scales {
            out.extend(std::iter::repeat(p.config.scale_step * factor).take(p.frames[i].primitives.len()));
        }
        out
    }

    fn apply(&self, state: &mut State, delta: &[f64]) {
        let mut k = 0;
        for &i in &self.poses {
            let xi = PoseIncrement(Vector6::from_column_slice(&delta[k..k + 6]));
            state.poses[i] = state.poses[i].retract(&xi);
            k += 6;
        }
        for &i in &self.scales {
            for s in state.log_scales[i].iter_mut() {
                *s += delta[k];
                k += 1;
            }
        }
    }
}

fn check_finite(ev: &Evaluation, level: usize, iteration: usize) -> Result<()> {
    if ev.cost.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "cost {} at level {level}, iteration {iteration}",
            ev.cost
        )))
    }
}

/// Coarse-to-fine Adam over all free poses and log-scales.
///
/// The returned state is the lowest-cost full-resolution state seen,
/// including the initial one, among states that keep at least half of the
/// initially active primitives.
pub fn optimize(problem: &JointProblem) -> Result<JointResult> {
    problem.validate()?;
    let cfg = &problem.config;
    let n_levels = problem.levels();
    let levels = problem.build_levels(n_levels);
    let layout = Layout::new(problem);
    let init = problem.initial_state();

    let (ev0, _) = problem.evaluate_level(&levels[0], &init, false);
    check_finite(&ev0, 0, 0)?;
    let (coarse0, _) = problem.evaluate_level(&levels[n_levels - 1], &init, false);
    if coarse0.active == 0 {
        return Err(Error::Degenerate(
            "no active primitive at the coarsest level".into(),
        ));
    }
    let min_active = ev0.active.div_ceil(2);
    let mut best = (ev0.cost, init.clone(), ev0.clone());
    let initial_cost = ev0.cost;

    let mut state = init;
    let iters = cfg.iterations;
    if layout.len > 0 {
        for level in (0..n_levels).rev() {
            let mut adam = Adam::new(layout.len);
            for it in 0..iters {
                let (ev, grad) = problem.evaluate_level(&levels[level], &state, true);
                check_finite(&ev, level, it)?;
                if level == 0 && ev.active >= min_active && ev.cost < best.0 {
                    best = (ev.cost, state.clone(), ev.clone());
                }
                let frac = if iters > 1 { it as f64 / (iters - 1) as f64 } else { 0.0 };
                let lr = layout.rates(problem, cfg.final_step_ratio.powf(frac));
                let g = layout.flatten(&grad.expect("gradient requested"));
                let delta = adam.step(&g, &lr, cfg);
                layout.apply(&mut state, &delta);
            }
            debug!("level {level} done");
        }
        let (ev, _) = problem.evaluate_level(&levels[0], &state, false);
        check_finite(&ev, 0, iters)?;
        if ev.active >= min_active && ev.cost < best.0 {
            best = (ev.cost, state, ev);
        }
    }
    let (final_cost, state, evaluation) = best;
    let valid_fraction = per_frame_fraction(problem, &evaluation);
    Ok(JointResult {
        state,
        initial_cost,
        final_cost,
        evaluation,
        valid_fraction,
    })
}

fn per_frame_fraction(problem: &JointProblem, ev: &Evaluation) -> Vec<Vec<f64>> {
    let mut sum: Vec<Vec<f64>> = problem
        .frames
        .iter()
        .map(|f| vec![0.0; f.primitives.len()])
        .collect();
    let mut count = vec![0usize; problem.frames.len()];
    for (e, fr) in problem.edges.iter().zip(&ev.valid_fraction) {
        count[e.reference] += 1;
        for (s, f) in sum[e.reference].iter_mut().zip(fr) {
            *s += f;
        }
    }
    for (s, &n) in sum.iter_mut().zip(&count) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarsening_keeps_majority_pixels() {
        let px = vec![
            Pixel::new(0, 0),
            Pixel::new(1, 0),
            Pixel::new(2, 0),
            Pixel::new(0, 1),
        ];
        let (c, z) = coarsen(&px, &[1.0, 2.0, 5.0, 3.0]);
        assert_eq!(c, vec![Pixel::new(0, 0)]);
        assert_eq!(z, vec![2.0]);
    }

    #[test]
    fn adam_first_step_has_learning_rate_size() {
        let cfg = OptimizerConfig::default();
        let mut a = Adam::new(2);
        let d = a.step(&[3.0, -1e-4], &[0.1, 0.1], &cfg);
        assert!((d[0] + 0.1).abs() < 1e-6);
        assert!((d[1] - 0.1).abs() < 1e-6);
    }
}
