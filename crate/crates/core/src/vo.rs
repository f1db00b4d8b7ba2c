//! Keyframe-based monocular visual odometry over primitives.
//!
//! Tracking estimates each incoming frame's pose against the latest
//! keyframe with the keyframe's primitives frozen. When the motion since
//! that keyframe is large enough the frame becomes a keyframe: its
//! primitives are integrated and their scales fitted to the previous
//! keyframe's geometry rendered into it. Mapping then refines all window
//! poses and scales jointly, together with a few tracked frames per
//! keyframe whose poses only are estimated.

use std::collections::VecDeque;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::alignment::{
    fuse, optimize, warp_primitive, Edge, Frame, JointProblem, Normalization, OptimizerConfig,
    ScaledPrimitive,
};
use crate::completion::{fit_scale, render_depth, ScaleFit, SparseDepth};
use crate::error::{Error, Result};
use crate::eval::lower_median;
use crate::frontend::FrameBundle;
use crate::geometry::{ImageBuffer, Intrinsics, PointCloud, Pose};
use crate::integration::{integrate_bundle, IntegrationConfig, IntegrationMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoConfig {
    pub window_size: usize,
    /// Tracked frames per keyframe used as pose-only views in mapping.
    pub supplementary_views: usize,
    pub keyframe_displacement_px: f64,
    pub keyframe_rotation_deg: f64,
    /// Spawn a keyframe at least every this many frames.
    pub keyframe_interval: usize,
    /// Tracking is lost below this fraction of active keyframe primitives.
    pub min_active_fraction: f64,
    /// Tracking is lost on images whose mean absolute neighbour difference
    /// is below this.
    pub min_texture: f64,
    /// Keep the oldest window keyframe's pose fixed during mapping.
    pub fix_oldest_pose: bool,
    pub reinit_fit: ScaleFit,
    pub mode: IntegrationMode,
    pub integration: IntegrationConfig,
    pub init: OptimizerConfig,
    pub tracking: OptimizerConfig,
    pub mapping: OptimizerConfig,
}

impl Default for VoConfig {
    fn default() -> Self {
        Self {
            window_size: 5,
            supplementary_views: 4,
            keyframe_displacement_px: 20.0,
            keyframe_rotation_deg: 10.0,
            keyframe_interval: 30,
            min_active_fraction: 0.3,
            min_texture: 1e-3,
            fix_oldest_pose: true,
            reinit_fit: ScaleFit::LeastSquares,
            mode: IntegrationMode::Full,
            integration: IntegrationConfig::default(),
            init: OptimizerConfig::default(),
            tracking: OptimizerConfig {
                iterations: 100,
                ..OptimizerConfig::default()
            },
            mapping: OptimizerConfig {
                iterations: 100,
                normalization: Normalization::Sum,
                ..OptimizerConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Keyframe {
    /// Index of the frame in the input sequence.
    pub id: usize,
    pub timestamp: f64,
    pub image: ImageBuffer,
    pub intr: Intrinsics,
    /// Camera-to-world.
    pub pose: Pose,
    pub primitives: Vec<ScaledPrimitive>,
}

impl Keyframe {
    /// Camera-frame point cloud coloured from the image.
    pub fn cloud(&self) -> PointCloud {
        fuse(&self.primitives, &self.intr, Some(&self.image))
    }

    pub fn world_cloud(&self) -> PointCloud {
        self.cloud().transformed(&self.pose)
    }
}

/// A tracked non-keyframe frame.
#[derive(Clone, Debug)]
pub struct TrackedView {
    pub id: usize,
    pub timestamp: f64,
    pub image: ImageBuffer,
    pub intr: Intrinsics,
    pub pose: Pose,
}

#[derive(Clone, Debug)]
pub struct WindowState {
    pub keyframes: VecDeque<Keyframe>,
    /// Per keyframe, the frames tracked against it.
    pub tracked: VecDeque<Vec<TrackedView>>,
    pub max_len: usize,
    /// Id of the first keyframe of the whole run.
    pub first_id: usize,
}

impl WindowState {
    pub fn new(first: Keyframe, max_len: usize) -> Self {
        let first_id = first.id;
        Self {
            keyframes: VecDeque::from([first]),
            tracked: VecDeque::from([Vec::new()]),
            max_len: max_len.max(2),
            first_id,
        }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn latest(&self) -> &Keyframe {
        self.keyframes.back().expect("window is never empty")
    }

    /// Appends a keyframe, returning the evicted oldest one on overflow.
    pub fn push(&mut self, kf: Keyframe) -> Option<Keyframe> {
        self.keyframes.push_back(kf);
        self.tracked.push_back(Vec::new());
        if self.keyframes.len() > self.max_len {
            self.tracked.pop_front();
            self.keyframes.pop_front()
        } else {
            None
        }
    }

    /// Up to `n` tracked views of keyframe `i`, evenly spread, always
    /// including the most recent one.
    pub fn supplementary(&self, i: usize, n: usize) -> Vec<&TrackedView> {
        let views = &self.tracked[i];
        if views.len() <= n {
            return views.iter().collect();
        }
        if n == 0 {
            return Vec::new();
        }
        if n == 1 {
            return vec![&views[views.len() - 1]];
        }
        let m = views.len();
        (0..n).map(|k| &views[(k * (m - 1) + (n - 1) / 2) / (n - 1)]).collect()
    }
}

fn texture_level(img: &ImageBuffer) -> f64 {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let d = img.data();
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in 0..h {
        for u in 0..w.saturating_sub(1) {
            for c in 0..ch {
                let i = (v * w + u) * ch + c;
                sum += (d[i + ch] - d[i]).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug)]
pub struct TrackResult {
    /// Camera-to-world.
    pub pose: Pose,
    pub cost: f64,
    /// Fraction of keyframe primitives active at the final pose.
    pub active_fraction: f64,
    /// Mean pixel displacement of keyframe primitives under the relative
    /// pose.
    pub displacement: f64,
    /// Rotation angle relative to the keyframe, degrees.
    pub rotation_deg: f64,
}

/// Pose-only alignment of `image` against the latest keyframe, starting
/// from `init` (camera-to-world).
pub fn track(window: &WindowState, image: &ImageBuffer, intr: &Intrinsics, init: &Pose, cfg: &VoConfig) -> Result<TrackResult> {
    if texture_level(image) < cfg.min_texture {
        return Err(Error::TrackingLost("incoming frame has no texture".into()));
    }
    let kf = window.latest();
    let problem = JointProblem {
        frames: vec![
            Frame {
                image: kf.image.clone(),
                intr: kf.intr,
                pose: kf.pose,
                pose_fixed: true,
                primitives: kf.primitives.clone(),
                scales_fixed: true,
            },
            Frame {
                image: image.clone(),
                intr: *intr,
                pose: *init,
                pose_fixed: false,
                primitives: Vec::new(),
                scales_fixed: true,
            },
        ],
        edges: vec![Edge {
            reference: 0,
            target: 1,
        }],
        config: cfg.tracking,
    };
    let res = optimize(&problem).map_err(|e| match e {
        Error::NonFinite(m) | Error::Degenerate(m) => Error::TrackingLost(m),
        e => e,
    })?;
    let n = kf.primitives.len().max(1);
    let active_fraction = res.evaluation.active as f64 / n as f64;
    if active_fraction < cfg.min_active_fraction {
        return Err(Error::TrackingLost(format!(
            "only {:.0}% of keyframe primitives remain valid",
            100.0 * active_fraction
        )));
    }
    let pose = res.state.poses[1];
    let rel = pose.inverse() * kf.pose;
    let (mut sum, mut cnt) = (0.0, 0usize);
    for sp in &kf.primitives {
        for (p, w) in sp.prim.pixels().iter().zip(warp_primitive(sp, &rel, &kf.intr, intr)) {
            if let Some(w) = w {
                sum += ((w.x - p.u as f64).powi(2) + (w.y - p.v as f64).powi(2)).sqrt();
                cnt += 1;
            }
        }
    }
    Ok(TrackResult {
        pose,
        cost: res.final_cost,
        active_fraction,
        displacement: if cnt > 0 { sum / cnt as f64 } else { f64::INFINITY },
        rotation_deg: rel.angle().to_degrees(),
    })
}

/// Builds a keyframe from `bundle` at `pose`, fitting its primitive scales
/// to `previous`'s geometry rendered into the new view. Primitives without
/// rendered support take the median fitted log-scale.
pub fn spawn_keyframe(previous: &Keyframe, bundle: &FrameBundle, id: usize, pose: Pose, cfg: &VoConfig) -> Result<Keyframe> {
    let prims = integrate_bundle(bundle, cfg.mode, &cfg.integration).into_successful();
    if prims.is_empty() {
        return Err(Error::KeyframeRejected("frame has no primitive".into()));
    }
    let cam_from_prev = pose.inverse() * previous.pose;
    let rendered = render_depth(&previous.cloud(), &bundle.intr, &cam_from_prev);
    let support = SparseDepth::from_dense(&rendered.depth);
    let fitted: Vec<Option<f64>> = prims
        .iter()
        .map(|p| fit_scale(p, &support, cfg.reinit_fit))
        .collect();
    let mut ok: Vec<f64> = fitted.iter().flatten().copied().collect();
    let median = lower_median(&mut ok)
        .ok_or_else(|| Error::KeyframeRejected("no overlap with the previous keyframe".into()))?;
    let primitives = prims
        .into_iter()
        .zip(fitted)
        .map(|(p, s)| ScaledPrimitive::new(p, s.unwrap_or(median)))
        .collect();
    Ok(Keyframe {
        id,
        timestamp: bundle.timestamp,
        image: bundle.image.clone(),
        intr: bundle.intr,
        pose,
        primitives,
    })
}

/// Two-view start: `b0` is the fixed reference at identity, `b1` is
/// aligned to it, then made a keyframe re-initialised from `b0`.
pub fn initialize(b0: &FrameBundle, b1: &FrameBundle, cfg: &VoConfig) -> Result<WindowState> {
    let out = crate::alignment::sfm_from_bundles(b0, std::slice::from_ref(b1), cfg.mode, &cfg.integration, &cfg.init)?;
    let kf0 = Keyframe {
        id: 0,
        timestamp: b0.timestamp,
        image: b0.image.clone(),
        intr: b0.intr,
        pose: Pose::identity(),
        primitives: out.primitives,
    };
    let kf1 = spawn_keyframe(&kf0, b1, 1, out.result.poses[0], cfg)?;
    let mut w = WindowState::new(kf0, cfg.window_size);
    w.push(kf1);
    Ok(w)
}

#[derive(Clone, Debug)]
pub struct MapReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Updated poses of the supplementary views, by frame id.
    pub view_poses: Vec<(usize, Pose)>,
}

/// Joint refinement of the window. On error the window is left untouched.
pub fn map_window(window: &mut WindowState, cfg: &VoConfig) -> Result<MapReport> {
    let n = window.len();
    if n < 2 {
        return Err(Error::Precondition("mapping needs at least two keyframes".into()));
    }
    let mut frames = Vec::new();
    for (i, kf) in window.keyframes.iter().enumerate() {
        frames.push(Frame {
            image: kf.image.clone(),
            intr: kf.intr,
            pose: kf.pose,
            pose_fixed: kf.id == window.first_id || (cfg.fix_oldest_pose && i == 0),
            primitives: kf.primitives.clone(),
            scales_fixed: false,
        });
    }
    let mut edges = Vec::new();
    let mut views = Vec::new();
    for i in 0..n {
        if i > 0 {
            edges.push(Edge {
                reference: i,
                target: i - 1,
            });
        }
        if i + 1 < n {
            edges.push(Edge {
                reference: i,
                target: i + 1,
            });
        }
        for v in window.supplementary(i, cfg.supplementary_views) {
            edges.push(Edge {
                reference: i,
                target: frames.len(),
            });
            views.push(v.id);
            frames.push(Frame {
                image: v.image.clone(),
                intr: v.intr,
                pose: v.pose,
                pose_fixed: false,
                primitives: Vec::new(),
                scales_fixed: true,
            });
        }
    }
    let problem = JointProblem {
        frames,
        edges,
        config: cfg.mapping,
    };
    let res = optimize(&problem)?;
    if res.state.poses.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("mapping produced a non-finite pose".into()));
    }
    for (i, kf) in window.keyframes.iter_mut().enumerate() {
        kf.pose = res.state.poses[i];
        for (sp, &s) in kf.primitives.iter_mut().zip(&res.state.log_scales[i]) {
            sp.log_scale = s;
        }
    }
    let view_poses: Vec<(usize, Pose)> = views
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, res.state.poses[n + k]))
        .collect();
    for list in window.tracked.iter_mut() {
        for v in list.iter_mut() {
            if let Some((_, p)) = view_poses.iter().find(|(id, _)| *id == v.id) {
                v.pose = *p;
            }
        }
    }
    Ok(MapReport {
        initial_cost: res.initial_cost,
        final_cost: res.final_cost,
        view_poses,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameLog {
    pub frame: usize,
    pub cost: f64,
    pub valid_fraction: f64,
    pub keyframe: bool,
    pub mapping_cost: Option<f64>,
}

impl FrameLog {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "frame={} cost={:.6e} valid={:.4} keyframe={}",
            self.frame,
            self.cost,
            self.valid_fraction,
            u8::from(self.keyframe)
        );
        if let Some(m) = self.mapping_cost {
            s.push_str(&format!(" mapping_cost={m:.6e}"));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct VoOutput {
    /// Camera-to-world poses of the processed frames, in input order.
    pub poses: Vec<(f64, Pose)>,
    /// Index of the frame at which tracking was lost.
    pub lost_at: Option<usize>,
    /// World-frame clouds of every keyframe, by frame id.
    pub keyframe_clouds: Vec<(usize, PointCloud)>,
    pub keyframe_ids: Vec<usize>,
    pub log: Vec<FrameLog>,
}

/// Per-frame bookkeeping: the keyframe it was tracked against and its pose
/// relative to that keyframe.
#[derive(Clone, Copy)]
struct Anchor {
    kf: usize,
    rel: Pose,
}

fn absolute(anchor: &Anchor, kf_poses: &[(usize, Pose)]) -> Pose {
    let kf = kf_poses
        .iter()
        .find(|(id, _)| *id == anchor.kf)
        .map(|(_, p)| *p)
        .expect("keyframe pose recorded");
    kf * anchor.rel
}

/// Runs the full pipeline; `observe` sees the window after every frame.
pub fn run_vo_with(
    frames: &[FrameBundle],
    cfg: &VoConfig,
    mut observe: impl FnMut(usize, &WindowState),
) -> Result<VoOutput> {
    if frames.len() < 2 {
        return Err(Error::Precondition("visual odometry needs at least two frames".into()));
    }
    let mut window = initialize(&frames[0], &frames[1], cfg)?;
    let mut kf_poses: Vec<(usize, Pose)> = Vec::new();
    let mut anchors: Vec<Anchor> = Vec::new();
    let mut clouds: Vec<(usize, PointCloud)> = Vec::new();
    let mut log = Vec::new();
    let mut lost_at = None;

    let sync = |window: &WindowState, kf_poses: &mut Vec<(usize, Pose)>, anchors: &mut Vec<Anchor>| {
        for kf in &window.keyframes {
            match kf_poses.iter_mut().find(|(id, _)| *id == kf.id) {
                Some(e) => e.1 = kf.pose,
                None => kf_poses.push((kf.id, kf.pose)),
            }
        }
        for (list, kf) in window.tracked.iter().zip(&window.keyframes) {
            for v in list {
                anchors[v.id] = Anchor {
                    kf: kf.id,
                    rel: kf.pose.inverse() * v.pose,
                };
            }
        }
    };

    anchors.push(Anchor { kf: 0, rel: Pose::identity() });
    anchors.push(Anchor { kf: 1, rel: Pose::identity() });
    let first_map = map_window(&mut window, cfg);
    let mapping_cost = match first_map {
        Ok(r) => Some(r.final_cost),
        Err(e) => {
            warn!("initial mapping failed: {e}");
            None
        }
    };
    sync(&window, &mut kf_poses, &mut anchors);
    log.push(FrameLog {
        frame: 0,
        cost: 0.0,
        valid_fraction: 1.0,
        keyframe: true,
        mapping_cost: None,
    });
    log.push(FrameLog {
        frame: 1,
        cost: 0.0,
        valid_fraction: 1.0,
        keyframe: true,
        mapping_cost,
    });
    observe(0, &window);
    observe(1, &window);

    let mut last = window.latest().pose;
    let mut prev_pose = Pose::identity();
    let mut since_kf = 0usize;
    for (fi, bundle) in frames.iter().enumerate().skip(2) {
        // Constant velocity: reapply the last frame-to-frame motion.
        let velocity = prev_pose.inverse() * last;
        let init = last * velocity;
        let tracked = match track(&window, &bundle.image, &bundle.intr, &init, cfg) {
            Ok(t) => t,
            Err(Error::TrackingLost(m)) => {
                warn!("tracking lost at frame {fi}: {m}");
                lost_at = Some(fi);
                break;
            }
            Err(e) => return Err(e),
        };
        since_kf += 1;
        let latest_id = window.latest().id;
        let trigger = tracked.displacement > cfg.keyframe_displacement_px
            || tracked.rotation_deg > cfg.keyframe_rotation_deg
            || since_kf >= cfg.keyframe_interval;
        let mut entry = FrameLog {
            frame: fi,
            cost: tracked.cost,
            valid_fraction: tracked.active_fraction,
            keyframe: false,
            mapping_cost: None,
        };
        anchors.push(Anchor {
            kf: latest_id,
            rel: window.latest().pose.inverse() * tracked.pose,
        });
        let mut spawned = false;
        if trigger {
            match spawn_keyframe(window.latest(), bundle, fi, tracked.pose, cfg) {
                Ok(kf) => {
                    if let Some(old) = window.push(kf) {
                        clouds.push((old.id, old.world_cloud()));
                    }
                    anchors[fi] = Anchor {
                        kf: fi,
                        rel: Pose::identity(),
                    };
                    spawned = true;
                    since_kf = 0;
                    entry.keyframe = true;
                    match map_window(&mut window, cfg) {
                        Ok(r) => entry.mapping_cost = Some(r.final_cost),
                        Err(e) => warn!("mapping failed at frame {fi}: {e}"),
                    }
                }
                Err(Error::KeyframeRejected(m)) => warn!("keyframe rejected at frame {fi}: {m}"),
                Err(e) => return Err(e),
            }
        }
        if !spawned {
            let n = window.len();
            window.tracked[n - 1].push(TrackedView {
                id: fi,
                timestamp: bundle.timestamp,
                image: bundle.image.clone(),
                intr: bundle.intr,
                pose: tracked.pose,
            });
        }
        sync(&window, &mut kf_poses, &mut anchors);
        info!("{}", entry.to_line());
        log.push(entry);
        observe(fi, &window);
        prev_pose = last;
        last = absolute(&anchors[fi], &kf_poses);
    }
    for kf in &window.keyframes {
        clouds.push((kf.id, kf.world_cloud()));
    }
    clouds.sort_by_key(|(id, _)| *id);
    let mut keyframe_ids: Vec<usize> = kf_poses.iter().map(|(id, _)| *id).collect();
    keyframe_ids.sort_unstable();
    let poses = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| (frames[i].timestamp, absolute(a, &kf_poses)))
        .collect();
    Ok(VoOutput {
        poses,
        lost_at,
        keyframe_clouds: clouds,
        keyframe_ids,
        log,
    })
}

pub fn run_vo(frames: &[FrameBundle], cfg: &VoConfig) -> Result<VoOutput> {
    run_vo_with(frames, cfg, |_, _| {})
}
