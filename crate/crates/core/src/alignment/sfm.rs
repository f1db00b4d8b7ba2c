//! Reference-plus-targets alignment: two-view and few-view structure from
//! motion.

use crate::error::{Error, Result};
use crate::frontend::FrameBundle;
use crate::geometry::{ImageBuffer, Intrinsics, Pose};
use crate::integration::{integrate_bundle, IntegrationConfig, IntegrationMode};

use super::joint::{optimize, Edge, Frame, JointProblem, OptimizerConfig};
use super::ScaledPrimitive;

/// A view the reference primitives are warped into.
#[derive(Clone, Debug)]
pub struct Target {
    pub image: ImageBuffer,
    pub intr: Intrinsics,
    /// Target camera-to-reference camera.
    pub pose: Pose,
    pub fixed: bool,
}

#[derive(Clone, Debug)]
pub struct AlignmentProblem {
    pub image: ImageBuffer,
    pub intr: Intrinsics,
    pub primitives: Vec<ScaledPrimitive>,
    pub targets: Vec<Target>,
    pub config: OptimizerConfig,
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub log_scales: Vec<f64>,
    /// Target camera-to-reference camera, in input order.
    pub poses: Vec<Pose>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Per primitive, averaged over targets.
    pub valid_fraction: Vec<f64>,
}

impl AlignmentProblem {
    pub fn to_joint(&self) -> Result<JointProblem> {
        if self.targets.is_empty() {
            return Err(Error::Precondition("alignment needs at least one target".into()));
        }
        let mut frames = vec![Frame {
            image: self.image.clone(),
            intr: self.intr,
            pose: Pose::identity(),
            pose_fixed: true,
            primitives: self.primitives.clone(),
            scales_fixed: false,
        }];
        let mut edges = Vec::new();
        for (i, t) in self.targets.iter().enumerate() {
            frames.push(Frame {
                image: t.image.clone(),
                intr: t.intr,
                pose: t.pose,
                pose_fixed: t.fixed,
                primitives: Vec::new(),
                scales_fixed: true,
            });
            edges.push(Edge {
                reference: 0,
                target: i + 1,
            });
        }
        Ok(JointProblem {
            frames,
            edges,
            config: self.config,
        })
    }
}

/// Photometric cost of the problem at full resolution.
pub fn photometric_cost(problem: &AlignmentProblem) -> Result<f64> {
    let joint = problem.to_joint()?;
    let (ev, _) = joint.evaluate(&joint.initial_state(), false)?;
    if ev.active == 0 {
        return Err(Error::Degenerate("no active primitive".into()));
    }
    Ok(ev.cost)
}

/// Jointly estimates the reference log-scales and the free target poses.
pub fn align(problem: &AlignmentProblem) -> Result<AlignmentResult> {
    let joint = problem.to_joint()?;
    let res = optimize(&joint)?;
    Ok(AlignmentResult {
        log_scales: res.state.log_scales[0].clone(),
        poses: res.state.poses[1..].to_vec(),
        initial_cost: res.initial_cost,
        final_cost: res.final_cost,
        valid_fraction: res.valid_fraction[0].clone(),
    })
}

#[derive(Clone, Debug)]
pub struct SfmOutput {
    pub primitives: Vec<ScaledPrimitive>,
    pub result: AlignmentResult,
    /// Segments of the reference whose integration failed.
    pub failed_segments: usize,
}

/// Integrates the reference bundle, initialises every scale to 1 and every
/// target pose to identity, and aligns.
pub fn sfm_from_bundles(
    reference: &FrameBundle,
    targets: &[FrameBundle],
    mode: IntegrationMode,
    integration: &IntegrationConfig,
    config: &OptimizerConfig,
) -> Result<SfmOutput> {
    let integrated = integrate_bundle(reference, mode, integration);
    let failed_segments = integrated.primitives.iter().filter(|p| p.is_none()).count();
    let prims: Vec<ScaledPrimitive> = integrated
        .into_successful()
        .into_iter()
        .map(|p| ScaledPrimitive::new(p, 0.0))
        .collect();
    if prims.is_empty() {
        return Err(Error::Degenerate("reference has no primitive".into()));
    }
    let problem = AlignmentProblem {
        image: reference.image.clone(),
        intr: reference.intr,
        primitives: prims,
        targets: targets
            .iter()
            .map(|b| Target {
                image: b.image.clone(),
                intr: b.intr,
                pose: Pose::identity(),
                fixed: false,
            })
            .collect(),
        config: *config,
    };
    let result = align(&problem)?;
    let primitives = problem
        .primitives
        .into_iter()
        .zip(&result.log_scales)
        .map(|(p, &s)| ScaledPrimitive::new(p.prim, s))
        .collect();
    Ok(SfmOutput {
        primitives,
        result,
        failed_segments,
    })
}
