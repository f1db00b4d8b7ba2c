//! Segment-level monocular geometry: normal integration up to per-segment
//! scale, photometric alignment of depth-scaled primitives, sparse depth
//! completion and sliding-window visual odometry.
//!
//! Front-end outputs (images, normal maps, segments) are read from bundle
//! directories or produced by the ray-cast generator in [`frontend`].

pub mod alignment;
pub mod completion;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod integration;
pub mod io;
pub mod vo;

pub use alignment::{ScaledPrimitive, Loss};
pub use completion::{DepthMap, Provenance, SparseDepth};
pub use error::{Error, Result};
pub use eval::{DepthErrorReport, Trajectory};
pub use frontend::{FrameBundle, MaskCandidate, Pixel, Segment};
pub use geometry::{ImageBuffer, Intrinsics, PointCloud, Pose, PoseIncrement};
pub use integration::{IntegrationConfig, IntegrationMode, SuperPrimitive};
pub use vo::{Keyframe, VoConfig, WindowState};
