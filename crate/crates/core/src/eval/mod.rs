//! Depth and trajectory metrics.

pub mod align;
pub mod metrics;
pub mod trajectory;

pub use align::{align_sim3, associate, ate, ate_rmse, AteReport, Sim3, DEFAULT_ASSOCIATION_TOL};
pub use metrics::{depth_metrics, lower_median, median_scale, DepthErrorReport};
pub use trajectory::{format_tum_line, parse_tum_line, Trajectory};
