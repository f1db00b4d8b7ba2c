//! Camera model, rigid transforms, image buffers and point clouds.

mod camera;
mod cloud;
mod image;
mod pose;

pub use camera::Intrinsics;
pub use cloud::PointCloud;
pub use image::{build_pyramid, ImageBuffer};
pub use pose::{Pose, PoseIncrement};

