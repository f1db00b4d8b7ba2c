use nalgebra::Vector3;

use super::pose::Pose;
use crate::error::{Error, Result};

/// Unordered set of 3-D points with optional RGB colours in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, colors: Option<Vec<[f64; 3]>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::Domain("point cloud contains non-finite coordinates".into()));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::Domain(format!(
                    "{} colours for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        Ok(Self { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: self.points.iter().map(|p| pose.transform(p)).collect(),
            colors: self.colors.clone(),
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        match (&mut self.colors, &other.colors) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (Some(a), None) => a.extend(std::iter::repeat([0.5; 3]).take(other.len())),
            (None, Some(b)) if self.points.is_empty() => self.colors = Some(b.clone()),
            (None, Some(_)) => {}
            (None, None) => {}
        }
        self.points.extend_from_slice(&other.points);
    }
}
