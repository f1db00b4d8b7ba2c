//! Timestamped trajectories in the TUM text format.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Parses `timestamp tx ty tz qx qy qz qw`. The quaternion is normalised.
pub fn parse_tum_line(line: &str) -> Result<(f64, Pose)> {
    let f: Vec<f64> = line
        .split_whitespace()
        .map(str::parse::<f64>)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format("trajectory", e.to_string()))?;
    if f.len() != 8 {
        return Err(Error::format(
            "trajectory",
            format!("expected 8 fields, found {}", f.len()),
        ));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::format("trajectory", "non-finite value"));
    }
    let q = Quaternion::new(f[7], f[4], f[5], f[6]);
    if q.norm() < 1e-12 {
        return Err(Error::format("trajectory", "zero quaternion"));
    }
    let q = UnitQuaternion::from_quaternion(q);
    Ok((f[0], Pose::from_quaternion(&q, Vector3::new(f[1], f[2], f[3]))))
}

pub fn format_tum_line(timestamp: f64, pose: &Pose) -> String {
    let q = pose.quaternion();
    let t = pose.translation();
    format!(
        "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Result<Self> {
        for w in entries.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Domain(format!(
                    "timestamps not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if entries.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(Error::Domain("non-finite trajectory entry".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|(_, p)| *p.translation()).collect()
    }

    /// Parses TUM text; `#` lines and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let l = line.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            entries.push(parse_tum_line(l).map_err(|e| match e {
                Error::Format { field, message } => {
                    Error::format(field, format!("line {}: {message}", n + 1))
                }
                e => e,
            })?);
        }
        if entries.is_empty() {
            return Err(Error::format("trajectory", "no poses"));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            e => e,
        })
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(t, p)| format_tum_line(*t, p) + "\n")
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let p = Pose::exp(&crate::geometry::PoseIncrement::new(
            Vector3::new(0.1, -2.0, 3.0),
            Vector3::new(0.3, 0.2, -0.1),
        ));
        let (t, q) = parse_tum_line(&format_tum_line(1.5, &p)).unwrap();
        assert_eq!(t, 1.5);
        assert!((q.rotation() - p.rotation()).norm() < 1e-8);
        assert!((q.translation() - p.translation()).norm() < 1e-8);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_tum_line("1 2 3").is_err());
        assert!(parse_tum_line("0 0 0 0 0 0 0 0").is_err());
        assert!(Trajectory::parse("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n").is_err());
    }
}
