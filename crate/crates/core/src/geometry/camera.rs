//! Pinhole camera model.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole calibration with image size.
///
/// Pixel `(u, v)` samples the continuous image plane at exactly `(u, v)`,
/// so the valid interpolation domain is `[0, width-1] x [0, height-1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fu: f64, fv: f64, cu: f64, cv: f64, width: usize, height: usize) -> Result<Self> {
        if !(fu > 0.0 && fv > 0.0 && fu.is_finite() && fv.is_finite()) {
            return Err(Error::Domain(format!(
                "focal lengths must be positive, got ({fu}, {fv})"
            )));
        }
        if !(cu >= 0.0 && cu < width as f64 && cv >= 0.0 && cv < height as f64) {
            return Err(Error::Domain(format!(
                "principal point ({cu}, {cv}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fu,
            fv,
            cu,
            cv,
            width,
            height,
        })
    }

    /// Calibration of the `level`-th pyramid image built by 2x2 box averaging.
    ///
    /// A coarse pixel `U` covers fine pixels `2U, 2U+1`, whose centre sits at
    /// fine coordinate `2U + 0.5`; hence `c' = (c - 0.5) / 2` per level.
    pub fn downscaled(&self, level: usize) -> Self {
        let mut out = *self;
        for _ in 0..level {
            out.fu *= 0.5;
            out.fv *= 0.5;
            out.cu = (out.cu - 0.5) * 0.5;
            out.cv = (out.cv - 0.5) * 0.5;
            out.width /= 2;
            out.height /= 2;
        }
        out
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fu, 0.0, self.cu, 0.0, self.fv, self.cv, 0.0, 0.0, 1.0)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn contains_pixel(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height
    }

    /// Projects a camera-frame point. Results may lie outside the image.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if p.z <= 0.0 {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(self.project_unchecked(p))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let inv_z = 1.0 / p.z;
        Vector2::new(self.fu * p.x * inv_z + self.cu, self.fv * p.y * inv_z + self.cv)
    }

    /// Back-projects a pixel at the given (camera-z) depth.
    pub fn unproject(&self, px: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::Domain(format!("depth must be positive, got {depth}")));
        }
        Ok(self.unproject_unchecked(px.x, px.y, depth))
    }

    #[inline]
    pub(crate) fn unproject_unchecked(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            depth * (u - self.cu) / self.fu,
            depth * (v - self.cv) / self.fv,
            depth,
        )
    }

    /// Ray through pixel `(u, v)` with unit z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.unproject_unchecked(u, v, 1.0)
    }

    /// Parses the single-line `f_u f_v c_u c_v width height` format.
    pub fn parse(text: &str) -> Result<Self> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::format(
                "intrinsics",
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::format("intrinsics", format!("field {i}: {e}")))
        };
        let dim = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| Error::format("intrinsics", format!("field {i}: {e}")))
        };
        Self::new(num(0)?, num(1)?, num(2)?, num(3)?, dim(4)?, dim(5)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, format!("{self}\n")).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for Intrinsics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.fu, self.fv, self.cu, self.cv, self.width, self.height
        )
    }
}
