//! Multi-channel image buffers, bilinear sampling and box pyramids.

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Domain("image needs at least one channel".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::Domain(format!(
                "image data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite image value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    data.push(f(u, v, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let i = (v * self.width + u) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, u: usize, v: usize) -> &mut [f64] {
        let i = (v * self.width + u) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    /// True when `(u, v)` lies in `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn in_domain(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Bilinear interpolation of the four surrounding pixel centres.
    /// Returns `None` outside `[0, w-1] x [0, h-1]`.
    pub fn bilinear_sample(&self, u: f64, v: f64) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(u, v, &mut out).then_some(out)
    }

    /// Allocation-free variant of [`bilinear_sample`](Self::bilinear_sample).
    #[inline]
    pub fn sample_into(&self, u: f64, v: f64, out: &mut [f64]) -> bool {
        let Some((i00, i10, i01, i11, a, b)) = self.cell(u, v) else {
            return false;
        };
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let top = self.data[i00 + c] * (1.0 - a) + self.data[i10 + c] * a;
            let bot = self.data[i01 + c] * (1.0 - a) + self.data[i11 + c] * a;
            *o = top * (1.0 - b) + bot * b;
        }
        true
    }

    /// Samples values together with their derivatives along u and v.
    /// The derivative is that of the bilinear interpolant inside the cell.
    #[inline]
    pub fn sample_with_gradient(
        &self,
        u: f64,
        v: f64,
        val: &mut [f64],
        du: &mut [f64],
        dv: &mut [f64],
    ) -> bool {
        let Some((i00, i10, i01, i11, a, b)) = self.cell(u, v) else {
            return false;
        };
        for c in 0..self.channels {
            let (p00, p10, p01, p11) = (
                self.data[i00 + c],
                self.data[i10 + c],
                self.data[i01 + c],
                self.data[i11 + c],
            );
            let top = p00 * (1.0 - a) + p10 * a;
            let bot = p01 * (1.0 - a) + p11 * a;
            val[c] = top * (1.0 - b) + bot * b;
            du[c] = (p10 - p00) * (1.0 - b) + (p11 - p01) * b;
            dv[c] = bot - top;
        }
        true
    }

    #[inline]
    fn cell(&self, u: f64, v: f64) -> Option<(usize, usize, usize, usize, f64, f64)> {
        if !self.in_domain(u, v) {
            return None;
        }
        // Clamp so that the far border uses the last cell with weight 1.
        let x0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let a = u - x0 as f64;
        let b = v - y0 as f64;
        let ch = self.channels;
        let idx = |x: usize, y: usize| (y * self.width + x) * ch;
        Some((idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1), a, b))
    }

    /// Halves both dimensions by 2x2 box averaging (odd trailing rows and
    /// columns are dropped).
    pub fn downsample(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let ch = self.channels;
        let mut data = Vec::with_capacity(w * h * ch);
        for v in 0..h {
            for u in 0..w {
                for c in 0..ch {
                    let s = self.get(2 * u, 2 * v, c)
                        + self.get(2 * u + 1, 2 * v, c)
                        + self.get(2 * u, 2 * v + 1, c)
                        + self.get(2 * u + 1, 2 * v + 1, c);
                    data.push(0.25 * s);
                }
            }
        }
        Self {
            width: w,
            height: h,
            channels: ch,
            data,
        }
    }

    /// Mean over channels, as a single-channel image.
    pub fn to_gray(&self) -> Self {
        let ch = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / ch)
            .collect();
        Self {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Separable `[1 2 1] / 4` blur with clamped borders, applied `passes` times.
    pub fn blurred(&self, passes: usize) -> Self {
        let mut img = self.clone();
        let (w, h, ch) = (self.width, self.height, self.channels);
        for _ in 0..passes {
            let src = img.clone();
            for v in 0..h {
                for u in 0..w {
                    let (ul, ur) = (u.saturating_sub(1), (u + 1).min(w - 1));
                    for c in 0..ch {
                        img.data[(v * w + u) * ch + c] = 0.25 * src.get(ul, v, c)
                            + 0.5 * src.get(u, v, c)
                            + 0.25 * src.get(ur, v, c);
                    }
                }
            }
            let src = img.clone();
            for v in 0..h {
                let (vu, vd) = (v.saturating_sub(1), (v + 1).min(h - 1));
                for u in 0..w {
                    for c in 0..ch {
                        img.data[(v * w + u) * ch + c] = 0.25 * src.get(u, vu, c)
                            + 0.5 * src.get(u, v, c)
                            + 0.25 * src.get(u, vd, c);
                    }
                }
            }
        }
        img
    }
}

/// Builds `levels` images, level 0 being the input and each further level
/// halving both dimensions by 2x2 averaging.
pub fn build_pyramid(img: &ImageBuffer, levels: usize) -> Result<Vec<ImageBuffer>> {
    if levels == 0 {
        return Err(Error::Domain("pyramid needs at least one level".into()));
    }
    let min_dim = 1usize << (levels - 1);
    if img.width < min_dim || img.height < min_dim {
        return Err(Error::Domain(format!(
            "{}x{} image too small for {levels} pyramid levels",
            img.width, img.height
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for l in 1..levels {
        let next = out[l - 1].downsample();
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageBuffer::new(1, 1, 0, vec![]).is_err());
    }

    #[test]
    fn sampling_examples() {
        let img = ImageBuffer::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(img.bilinear_sample(1.0, 0.0), Some(vec![1.0]));
        assert_eq!(img.bilinear_sample(0.5, 0.0), Some(vec![0.5]));
        assert_eq!(img.bilinear_sample(-0.5, 0.0), None);
        assert_eq!(img.bilinear_sample(1.0001, 0.0), None);
    }

    #[test]
    fn sampling_at_far_border() {
        let img = ImageBuffer::from_fn(4, 3, 2, |u, v, c| (u * 10 + v + c * 100) as f64);
        assert_eq!(img.bilinear_sample(3.0, 2.0).unwrap(), img.pixel(3, 2).to_vec());
    }

    #[test]
    fn gradient_matches_difference() {
        let img = ImageBuffer::from_fn(5, 5, 1, |u, v, _| ((u * u) as f64) * 0.1 + (v as f64) * 0.3);
        let (mut val, mut du, mut dv) = ([0.0], [0.0], [0.0]);
        assert!(img.sample_with_gradient(1.25, 2.5, &mut val, &mut du, &mut dv));
        assert!((du[0] - 0.3).abs() < 1e-12);
        assert!((dv[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pyramid_examples() {
        let c = ImageBuffer::filled(8, 4, 3, 0.7);
        for level in build_pyramid(&c, 3).unwrap() {
            assert!(level.data().iter().all(|&x| x == 0.7));
        }
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let pyr = build_pyramid(&img, 2).unwrap();
        assert_eq!(pyr[1].data(), &[0.5]);
        let pyr = build_pyramid(&img, 1).unwrap();
        assert_eq!(pyr.len(), 1);
        assert_eq!(pyr[0], img);
        assert!(build_pyramid(&img, 3).is_err());
        assert!(build_pyramid(&img, 0).is_err());
    }

    proptest! {
        #[test]
        fn exact_on_affine_images(
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -5.0f64..5.0,
            u in 0.0f64..9.0, v in 0.0f64..6.0,
        ) {
            let img = ImageBuffer::from_fn(10, 7, 1, |x, y, _| a * x as f64 + b * y as f64 + c);
            let s = img.bilinear_sample(u, v).unwrap()[0];
            prop_assert!((s - (a * u + b * v + c)).abs() < 1e-9);
        }
    }
}
