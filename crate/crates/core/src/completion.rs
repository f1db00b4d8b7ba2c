//! Sparse-to-dense depth completion with primitives.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{fuse, ScaledPrimitive};
use crate::error::{Error, Result};
use crate::frontend::{FrameBundle, Pixel};
use crate::geometry::{ImageBuffer, Intrinsics, PointCloud, Pose};
use crate::integration::{integrate_bundle, IntegrationConfig, IntegrationMode, SuperPrimitive};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSample {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl DepthSample {
    /// Integer pixel the sample falls in.
    pub fn pixel(&self) -> Option<Pixel> {
        let (u, v) = (self.u.round(), self.v.round());
        (u >= 0.0 && v >= 0.0).then(|| Pixel::new(u as u32, v as u32))
    }
}

/// Sparse metric depth measurements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseDepth {
    pub samples: Vec<DepthSample>,
}

impl SparseDepth {
    /// Parses lines `u v depth_m`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("sparse_depth", format!("line {}: {e}", n + 1)))?;
            if f.len() != 3 || f.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(
                    "sparse_depth",
                    format!("line {}: expected `u v depth`", n + 1),
                ));
            }
            samples.push(DepthSample {
                u: f[0],
                v: f[1],
                depth: f[2],
            });
        }
        Ok(Self { samples })
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
        let mut s = String::new();
        for d in &self.samples {
            s.push_str(&format!("{} {} {}\n", d.u, d.v, d.depth));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Coordinates at pyramid scale `factor` (0.5 per level).
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|d| DepthSample {
                    u: (d.u + 0.5) * factor - 0.5,
                    v: (d.v + 0.5) * factor - 0.5,
                    depth: d.depth,
                })
                .collect(),
        }
    }

    /// Keeps samples with depth in `[d_min, d_max]`.
    pub fn filtered(&self, d_min: f64, d_max: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .copied()
                .filter(|d| d.depth >= d_min && d.depth <= d_max)
                .collect(),
        }
    }

    /// Draws `count` distinct pixels with positive depth from a dense map.
    pub fn from_depth_map(depth: &ImageBuffer, count: usize, seed: u64) -> Self {
        let w = depth.width();
        let valid: Vec<usize> = (0..w * depth.height())
            .filter(|&i| depth.data()[i] > 0.0)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = sample(&mut rng, valid.len(), count.min(valid.len()))
            .into_iter()
            .map(|k| valid[k])
            .collect();
        idx.sort_unstable();
        Self {
            samples: idx
                .into_iter()
                .map(|i| DepthSample {
                    u: (i % w) as f64,
                    v: (i / w) as f64,
                    depth: depth.data()[i],
                })
                .collect(),
        }
    }

    /// Every positive pixel of a dense map.
    pub fn from_dense(depth: &ImageBuffer) -> Self {
        Self::from_depth_map(depth, usize::MAX, 0)
    }
}

/// Where a completed depth value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Undefined,
    /// Rendered from scaled primitives.
    Primitive,
    /// A sparse measurement outside every retained primitive.
    Measured,
    /// Filled by interpolation.
    Interpolated,
}

/// Depth in metres (non-positive = undefined) with per-pixel provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub depth: ImageBuffer,
    pub provenance: Vec<Provenance>,
}

impl DepthMap {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.depth.get(u, v, 0);
        (d > 0.0).then_some(d)
    }

    pub fn is_dense(&self) -> bool {
        self.depth.data().iter().all(|&d| d > 0.0)
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }
}

/// Scale fitting objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleFit {
    /// `s = sum(D d) / sum(D^2)` over samples inside the segment.
    #[default]
    LeastSquares,
    /// Lower median of `log(d / D)`.
    MedianRatio,
}

impl std::str::FromStr for ScaleFit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least-squares" => Ok(Self::LeastSquares),
            "median-ratio" => Ok(Self::MedianRatio),
            other => Err(Error::Domain(format!("unknown scale fit {other}"))),
        }
    }
}

/// Fitted log-scale of `prim`, or `None` when no sample falls inside it.
pub fn fit_scale(prim: &SuperPrimitive, sparse: &SparseDepth, mode: ScaleFit) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = sparse
        .samples
        .iter()
        .filter(|d| d.depth > 0.0 && d.depth.is_finite())
        .filter_map(|d| {
            let i = prim.segment().position(d.pixel()?)?;
            Some((prim.udepth(i), d.depth))
        })
        .collect();
    if pairs.is_empty() {
        return None;
    }
    match mode {
        ScaleFit::LeastSquares => {
            let num: f64 = pairs.iter().map(|(u, d)| u * d).sum();
            let den: f64 = pairs.iter().map(|(u, _)| u * u).sum();
            let s = num / den;
            (s > 0.0 && s.is_finite()).then(|| s.ln())
        }
        ScaleFit::MedianRatio => {
            let mut r: Vec<f64> = pairs.iter().map(|(u, d)| (d / u).ln()).collect();
            r.sort_by(f64::total_cmp);
            Some(r[(r.len() - 1) / 2])
        }
    }
}

/// Per-pixel mean depth of the points after `cam_from_cloud`, splatted to
/// the nearest pixel. Points behind the camera or outside the image are
/// dropped.
pub fn render_depth(cloud: &PointCloud, intr: &Intrinsics, cam_from_cloud: &Pose) -> DepthMap {
    let (w, h) = (intr.width, intr.height);
    let mut sum = vec![0.0; w * h];
    let mut cnt = vec![0u32; w * h];
    for p in &cloud.points {
        let q = cam_from_cloud.transform(p);
        if !(q.z > 0.0) {
            continue;
        }
        let px = intr.project_unchecked(&q);
        let (u, v) = (px.x.round(), px.y.round());
        if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
            continue;
        }
        let i = v as usize * w + u as usize;
        sum[i] += q.z;
        cnt[i] += 1;
    }
    let mut provenance = vec![Provenance::Undefined; w * h];
    let data = sum
        .iter()
        .zip(&cnt)
        .enumerate()
        .map(|(i, (s, &c))| {
            if c > 0 {
                provenance[i] = Provenance::Primitive;
                s / c as f64
            } else {
                0.0
            }
        })
        .collect();
    DepthMap {
        depth: ImageBuffer::new(w, h, 1, data).expect("finite depths"),
        provenance,
    }
}

/// Linear interpolation along each line between defined values, constant
/// extension past the ends. `None` when the line has no defined value.
fn fill_line(vals: &[f64]) -> Vec<Option<f64>> {
    let defined: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
    if defined.is_empty() {
        return vec![None; vals.len()];
    }
    let mut out = vec![None; vals.len()];
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while k + 1 < defined.len() && defined[k + 1] <= i {
            k += 1;
        }
        let a = defined[k];
        *o = Some(if i <= a {
            vals[a]
        } else if k + 1 < defined.len() {
            let b = defined[k + 1];
            let t = (i - a) as f64 / (b - a) as f64;
            vals[a] * (1.0 - t) + vals[b] * t
        } else {
            vals[a]
        });
    }
    out
}

/// Fills undefined pixels by averaging row-wise and column-wise linear
/// interpolation, repeating until the map is dense.
pub fn fill_gaps(map: &mut DepthMap) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    if map.depth.data().iter().all(|&d| !(d > 0.0)) {
        return Err(Error::Completion("no defined depth to interpolate from".into()));
    }
    while !map.is_dense() {
        let d = map.depth.data().to_vec();
        let rows: Vec<Vec<Option<f64>>> = (0..h).map(|v| fill_line(&d[v * w..(v + 1) * w])).collect();
        let cols: Vec<Vec<Option<f64>>> = (0..w)
            .map(|u| fill_line(&(0..h).map(|v| d[v * w + u]).collect::<Vec<_>>()))
            .collect();
        let out = map.depth.data_mut();
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                if d[i] > 0.0 {
                    continue;
                }
                let val = match (rows[v][u], cols[u][v]) {
                    (Some(a), Some(b)) => Some(0.5 * (a + b)),
                    (Some(a), None) | (None, Some(a)) => Some(a),
                    (None, None) => None,
                };
                if let Some(x) = val {
                    out[i] = x;
                    map.provenance[i] = Provenance::Interpolated;
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub fit: ScaleFit,
    /// Sparse samples outside `[d_min, d_max]` are ignored.
    pub d_min: f64,
    pub d_max: f64,
    pub mode: IntegrationMode,
    pub integration: IntegrationConfig,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            fit: ScaleFit::LeastSquares,
            d_min: 0.2,
            d_max: 5.0,
            mode: IntegrationMode::Full,
            integration: IntegrationConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Completion {
    pub depth: DepthMap,
    /// Retained primitives with their fitted scales.
    pub scaled: Vec<ScaledPrimitive>,
    /// Primitives without any sample inside.
    pub discarded: usize,
}

/// Completes depth from already integrated primitives.
pub fn complete_primitives(
    prims: &[SuperPrimitive],
    intr: &Intrinsics,
    sparse: &SparseDepth,
    cfg: &CompletionConfig,
) -> Result<Completion> {
    let sparse = sparse.filtered(cfg.d_min, cfg.d_max);
    let mut scaled = Vec::new();
    let mut discarded = 0;
    for p in prims {
        match fit_scale(p, &sparse, cfg.fit) {
            Some(s) => scaled.push(ScaledPrimitive::new(p.clone(), s)),
            None => discarded += 1,
        }
    }
    if scaled.is_empty() {
        return Err(Error::Completion("no primitive contains a sparse sample".into()));
    }
    let cloud = fuse(&scaled, intr, None);
    let mut map = render_depth(&cloud, intr, &Pose::identity());
    let w = intr.width;
    for d in &sparse.samples {
        let Some(p) = d.pixel() else { continue };
        if (p.u as usize) >= w || (p.v as usize) >= intr.height {
            continue;
        }
        let i = p.index(w);
        if map.provenance[i] == Provenance::Undefined {
            map.depth.data_mut()[i] = d.depth;
            map.provenance[i] = Provenance::Measured;
        }
    }
    fill_gaps(&mut map)?;
    Ok(Completion {
        depth: map,
        scaled,
        discarded,
    })
}

/// Integrates the bundle's segments and completes `sparse` into a dense map.
pub fn complete(bundle: &FrameBundle, sparse: &SparseDepth, cfg: &CompletionConfig) -> Result<Completion> {
    let prims = integrate_bundle(bundle, cfg.mode, &cfg.integration).into_successful();
    complete_primitives(&prims, &bundle.intr, sparse, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::Segment;
    use nalgebra::Vector3;

    fn prim(px: Vec<Pixel>, z: Vec<f64>) -> SuperPrimitive {
        let a = px[0];
        SuperPrimitive::new(Segment::new(px, a).unwrap(), z).unwrap()
    }

    #[test]
    fn single_point_fit() {
        let p = prim(vec![Pixel::new(3, 4)], vec![0.0]);
        let s = SparseDepth::parse("3 4 2.0\n").unwrap();
        let ls = fit_scale(&p, &s, ScaleFit::LeastSquares).unwrap();
        assert!((ls.exp() - 2.0).abs() < 1e-12);
        assert!(fit_scale(&p, &SparseDepth::parse("0 0 1").unwrap(), ScaleFit::LeastSquares).is_none());
    }

    #[test]
    fn median_ratio_mode() {
        let p = prim(
            vec![Pixel::new(0, 0), Pixel::new(1, 0), Pixel::new(2, 0)],
            vec![0.0, 0.0, 0.0],
        );
        let s = SparseDepth::parse("0 0 1\n1 0 2\n2 0 100\n").unwrap();
        let ls = fit_scale(&p, &s, ScaleFit::MedianRatio).unwrap();
        assert!((ls - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn render_examples() {
        let k = Intrinsics::new(10.0, 10.0, 2.0, 2.0, 5, 5).unwrap();
        let cloud = PointCloud::new(
            vec![
                Vector3::new(0.0, 0.0, 2.0),
                Vector3::new(0.0, 0.0, 4.0),
                Vector3::new(0.0, 0.0, -1.0),
            ],
            None,
        )
        .unwrap();
        let m = render_depth(&cloud, &k, &Pose::identity());
        assert_eq!(m.get(2, 2), Some(3.0));
        assert_eq!(m.count(Provenance::Primitive), 1);
    }

    #[test]
    fn gap_fill_is_linear_between_samples() {
        let mut m = DepthMap {
            depth: ImageBuffer::new(5, 1, 1, vec![1.0, 0.0, 0.0, 0.0, 3.0]).unwrap(),
            provenance: vec![Provenance::Primitive; 5],
        };
        fill_gaps(&mut m).unwrap();
        assert_eq!(m.depth.data(), &[1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(m.provenance[2], Provenance::Interpolated);
    }

    #[test]
    fn gap_fill_reaches_empty_rows() {
        let mut d = vec![0.0; 16];
        d[5] = 2.0;
        let mut m = DepthMap {
            depth: ImageBuffer::new(4, 4, 1, d).unwrap(),
            provenance: vec![Provenance::Undefined; 16],
        };
        fill_gaps(&mut m).unwrap();
        assert!(m.depth.data().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn sparse_text_round_trip() {
        let s = SparseDepth::parse("# header\n1 2 0.5\n\n3.5 4 1.25\n").unwrap();
        assert_eq!(s.samples.len(), 2);
        assert_eq!(SparseDepth::parse(&s.to_text()).unwrap(), s);
        assert!(SparseDepth::parse("1 2").is_err());
    }
}
