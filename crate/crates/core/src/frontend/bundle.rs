//! On-disk front-end bundles.
//!
//! A bundle is a directory holding everything the back-end needs about one
//! frame:
//!
//! | file               | content                                                    |
//! |--------------------|------------------------------------------------------------|
//! | `intrinsics.txt`   | `f_u f_v c_u c_v width height`                             |
//! | `image.ppm`        | binary P6, 8 bit                                           |
//! | `normals.f32`      | `h x w x 3` float32, row-major, channel-interleaved        |
//! | `segments.bin`     | `u32` count, then per segment anchor u, anchor v, pixel count and row-major pixel indices (all `u32`) |
//! | `depth.f32`        | optional, `h x w` float32 metres, non-positive = invalid   |
//! | `sparse_depth.txt` | optional, lines `u v depth_m`                              |
//! | `pose.txt`         | optional, one TUM line `timestamp tx ty tz qx qy qz qw`    |
//! | `masks.bin`        | optional mask candidates (see [`read_masks`])              |
//!
//! All multi-byte values are little-endian.

use std::path::Path;

use crate::completion::SparseDepth;
use crate::error::{Error, Result};
use crate::eval::trajectory::{format_tum_line, parse_tum_line};
use crate::geometry::{ImageBuffer, Intrinsics, Pose};
use crate::io;

use super::segment::{MaskCandidate, Pixel, Segment};

pub const NORMAL_UNIT_TOL: f64 = 1e-3;

/// One frame of front-end output.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub image: ImageBuffer,
    pub normals: ImageBuffer,
    pub segments: Vec<Segment>,
    pub intr: Intrinsics,
    pub gt_depth: Option<ImageBuffer>,
    pub gt_pose: Option<Pose>,
    pub sparse_depth: Option<SparseDepth>,
    pub timestamp: f64,
}

impl FrameBundle {
    /// Checks shapes, segment bounds and normal orientation.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.intr.width, self.intr.height);
        let shape = |img: &ImageBuffer, ch: usize, field: &str| -> Result<()> {
            if img.width() != w || img.height() != h || img.channels() != ch {
                return Err(Error::format(
                    field,
                    format!(
                        "expected {w}x{h}x{ch}, found {}x{}x{}",
                        img.width(),
                        img.height(),
                        img.channels()
                    ),
                ));
            }
            Ok(())
        };
        shape(&self.image, 3, "image")?;
        shape(&self.normals, 3, "normals")?;
        if let Some(d) = &self.gt_depth {
            shape(d, 1, "depth")?;
        }
        for (i, n) in self.normals.data().chunks_exact(3).enumerate() {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(Error::format(
                    "normals",
                    format!("normal at pixel {i} has length {norm}"),
                ));
            }
            let ray = self.intr.ray((i % w) as f64, (i / w) as f64).normalize();
            if n[0] * ray.x + n[1] * ray.y + n[2] * ray.z > NORMAL_UNIT_TOL {
                return Err(Error::format(
                    "normals",
                    format!("normal at pixel {i} faces away from the camera"),
                ));
            }
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !s.in_bounds(w, h) {
                return Err(Error::format("segments", format!("segment {i} out of bounds")));
            }
        }
        Ok(())
    }

    /// Unit normal at an integer pixel.
    #[inline]
    pub fn normal(&self, p: Pixel) -> [f64; 3] {
        let n = self.normals.pixel(p.u as usize, p.v as usize);
        [n[0], n[1], n[2]]
    }

    /// Halves the resolution `levels` times: images are box-averaged,
    /// normals averaged and renormalised, and segments keep a coarse pixel
    /// when at least two of its four children belong to them.
    pub fn downsampled(&self, levels: usize) -> Result<FrameBundle> {
        let mut b = self.clone();
        for _ in 0..levels {
            b = b.half()?;
        }
        Ok(b)
    }

    fn half(&self) -> Result<FrameBundle> {
        let intr = self.intr.downscaled(1);
        if intr.width == 0 || intr.height == 0 {
            return Err(Error::Domain("bundle too small to downsample".into()));
        }
        let image = self.image.downsample();
        let mut normals = self.normals.downsample();
        for n in normals.data_mut().chunks_exact_mut(3) {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len > 1e-12 {
                n.iter_mut().for_each(|x| *x /= len);
            } else {
                n.copy_from_slice(&[0.0, 0.0, -1.0]);
            }
        }
        let gt_depth = self.gt_depth.as_ref().map(|d| {
            ImageBuffer::from_fn(intr.width, intr.height, 1, |u, v, _| {
                let vals: Vec<f64> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|(du, dv)| d.get(2 * u + du, 2 * v + dv, 0))
                    .collect();
                if vals.iter().all(|&x| x > 0.0) {
                    vals.iter().sum::<f64>() / 4.0
                } else {
                    0.0
                }
            })
        });
        let mut segments = Vec::new();
        for s in &self.segments {
            let mut counts = std::collections::BTreeMap::<Pixel, u8>::new();
            for p in s.pixels() {
                let c = Pixel::new(p.u / 2, p.v / 2);
                if (c.u as usize) < intr.width && (c.v as usize) < intr.height {
                    *counts.entry(c).or_default() += 1;
                }
            }
            let pixels: Vec<Pixel> = counts
                .into_iter()
                .filter(|(_, n)| *n >= 2)
                .map(|(p, _)| p)
                .collect();
            if pixels.is_empty() {
                continue;
            }
            let a = Pixel::new(s.anchor().u / 2, s.anchor().v / 2);
            let seg = if pixels.binary_search(&a).is_ok() {
                Segment::new(pixels, a)?
            } else {
                Segment::with_centroid_anchor(pixels)?
            };
            segments.extend(super::segment::split_connected(&seg, 1));
        }
        let sparse_depth = self.sparse_depth.as_ref().map(|s| s.rescaled(0.5));
        Ok(FrameBundle {
            image,
            normals,
            segments,
            intr,
            gt_depth,
            gt_pose: self.gt_pose,
            sparse_depth,
            timestamp: self.timestamp,
        })
    }
}

fn u32_at(bytes: &[u8], pos: &mut usize, field: &str) -> Result<u32> {
    let b = bytes
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::format(field, "unexpected end of file"))?;
    *pos += 4;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn f32_at(bytes: &[u8], pos: &mut usize, field: &str) -> Result<f32> {
    u32_at(bytes, pos, field).map(f32::from_bits)
}

fn read_pixel_list(
    bytes: &[u8],
    pos: &mut usize,
    intr: &Intrinsics,
    field: &str,
) -> Result<(Pixel, Vec<Pixel>)> {
    let (w, h) = (intr.width, intr.height);
    let au = u32_at(bytes, pos, field)?;
    let av = u32_at(bytes, pos, field)?;
    if au as usize >= w || av as usize >= h {
        return Err(Error::format(field, format!("anchor ({au}, {av}) out of bounds")));
    }
    let n = u32_at(bytes, pos, field)? as usize;
    if n > w * h {
        return Err(Error::format(field, format!("pixel count {n} exceeds image size")));
    }
    let mut pixels = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = u32_at(bytes, pos, field)? as usize;
        if idx >= w * h {
            return Err(Error::format(
                field,
                format!("pixel index {idx} out of range for {w}x{h} image"),
            ));
        }
        pixels.push(Pixel::from_index(idx, w));
    }
    Ok((Pixel::new(au, av), pixels))
}

fn write_pixel_list(out: &mut Vec<u8>, anchor: Pixel, pixels: &[Pixel], width: usize) {
    out.extend_from_slice(&anchor.u.to_le_bytes());
    out.extend_from_slice(&anchor.v.to_le_bytes());
    out.extend_from_slice(&(pixels.len() as u32).to_le_bytes());
    for p in pixels {
        out.extend_from_slice(&(p.index(width) as u32).to_le_bytes());
    }
}

pub fn encode_segments(segments: &[Segment], width: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    for s in segments {
        write_pixel_list(&mut out, s.anchor(), s.pixels(), width);
    }
    out
}

pub fn decode_segments(bytes: &[u8], intr: &Intrinsics) -> Result<Vec<Segment>> {
    const F: &str = "segments.bin";
    let mut pos = 0;
    let count = u32_at(bytes, &mut pos, F)?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let (anchor, pixels) = read_pixel_list(bytes, &mut pos, intr, F)?;
        let seg = Segment::new(pixels, anchor)
            .map_err(|e| Error::format(F, format!("segment {i}: {e}")))?;
        out.push(seg);
    }
    if pos != bytes.len() {
        return Err(Error::format(F, "trailing bytes"));
    }
    Ok(out)
}

/// Reads `masks.bin`: `u32` mask count, then per mask query u, query v,
/// pixel count, pixel indices (all `u32`), float32 stability and float32
/// score. Masks sharing a query are grouped in order of first appearance.
pub fn read_masks(path: impl AsRef<Path>, intr: &Intrinsics) -> Result<Vec<(Pixel, Vec<MaskCandidate>)>> {
    const F: &str = "masks.bin";
    let bytes = io::read_bytes(path.as_ref())?;
    let mut pos = 0;
    let count = u32_at(&bytes, &mut pos, F)?;
    let mut out: Vec<(Pixel, Vec<MaskCandidate>)> = Vec::new();
    for _ in 0..count {
        let (q, pixels) = read_pixel_list(&bytes, &mut pos, intr, F)?;
        let stability = f32_at(&bytes, &mut pos, F)? as f64;
        let score = f32_at(&bytes, &mut pos, F)? as f64;
        let cand = MaskCandidate::new(pixels, stability, score);
        match out.iter_mut().find(|(p, _)| *p == q) {
            Some((_, v)) => v.push(cand),
            None => out.push((q, vec![cand])),
        }
    }
    Ok(out)
}

pub fn write_masks(
    path: impl AsRef<Path>,
    masks: &[(Pixel, Vec<MaskCandidate>)],
    width: usize,
) -> Result<()> {
    let total: usize = masks.iter().map(|(_, c)| c.len()).sum();
    let mut out = (total as u32).to_le_bytes().to_vec();
    for (q, cands) in masks {
        for c in cands {
            write_pixel_list(&mut out, *q, &c.pixels, width);
            out.extend_from_slice(&(c.stability as f32).to_le_bytes());
            out.extend_from_slice(&(c.score as f32).to_le_bytes());
        }
    }
    io::write_bytes(path.as_ref(), &out)
}

fn to_f32_vec(img: &ImageBuffer) -> Vec<f32> {
    img.data().iter().map(|&x| x as f32).collect()
}

/// Reads a bundle directory. Segments come from `segments.bin`; when it is
/// absent but `masks.bin` exists, they are selected from the candidates.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<FrameBundle> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "bundle directory not found"),
        ));
    }
    let intr = Intrinsics::load(dir.join("intrinsics.txt"))?;
    let (w, h) = (intr.width, intr.height);
    let image = io::read_ppm(dir.join("image.ppm"))?;
    if image.width() != w || image.height() != h {
        return Err(Error::format(
            "image.ppm",
            format!("{}x{} image for {w}x{h} intrinsics", image.width(), image.height()),
        ));
    }
    let normals = io::read_f32(dir.join("normals.f32"), w * h * 3)?;
    let normals = ImageBuffer::new(w, h, 3, normals.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format("normals.f32", e.to_string()))?;

    let seg_path = dir.join("segments.bin");
    let masks_path = dir.join("masks.bin");
    let segments = if seg_path.exists() {
        decode_segments(&io::read_bytes(&seg_path)?, &intr)?
    } else if masks_path.exists() {
        let params = super::segment::MaskSelection::default();
        let cands = read_masks(&masks_path, &intr)?;
        super::segment::select_masks(&cands, &params)
            .iter()
            .flat_map(|s| super::segment::split_connected(s, params.min_area))
            .collect()
    } else {
        return Err(Error::io(
            seg_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no segments.bin or masks.bin"),
        ));
    };

    let depth_path = dir.join("depth.f32");
    let gt_depth = if depth_path.exists() {
        Some(io::read_depth_f32(&depth_path, w, h)?)
    } else {
        None
    };
    let sparse_path = dir.join("sparse_depth.txt");
    let sparse_depth = if sparse_path.exists() {
        Some(SparseDepth::load(&sparse_path)?)
    } else {
        None
    };
    let pose_path = dir.join("pose.txt");
    let (gt_pose, timestamp) = if pose_path.exists() {
        let text = std::fs::read_to_string(&pose_path).map_err(|e| Error::io(&pose_path, e))?;
        let line = text
            .lines()
            .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .ok_or_else(|| Error::format("pose.txt", "empty file"))?;
        let (t, p) = parse_tum_line(line).map_err(|e| Error::format("pose.txt", e.to_string()))?;
        (Some(p), t)
    } else {
        (None, 0.0)
    };
    let bundle = FrameBundle {
        image,
        normals,
        segments,
        intr,
        gt_depth,
        gt_pose,
        sparse_depth,
        timestamp,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &FrameBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    bundle.intr.save(dir.join("intrinsics.txt"))?;
    io::write_ppm(dir.join("image.ppm"), &bundle.image)?;
    io::write_f32(dir.join("normals.f32"), &to_f32_vec(&bundle.normals))?;
    io::write_bytes(
        &dir.join("segments.bin"),
        &encode_segments(&bundle.segments, bundle.intr.width),
    )?;
    if let Some(d) = &bundle.gt_depth {
        io::write_f32(dir.join("depth.f32"), &to_f32_vec(d))?;
    }
    if let Some(s) = &bundle.sparse_depth {
        s.save(dir.join("sparse_depth.txt"))?;
    }
    if let Some(p) = &bundle.gt_pose {
        let path = dir.join("pose.txt");
        std::fs::write(&path, format_tum_line(bundle.timestamp, p) + "\n")
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
