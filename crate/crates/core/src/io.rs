//! Raw float32 grids, binary PPM images and binary PLY point clouds.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ImageBuffer, PointCloud};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn field_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads `expected` little-endian float32 values.
pub fn read_f32(path: impl AsRef<Path>, expected: usize) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            field_name(path),
            format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_f32(path: impl AsRef<Path>, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path.as_ref(), &bytes)
}

/// Single-channel image stored as `h x w` float32.
pub fn read_depth_f32(path: impl AsRef<Path>, width: usize, height: usize) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let values = read_f32(path, width * height)?;
    let data: Vec<f64> = values.into_iter().map(f64::from).collect();
    ImageBuffer::new(width, height, 1, data).map_err(|e| Error::format(field_name(path), e.to_string()))
}

pub fn write_depth_f32(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let values: Vec<f32> = img.data().iter().map(|&x| x as f32).collect();
    write_f32(path, &values)
}

/// Writes a binary (P6) 8-bit PPM. Values are clamped to `[0, 1]`.
pub fn write_ppm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Domain("PPM output needs a 3-channel image".into()));
    }
    let mut bytes = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(img.data().iter().map(|&x| quantize_u8(x)));
    write_bytes(path.as_ref(), &bytes)
}

#[inline]
pub(crate) fn quantize_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let field = field_name(path);
    let bytes = read_bytes(path)?;
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // Skip whitespace and comments.
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(&field, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P6" {
        return Err(Error::format(&field, format!("unsupported magic {}", tokens[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::format(&field, format!("bad header value {s}: {e}")))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::format(&field, "only 8-bit PPM is supported"));
    }
    let n = w * h * 3;
    if bytes.len() < pos + n {
        return Err(Error::format(&field, "truncated pixel data"));
    }
    let data = bytes[pos..pos + n].iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageBuffer::new(w, h, 3, data)
}

/// Writes positions (float32) and colours (uint8) as binary little-endian PLY.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(64 + cloud.len() * 15);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )
    .expect("writing to a Vec cannot fail");
    for (i, p) in cloud.points.iter().enumerate() {
        for x in p.iter() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        let c = cloud.colors.as_ref().map(|c| c[i]).unwrap_or([0.5; 3]);
        out.extend(c.iter().map(|&x| quantize_u8(x)));
    }
    write_bytes(path.as_ref(), &out)
}

/// Reads the subset of binary PLY written by [`write_ply`].
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::format(field_name(path), "missing end_header"))?;
    let header = String::from_utf8_lossy(&bytes[..end]);
    let count = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::format(field_name(path), "missing vertex count"))?;
    let body = &bytes[end + marker.len()..];
    if body.len() != count * 15 {
        return Err(Error::format(field_name(path), "unexpected body length"));
    }
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for rec in body.chunks_exact(15) {
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]) as f64;
        points.push(nalgebra::Vector3::new(f(0), f(4), f(8)));
        colors.push([
            rec[12] as f64 / 255.0,
            rec[13] as f64 / 255.0,
            rec[14] as f64 / 255.0,
        ]);
    }
    PointCloud::new(points, Some(colors))
}
