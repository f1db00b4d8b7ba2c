use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use superprim::alignment::{fuse, sfm_from_bundles, OptimizerConfig};
use superprim::completion::{self, render_depth, CompletionConfig, Provenance};
use superprim::eval::{ate, depth_metrics, median_scale, Trajectory};
use superprim::frontend::{encode_segments, load_bundle, save_bundle, scenes, synth_scene};
use superprim::integration::integrate_bundle;
use superprim::vo::run_vo;
use superprim::{io, Error, FrameBundle, ImageBuffer, Intrinsics, Pose, SparseDepth};

use crate::{CompleteArgs, EvalAteArgs, EvalDepthArgs, IntegrateArgs, SfmArgs, SynthArgs, VoArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit status 1.
    Usage(String),
    /// Bad data or failed computation: exit status 2.
    Data(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = scenes::preset(&a.preset, seed, a.frames).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown preset '{}' (expected one of {})",
            a.preset,
            scenes::PRESETS.join(", ")
        ))
    })??;
    let out = synth_scene(&spec, seed)?;
    create_dir(&a.out)?;
    let mut traj = Vec::new();
    for (i, mut b) in out.bundles.into_iter().enumerate() {
        if a.sparse > 0 {
            if let Some(d) = &b.gt_depth {
                let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
                b.sparse_depth = Some(SparseDepth::from_depth_map(d, a.sparse, s));
            }
        }
        if let Some(p) = b.gt_pose {
            traj.push((b.timestamp, p));
        }
        save_bundle(&b, a.out.join(format!("frame_{i:04}")))?;
    }
    Trajectory::new(traj)?.save(a.out.join("groundtruth.txt"))?;
    Ok(())
}

pub fn integrate(a: &IntegrateArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let res = integrate_bundle(&bundle, a.mode, &Default::default());
    create_dir(&a.out)?;
    io::write_bytes(
        a.out.join("segments.bin"),
        &encode_segments(&bundle.segments, bundle.intr.width),
    )?;
    let mut values = Vec::new();
    let mut status = String::new();
    for (seg, prim) in bundle.segments.iter().zip(&res.primitives) {
        match prim {
            Some(p) => {
                values.extend(p.log_udepth().iter().map(|&x| x as f32));
                status.push_str("ok\n");
            }
            None => {
                values.extend(std::iter::repeat(f32::NAN).take(seg.area()));
                status.push_str("failed\n");
            }
        }
    }
    io::write_f32(a.out.join("log_udepth.f32"), &values)?;
    write_text(&a.out.join("status.txt"), &status)?;
    let failed = res.primitives.iter().filter(|p| p.is_none()).count();
    if failed > 0 {
        warn!("{failed} of {} segments failed to integrate", res.primitives.len());
    }
    Ok(())
}

pub fn complete(a: &CompleteArgs, seed: u64) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let sparse = match (&a.sparse, a.samples) {
        (Some(path), _) => SparseDepth::load(path)?,
        (None, Some(n)) => {
            let d = bundle.gt_depth.as_ref().ok_or_else(|| {
                CliError::Usage("--samples needs a bundle with depth.f32".into())
            })?;
            SparseDepth::from_depth_map(d, n, seed)
        }
        (None, None) => bundle.sparse_depth.clone().ok_or_else(|| {
            CliError::Usage("no --sparse given and the bundle has no sparse_depth.txt".into())
        })?,
    };
    let cfg = CompletionConfig {
        fit: a.fit,
        d_min: a.d_min,
        d_max: a.d_max,
        mode: a.mode,
        ..Default::default()
    };
    let res = completion::complete(&bundle, &sparse, &cfg)?;
    io::write_depth_f32(&a.out, &res.depth.depth)?;
    if let Some(ply) = &a.ply {
        let cloud = fuse(&res.scaled, &bundle.intr, Some(&bundle.image));
        io::write_ply(ply, &cloud)?;
    }
    if let Some(path) = &a.provenance {
        let codes: Vec<u8> = res
            .depth
            .provenance
            .iter()
            .map(|p| match p {
                Provenance::Undefined => 0,
                Provenance::Primitive => 1,
                Provenance::Measured => 2,
                Provenance::Interpolated => 3,
            })
            .collect();
        io::write_bytes(path, &codes)?;
    }
    info!(
        "{} primitives scaled, {} discarded",
        res.scaled.len(),
        res.discarded
    );
    Ok(())
}

pub fn sfm(a: &SfmArgs) -> Result<()> {
    let reference = load_bundle(&a.reference)?;
    let targets = a
        .targets
        .iter()
        .map(load_bundle)
        .collect::<std::result::Result<Vec<FrameBundle>, _>>()?;
    let mut cfg = OptimizerConfig::default();
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(n) = a.levels {
        cfg.levels = n;
    }
    let out = sfm_from_bundles(&reference, &targets, a.mode, &Default::default(), &cfg)?;
    create_dir(&a.out)?;
    let mut lines = superprim::eval::format_tum_line(reference.timestamp, &Pose::identity());
    lines.push('\n');
    for (b, p) in targets.iter().zip(&out.result.poses) {
        lines.push_str(&superprim::eval::format_tum_line(b.timestamp, p));
        lines.push('\n');
    }
    write_text(&a.out.join("poses.txt"), &lines)?;
    let cloud = fuse(&out.primitives, &reference.intr, Some(&reference.image));
    io::write_ply(a.out.join("cloud.ply"), &cloud)?;
    let depth = render_depth(&cloud, &reference.intr, &Pose::identity());
    io::write_depth_f32(a.out.join("depth.f32"), &depth.depth)?;
    let mut scales = String::new();
    for sp in &out.primitives {
        let p = sp.prim.anchor();
        scales.push_str(&format!("{} {} {:.9}\n", p.u, p.v, sp.log_scale));
    }
    write_text(&a.out.join("log_scales.txt"), &scales)?;
    info!(
        "cost {:.6e} -> {:.6e}",
        out.result.initial_cost, out.result.final_cost
    );
    Ok(())
}

/// Sub-directories of `dir` holding bundles, in name order.
fn bundle_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("intrinsics.txt").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn vo(a: &VoArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => crate::config::load_vo_config(path)?,
        None => Default::default(),
    };
    let dirs = bundle_dirs(&a.frames)?;
    let frames = dirs
        .iter()
        .map(load_bundle)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let out = run_vo(&frames, &cfg)?;
    create_dir(&a.out)?;
    Trajectory::new(out.poses.clone())?.save(a.out.join("trajectory.txt"))?;
    for (id, cloud) in &out.keyframe_clouds {
        io::write_ply(a.out.join(format!("keyframe_{id:04}.ply")), cloud)?;
    }
    let mut log = String::new();
    for l in &out.log {
        log.push_str(&l.to_line());
        log.push('\n');
    }
    if let Some(f) = out.lost_at {
        log.push_str(&format!("lost frame={f}\n"));
        warn!("tracking lost at frame {f}; trajectory is partial");
    }
    write_text(&a.out.join("log.txt"), &log)?;
    Ok(())
}

fn load_depth(path: &Path, intr: &Intrinsics) -> Result<ImageBuffer> {
    Ok(io::read_depth_f32(path, intr.width, intr.height)?)
}

pub fn eval_depth(a: &EvalDepthArgs) -> Result<()> {
    let intr = Intrinsics::load(&a.intr)?;
    let mut pred = load_depth(&a.pred, &intr)?;
    let gt = load_depth(&a.gt, &intr)?;
    if a.median_scale {
        let s = median_scale(&pred, &gt)?;
        pred.data_mut().iter_mut().for_each(|x| *x *= s);
        println!("scale {s:.9}");
    }
    let r = depth_metrics(&pred, &gt, a.d_min, a.d_max)?;
    println!("mae_mm {:.6}", r.mae);
    println!("rmse_mm {:.6}", r.rmse);
    println!("imae_1_per_km {:.6}", r.imae);
    println!("irmse_1_per_km {:.6}", r.irmse);
    println!("pixels {}", r.count);
    Ok(())
}

pub fn eval_ate(a: &EvalAteArgs) -> Result<()> {
    let est = Trajectory::load(&a.est)?;
    let gt = Trajectory::load(&a.gt)?;
    let r = ate(&est, &gt, a.tol)?;
    println!("ATE {:.6}", r.rmse);
    println!("pairs {}", r.count);
    if !r.similarity {
        println!("alignment translation-only");
    }
    Ok(())
}
