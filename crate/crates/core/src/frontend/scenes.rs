//! Seeded scene presets used by the CLI, tests and benchmarks.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{Intrinsics, Pose, PoseIncrement};

use super::synth::{synth_scene, SceneObject, SceneSpec, Shape, Texture};

/// Default working camera: 160x120 pixels.
pub fn working_camera() -> Intrinsics {
    Intrinsics::new(140.0, 140.0, 79.5, 59.5, 160, 120).expect("valid calibration")
}

fn texture(rng: &mut impl Rng) -> Texture {
    Texture {
        base: [
            rng.gen_range(0.35..0.65),
            rng.gen_range(0.35..0.65),
            rng.gen_range(0.35..0.65),
        ],
        contrast: 0.6,
        frequency: rng.gen_range(1.5..2.5),
        seed: rng.gen(),
    }
}

fn rotation_rows(r: &Rotation3<f64>) -> [[f64; 3]; 3] {
    let m = r.matrix();
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Tilted background plane, a sphere and a box in front of it.
fn plane_sphere_box(rng: &mut impl Rng) -> Vec<SceneObject> {
    let tilt = Vector3::new(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), -1.0);
    let wall_z = rng.gen_range(4.5..5.5);
    let sphere_c = [rng.gen_range(-0.9..-0.3), rng.gen_range(-0.4..0.4), rng.gen_range(2.6..3.2)];
    let box_c = [rng.gen_range(0.3..0.9), rng.gen_range(-0.3..0.3), rng.gen_range(3.0..3.6)];
    let box_rot = Rotation3::from_euler_angles(
        rng.gen_range(-0.4..0.4),
        rng.gen_range(0.3..0.8),
        rng.gen_range(-0.2..0.2),
    );
    vec![
        SceneObject {
            shape: Shape::Plane {
                point: [0.0, 0.0, wall_z],
                normal: [tilt.x, tilt.y, tilt.z],
            },
            texture: texture(rng),
        },
        SceneObject {
            shape: Shape::Sphere {
                center: sphere_c,
                radius: rng.gen_range(0.5..0.7),
            },
            texture: texture(rng),
        },
        SceneObject {
            shape: Shape::Cuboid {
                center: box_c,
                half_extents: [
                    rng.gen_range(0.3..0.45),
                    rng.gen_range(0.3..0.45),
                    rng.gen_range(0.3..0.45),
                ],
                rotation: rotation_rows(&box_rot),
            },
            texture: texture(rng),
        },
    ]
}

fn mean_depth(spec: &SceneSpec, seed: u64) -> Result<f64> {
    let probe = SceneSpec {
        trajectory: vec![spec.trajectory[0]],
        ..spec.clone()
    };
    let out = synth_scene(&probe, seed)?;
    let d = out.bundles[0].gt_depth.as_ref().expect("synthetic depth");
    let valid: Vec<f64> = d.data().iter().copied().filter(|&x| x > 0.0).collect();
    Ok(valid.iter().sum::<f64>() / valid.len().max(1) as f64)
}

/// Random relative motion whose translation is `baseline` long, mostly
/// lateral, with a small rotation toward the scene.
fn random_view(rng: &mut impl Rng, baseline: f64) -> Pose {
    // Lateral part has unit length so the epipole stays well outside the image.
    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let lateral = Vector3::new(a.cos(), 0.5 * a.sin(), 0.0).normalize();
    let dir = (lateral + Vector3::new(0.0, 0.0, rng.gen_range(-0.25..0.25))).normalize();
    let t = dir * baseline;
    // Turn slightly back toward the scene centre.
    let w = Vector3::new(
        t.y * 0.15 + rng.gen_range(-0.01..0.01),
        -t.x * 0.15 + rng.gen_range(-0.01..0.01),
        rng.gen_range(-0.01..0.01),
    );
    Pose::exp(&PoseIncrement::new(Vector3::zeros(), w)) * Pose::from_translation(t)
}

/// Reference camera at the origin plus `views` supporting views, each with
/// a baseline of `baseline_frac` times the mean reference depth.
pub fn few_view(seed: u64, views: usize, baseline_frac: f64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = plane_sphere_box(&mut rng);
    let mut spec = SceneSpec::new(working_camera(), objects, vec![Pose::identity()]);
    let depth = mean_depth(&spec, seed)?;
    for _ in 0..views {
        let pose = random_view(&mut rng, baseline_frac * depth);
        spec.trajectory.push(pose);
    }
    Ok(spec)
}

/// Two views with the standard 5% baseline.
pub fn two_view(seed: u64) -> Result<SceneSpec> {
    few_view(seed, 1, 0.05)
}

fn orbit_poses(frames: usize, arc_degrees: f64) -> Vec<Pose> {
    let centre = Vector3::new(0.0, 0.0, 3.2);
    let radius = 3.2;
    let arc = arc_degrees.to_radians();
    (0..frames)
        .map(|i| {
            let s = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.0 };
            let a = (s - 0.5) * arc;
            let eye = centre + Vector3::new(a.sin(), 0.05 * (2.0 * a).sin(), -a.cos()) * radius;
            let yaw = 0.25 * arc - (s * arc) * 0.5;
            let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
            Pose::new(r.into_inner(), eye).expect("rotation")
        })
        .collect()
}

/// Re-expresses poses and objects relative to the first camera.
fn relative_to_first(poses: Vec<Pose>, objects: Vec<SceneObject>) -> (Vec<Pose>, Vec<SceneObject>) {
    let first_inv = poses[0].inverse();
    let poses = poses.iter().map(|p| first_inv * *p).collect();
    let objects = objects
        .into_iter()
        .map(|o| transform_object(o, &first_inv))
        .collect();
    (poses, objects)
}

/// Camera sweeping an arc in front of the plane/sphere/box scene while
/// turning half as much as a pure look-at orbit would.
pub fn orbit(seed: u64, frames: usize, arc_degrees: f64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = plane_sphere_box(&mut rng);
    let (trajectory, objects) = relative_to_first(orbit_poses(frames.max(1), arc_degrees), objects);
    Ok(SceneSpec::new(working_camera(), objects, trajectory))
}

/// Same camera pose repeated `frames` times.
pub fn static_camera(seed: u64, frames: usize) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = plane_sphere_box(&mut rng);
    Ok(SceneSpec::new(
        working_camera(),
        objects,
        vec![Pose::identity(); frames],
    ))
}

/// Large spheres in front of a strongly tilted wall, swept by the orbit
/// motion. Segments are cut coarsely so that curvature inside a segment
/// matters.
pub fn curved(seed: u64, frames: usize, arc_degrees: f64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let mut objects = vec![SceneObject {
        shape: Shape::Plane {
            point: [0.0, 0.0, 5.5],
            normal: [rng.gen_range(0.35..0.5), rng.gen_range(-0.2..0.2), -1.0],
        },
        texture: texture(&mut rng),
    }];
    let centres = [(-0.9, -0.35), (0.8, -0.3), (-0.1, 0.55)];
    for (x, y) in centres {
        objects.push(SceneObject {
            shape: Shape::Sphere {
                center: [
                    x + rng.gen_range(-0.1..0.1),
                    y + rng.gen_range(-0.1..0.1),
                    rng.gen_range(3.0..3.5),
                ],
                radius: rng.gen_range(0.6..0.75),
            },
            texture: texture(&mut rng),
        });
    }
    let (trajectory, objects) = relative_to_first(orbit_poses(frames.max(1), arc_degrees), objects);
    let mut spec = SceneSpec::new(working_camera(), objects, trajectory);
    spec.segment_tile = 40;
    Ok(spec)
}

fn transform_object(o: SceneObject, t: &Pose) -> SceneObject {
    let p = |a: [f64; 3]| {
        let q = t.transform(&Vector3::new(a[0], a[1], a[2]));
        [q.x, q.y, q.z]
    };
    let r = t.rotation();
    let d = |a: [f64; 3]| {
        let q = r * Vector3::new(a[0], a[1], a[2]);
        [q.x, q.y, q.z]
    };
    let shape = match o.shape {
        Shape::Plane { point, normal } => Shape::Plane {
            point: p(point),
            normal: d(normal),
        },
        Shape::Sphere { center, radius } => Shape::Sphere {
            center: p(center),
            radius,
        },
        Shape::Cuboid {
            center,
            half_extents,
            rotation,
        } => {
            let m = nalgebra::Matrix3::from_row_slice(&rotation.concat());
            let m = r * m;
            Shape::Cuboid {
                center: p(center),
                half_extents,
                rotation: [
                    [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                    [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                    [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
                ],
            }
        }
    };
    SceneObject { shape, ..o }
}

/// Preset names accepted by [`preset`].
pub const PRESETS: &[&str] = &["two-view", "orbit", "static", "curved", "few-view"];

/// Looks up a preset by name.
pub fn preset(name: &str, seed: u64, frames: usize) -> Option<Result<SceneSpec>> {
    Some(match name {
        "two-view" => two_view(seed),
        "few-view" => few_view(seed, frames.saturating_sub(1).max(1), 0.05),
        "orbit" => orbit(seed, frames, 60.0),
        "static" => static_camera(seed, frames),
        "curved" => curved(seed, frames, 30.0),
        _ => return None,
    })
}
