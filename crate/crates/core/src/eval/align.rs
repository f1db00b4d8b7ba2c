//! Similarity alignment of trajectories and absolute trajectory error.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

use super::trajectory::Trajectory;

/// Timestamp association tolerance in seconds.
pub const DEFAULT_ASSOCIATION_TOL: f64 = 0.02;

/// `x -> scale * rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Pairs estimated and ground-truth positions whose timestamps differ by at
/// most `tol`, greedily by increasing time difference, each pose used once.
pub fn associate(est: &Trajectory, gt: &Trajectory, tol: f64) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let g = gt.entries();
    let mut cands = Vec::new();
    for (i, (t, _)) in est.entries().iter().enumerate() {
        let j = g.partition_point(|(s, _)| s < t);
        for k in [j.wrapping_sub(1), j] {
            if let Some((s, _)) = g.get(k) {
                let dt = (s - t).abs();
                if dt <= tol {
                    cands.push((dt, i, k));
                }
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; est.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, k) in cands {
        if used_e[i] || used_g[k] {
            continue;
        }
        used_e[i] = true;
        used_g[k] = true;
        pairs.push((i, k));
    }
    pairs.sort_unstable();
    pairs
        .into_iter()
        .map(|(i, k)| (*est.entries()[i].1.translation(), *g[k].1.translation()))
        .collect()
}

/// Closed-form least-squares similarity mapping `est` onto `gt`.
pub fn align_points(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Sim3> {
    if est.len() != gt.len() {
        return Err(Error::Alignment("point counts differ".into()));
    }
    if est.len() < 3 {
        return Err(Error::Alignment(format!(
            "{} associated poses, need at least 3",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<Vector3<f64>>() / n;
    let mg = gt.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let (de, dg) = (e - me, g - mg);
        cov += dg * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;
    let svd = cov.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-9 * sv[0] || var_e <= 0.0 {
        return Err(Error::Alignment(
            "degenerate configuration (coincident or collinear positions)".into(),
        ));
    }
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let trace: f64 = (Matrix3::from_diagonal(&svd.singular_values) * s).trace();
    let scale = trace / var_e;
    let translation = mg - scale * rotation * me;
    Ok(Sim3 {
        rotation,
        translation,
        scale,
    })
}

/// Similarity alignment of associated positions, with per-pair residual
/// norms.
pub fn align_sim3(est: &Trajectory, gt: &Trajectory, tol: f64) -> Result<(Sim3, Vec<f64>)> {
    let pairs = associate(est, gt, tol);
    let (e, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let sim = align_points(&e, &g)?;
    let res = e.iter().zip(&g).map(|(e, g)| (sim.apply(e) - g).norm()).collect();
    Ok((sim, res))
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// RMSE of position residuals after similarity alignment.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, tol: f64) -> Result<f64> {
    let (_, res) = align_sim3(est, gt, tol)?;
    Ok(rms(&res))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AteReport {
    pub rmse: f64,
    /// False when the ground truth was too degenerate for a similarity and
    /// only the centroids were matched.
    pub similarity: bool,
    pub count: usize,
}

/// [`ate_rmse`], falling back to centroid alignment when the ground-truth
/// positions do not span at least a plane (e.g. a static camera).
pub fn ate(est: &Trajectory, gt: &Trajectory, tol: f64) -> Result<AteReport> {
    let pairs = associate(est, gt, tol);
    if pairs.is_empty() {
        return Err(Error::Alignment("no associated poses".into()));
    }
    let (e, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    match align_points(&e, &g) {
        Ok(sim) => {
            let res: Vec<f64> = e.iter().zip(&g).map(|(e, g)| (sim.apply(e) - g).norm()).collect();
            Ok(AteReport {
                rmse: rms(&res),
                similarity: true,
                count: e.len(),
            })
        }
        Err(_) => {
            let n = e.len() as f64;
            let off = g.iter().sum::<Vector3<f64>>() / n - e.iter().sum::<Vector3<f64>>() / n;
            let res: Vec<f64> = e.iter().zip(&g).map(|(e, g)| (e + off - g).norm()).collect();
            Ok(AteReport {
                rmse: rms(&res),
                similarity: false,
                count: e.len(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn traj(points: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| (i as f64 * 0.1, Pose::from_translation(Vector3::from(*p))))
                .collect(),
        )
        .unwrap()
    }

    const PTS: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]];

    #[test]
    fn identity_alignment() {
        let t = traj(&PTS);
        let (s, r) = align_sim3(&t, &t, 0.02).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12);
        assert!((s.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(r.iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn half_scale_and_offset() {
        let half: Vec<[f64; 3]> = PTS.iter().map(|p| [p[0] / 2.0, p[1] / 2.0, p[2] / 2.0]).collect();
        let (s, _) = align_sim3(&traj(&half), &traj(&PTS), 0.02).unwrap();
        assert!((s.scale - 2.0).abs() < 1e-12);
        let off: Vec<[f64; 3]> = PTS.iter().map(|p| [p[0] + 0.1, p[1] + 0.1, p[2] + 0.1]).collect();
        assert!(ate_rmse(&traj(&off), &traj(&PTS), 0.02).unwrap() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let t = traj(&PTS[..2]);
        assert!(align_sim3(&t, &t, 0.02).is_err());
        let line = traj(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(align_sim3(&line, &line, 0.02).is_err());
        let still = traj(&[[0.0; 3]; 1]);
        let r = ate(&still, &still, 0.02).unwrap();
        assert!(!r.similarity && r.rmse == 0.0);
    }
}
