//! Rigid transforms and their tangent-space increments.
//!
//! A [`Pose`] maps points from a source frame into a destination frame,
//! `x_dst = R x_src + t`. Camera poses are camera-to-world unless a name
//! says otherwise. Increments are applied on the left, i.e. as a
//! perturbation expressed in the destination (world) frame:
//! `retract(T, xi) = exp(xi) * T`.

use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

const SMALL_ANGLE: f64 = 1e-5;

/// Tangent-space increment `(rho, omega)`: translational part first.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PoseIncrement(pub Vector6<f64>);

impl PoseIncrement {
    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self(Vector6::new(
            translation.x,
            translation.y,
            translation.z,
            rotation.x,
            rotation.y,
            rotation.z,
        ))
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

impl std::ops::Neg for PoseIncrement {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

#[inline]
pub(crate) fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Nearest rotation matrix in the Frobenius sense.
fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    // Quaternion route is stable near both 0 and pi.
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    q.scaled_axis()
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * b + k * k * c
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 (to 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(err < 1e-9) || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "rotation is not orthonormal (deviation {err:e})"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: t,
        }
    }

    /// Pose of a camera at `eye` looking at `target`, with image `-v`
    /// direction roughly along `up` (camera looks down +z, y points down).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = (-up).cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Self {
            rotation: r,
            translation: eye,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn exp(xi: &PoseIncrement) -> Self {
        let w = xi.rotation();
        Self {
            rotation: so3_exp(&w),
            translation: left_jacobian(&w) * xi.translation(),
        }
    }

    pub fn log(&self) -> PoseIncrement {
        let w = so3_log(&self.rotation);
        let v = left_jacobian(&w);
        let rho = v.try_inverse().unwrap_or_else(Matrix3::identity) * self.translation;
        PoseIncrement::new(rho, w)
    }

    /// Left update `exp(xi) * self`, followed by projection of the rotation
    /// back onto SO(3).
    pub fn retract(&self, xi: &PoseIncrement) -> Self {
        if xi.0 == Vector6::zeros() {
            return *self;
        }
        let mut out = Self::exp(xi) * *self;
        out.rotation = project_to_rotation(&out.rotation);
        out
    }

    /// Scales the translation; used for similarity gauges.
    pub fn with_scaled_translation(&self, s: f64) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        *self * *rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.rotation - b.rotation).amax() < tol && (a.translation - b.translation).amax() < tol
    }

    fn random_inc(rng: &mut impl Rng, scale: f64) -> PoseIncrement {
        PoseIncrement(Vector6::from_fn(|_, _| rng.gen_range(-scale..scale)))
    }

    #[test]
    fn zero_increment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Pose::exp(&random_inc(&mut rng, 1.0));
        assert!(close(&t.retract(&PoseIncrement::zero()), &t, 1e-12));
    }

    #[test]
    fn pure_translation() {
        let t = Vector3::new(0.3, -1.0, 2.5);
        let p = Pose::identity().retract(&PoseIncrement::new(t, Vector3::zeros()));
        assert!((p.translation - t).amax() < 1e-15);
        assert!((p.rotation - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = Pose::identity()
            .retract(&PoseIncrement::new(Vector3::zeros(), Vector3::new(0.0, 0.0, FRAC_PI_2)));
        let x = p.transform(&Vector3::new(1.0, 0.0, 0.0));
        assert!((x - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-9);
    }

    #[test]
    fn increments_act_on_the_left() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Pose::exp(&random_inc(&mut rng, 1.0));
        let xi = random_inc(&mut rng, 0.5);
        assert!(close(&t.retract(&xi), &(Pose::exp(&xi) * t), 1e-12));
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.001, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity(), Vector3::zeros()).is_ok());
    }

    #[test]
    fn group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = Pose::exp(&random_inc(&mut rng, 2.0));
            let b = Pose::exp(&random_inc(&mut rng, 2.0));
            let c = Pose::exp(&random_inc(&mut rng, 2.0));
            assert!(close(&((a * b) * c), &(a * (b * c)), 1e-12));
            assert!(close(&(a * a.inverse()), &Pose::identity(), 1e-12));
        }
    }

    #[test]
    fn long_retraction_chain_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Pose::identity();
        for _ in 0..10_000 {
            t = t.retract(&random_inc(&mut rng, 0.3));
        }
        let drift = (t.rotation.transpose() * t.rotation - Matrix3::identity()).amax();
        assert!(drift < 1e-6, "drift {drift:e}");
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_near_pi() {
        let w = Vector3::new(0.0, 0.0, std::f64::consts::PI - 1e-7);
        let p = Pose::exp(&PoseIncrement::new(Vector3::new(1.0, 2.0, 3.0), w));
        assert!(close(&Pose::exp(&p.log()), &p, 1e-6));
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(v in proptest::array::uniform6(-1.5f64..1.5)) {
            let xi = PoseIncrement(Vector6::from_row_slice(&v));
            let t = Pose::exp(&xi);
            let back = t.log();
            prop_assert!((back.0 - xi.0).amax() < 1e-9);
        }

        #[test]
        fn retract_then_undo(
            a in proptest::array::uniform6(-1.0f64..1.0),
            b in proptest::array::uniform6(-1.0f64..1.0),
        ) {
            let t = Pose::exp(&PoseIncrement(Vector6::from_row_slice(&a)));
            let moved = t.retract(&PoseIncrement(Vector6::from_row_slice(&b)));
            // Increment recovered from the relative transform undoes the move.
            let xi = (moved * t.inverse()).log();
            let back = moved.retract(&-xi);
            prop_assert!(close(&back, &t, 1e-9));
        }
    }
}
