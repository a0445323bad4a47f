//! Rigid-body transforms and constant-acceleration pose integration.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Rotation = UnitQuaternion<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("degenerate look-at: {0}")]
    DegenerateLookAt(&'static str),
}

pub fn rot_z(angle: f64) -> Rotation {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle)
}

pub fn rot_x(angle: f64) -> Rotation {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle)
}

pub fn rot_y(angle: f64) -> Rotation {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle)
}

/// Representative of the double cover with a nonnegative scalar part.
pub fn canonical(r: &Rotation) -> Rotation {
    if r.w < 0.0 {
        UnitQuaternion::new_unchecked(-r.into_inner())
    } else {
        *r
    }
}

/// Rotation vector (axis times angle, angle in `[0, pi]`).
pub fn rotation_vector(r: &Rotation) -> Vec3 {
    canonical(r).scaled_axis()
}

pub fn exp_rotation(v: &Vec3) -> Rotation {
    UnitQuaternion::from_scaled_axis(*v)
}

/// Angle between two rotations in radians.
pub fn rotation_distance(a: &Rotation, b: &Rotation) -> f64 {
    a.angle_to(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { rotation: Rotation::identity(), translation: Vec3::new(x, y, z) }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self { rotation, translation: Vec3::zeros() }
    }

    /// `self ∘ other`: maps points of `other`'s child frame into `self`'s parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        invert(self)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|c| c.is_finite())
            && self.rotation.coords.iter().all(|c| c.is_finite())
    }

    /// Re-normalizes the quaternion part.
    pub fn renormalized(&self) -> Pose {
        Pose {
            rotation: UnitQuaternion::new_normalize(self.rotation.into_inner()),
            translation: self.translation,
        }
    }

    /// Translation distance and rotation angle to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            (self.translation - other.translation).norm(),
            rotation_distance(&self.rotation, &other.rotation),
        )
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn invert(p: &Pose) -> Pose {
    let r = p.rotation.inverse();
    Pose { rotation: r, translation: -(r * p.translation) }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    /// Linear stacked over angular.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: Vec3::new(v[0], v[1], v[2]),
            angular: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatialAccel {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl SpatialAccel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Twist::new(self.linear, self.angular).to_vector()
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|c| c.is_finite())
    }
}

/// Advances `x` by one constant-acceleration step.
///
/// Translation moves by `v dt + a dt²/2`. The orientation increment is the
/// rotation vector `ω dt + α dt²/2`, applied through the exponential map on the
/// left (world frame).
pub fn integrate_pose(x: &Pose, v: &Twist, a: &SpatialAccel, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    let half_dt2 = 0.5 * dt * dt;
    let translation = x.translation + v.linear * dt + a.linear * half_dt2;
    let increment = v.angular * dt + a.angular * half_dt2;
    let rotation = exp_rotation(&increment) * x.rotation;
    Pose { rotation, translation }
}

/// Twist after one constant-acceleration step.
pub fn integrate_twist(v: &Twist, a: &SpatialAccel, dt: f64) -> Twist {
    Twist { linear: v.linear + a.linear * dt, angular: v.angular + a.angular * dt }
}

/// Camera orientation at `eye` whose +z axis points at `target`, rolled so
/// that +y is as close as possible to `up_hint`.
pub fn look_at(eye: &Vec3, target: &Vec3, up_hint: &Vec3) -> Result<Rotation, Se3Error> {
    let view = target - eye;
    let dist = view.norm();
    if !(dist > 1e-6) {
        return Err(Se3Error::DegenerateLookAt("eye and target coincide"));
    }
    let z = view / dist;
    let up_perp = up_hint - z * up_hint.dot(&z);
    let up_norm = up_perp.norm();
    let hint_norm = up_hint.norm();
    if hint_norm == 0.0 || !(up_norm > 1e-9 * hint_norm) {
        return Err(Se3Error::DegenerateLookAt("up hint parallel to view direction"));
    }
    let y = up_perp / up_norm;
    let x = y.cross(&z);
    let m = Matrix3::from_columns(&[x, y, z]);
    Ok(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)))
}

/// Rotation about an arbitrary axis (normalized internally).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Rotation {
    match Unit::try_new(*axis, 1e-12) {
        Some(a) => UnitQuaternion::from_axis_angle(&a, angle),
        None => Rotation::identity(),
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        let (dt, dr) = a.distance_to(b);
        dt < tol && dr < tol
    }

    #[test]
    fn elementary_rotations() {
        assert!(rot_z(0.0).angle() < 1e-15);
        let v = rot_x(PI) * Vec3::new(0.0, 1.0, 0.0);
        assert!((v - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        let r = rot_z(PI / 2.0 - PI / 2.0) * rot_x(0.0);
        assert!(r.angle() < 1e-15);
        let v = rot_z(PI / 2.0) * Vec3::x();
        assert!((v - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn compose_and_invert() {
        let p = Pose::new(rot_z(0.3) * rot_x(-1.1), Vec3::new(0.2, -0.4, 1.5));
        assert!(pose_close(&compose(&Pose::identity(), &p), &p, 1e-15));
        assert!(pose_close(&compose(&p, &invert(&p)), &Pose::identity(), 1e-12));
        assert!(pose_close(&invert(&invert(&p)), &p, 1e-12));
        let t = compose(&Pose::from_translation(1.0, 0.0, 0.0), &Pose::from_translation(0.0, 2.0, 0.0));
        assert_eq!(t.translation, Vec3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn integrate_identity_and_translation() {
        let x = Pose::new(rot_x(0.4), Vec3::new(1.0, 2.0, 3.0));
        let same = integrate_pose(&x, &Twist::zero(), &SpatialAccel::zero(), 0.033);
        assert_eq!(same.translation, x.translation);
        assert!(same.rotation.angle_to(&x.rotation) < 1e-15);

        let v = Twist::new(Vec3::new(1.0, 0.0, 0.0), Vec3::zeros());
        let moved = integrate_pose(&Pose::identity(), &v, &SpatialAccel::zero(), 0.033);
        assert!((moved.translation - Vec3::new(0.033, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn integrate_pure_angular_accel_matches_substepping() {
        // Reference: 10^4 explicit substeps of constant angular acceleration.
        let alpha = Vec3::new(0.0, 0.0, 2.0);
        let dt = 0.1;
        let steps = 10_000;
        let h = dt / steps as f64;
        let mut r = Rotation::identity();
        let mut w = Vec3::zeros();
        for _ in 0..steps {
            let w_mid = w + alpha * (0.5 * h);
            r = exp_rotation(&(w_mid * h)) * r;
            w += alpha * h;
        }
        let x = integrate_pose(
            &Pose::identity(),
            &Twist::zero(),
            &SpatialAccel::new(Vec3::zeros(), alpha),
            dt,
        );
        assert!(x.rotation.angle_to(&r) < 1e-6);
        assert!(x.rotation.angle_to(&rot_z(0.01)) < 1e-12);
    }

    #[test]
    fn look_at_down() {
        let r = look_at(&Vec3::new(0.0, 0.0, 1.0), &Vec3::zeros(), &Vec3::y()).unwrap();
        assert!((r * Vec3::z() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((r * Vec3::y() - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn look_at_degenerate() {
        assert!(look_at(&Vec3::zeros(), &Vec3::zeros(), &Vec3::y()).is_err());
        assert!(look_at(&Vec3::zeros(), &Vec3::z(), &Vec3::z()).is_err());
        assert!(look_at(&Vec3::zeros(), &Vec3::z(), &Vec3::zeros()).is_err());
    }

    #[test]
    fn canonical_has_nonnegative_scalar() {
        let q = UnitQuaternion::new_unchecked(-rot_z(0.5).into_inner());
        let c = canonical(&q);
        assert!(c.w >= 0.0);
        assert!(c.angle_to(&rot_z(0.5)) < 1e-12);
    }
}
