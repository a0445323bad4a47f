//! Tablet samples to pen commands, paper calibration and the handshake
//! trajectory that precedes command streaming.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{rot_x, rot_z, Pose, Rotation, Twist, Vec3};

/// Lift applied to the pen while hovering, in meters along the paper normal.
pub const HOVER_LIFT: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeleopError {
    #[error("{field} = {value} outside {range}")]
    OutOfRange { field: &'static str, value: f64, range: &'static str },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

/// One tablet reading. Coordinates and pressure are normalized, tilt angles
/// in radians. Azimuth is measured counterclockwise from the tablet +x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabletSample {
    pub p_tx: f64,
    pub p_ty: f64,
    pub pressure: f64,
    pub altitude: f64,
    pub azimuth: f64,
    pub timestamp: f64,
}

impl TabletSample {
    pub fn validate(&self) -> Result<(), TeleopError> {
        let unit = |field, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(TeleopError::OutOfRange { field, value, range: "[0, 1]" })
            }
        };
        unit("p_tx", self.p_tx)?;
        unit("p_ty", self.p_ty)?;
        unit("pressure", self.pressure)?;
        if !(0.0..=FRAC_PI_2).contains(&self.altitude) {
            return Err(TeleopError::OutOfRange { field: "altitude", value: self.altitude, range: "[0, pi/2]" });
        }
        if !(0.0..=std::f64::consts::TAU).contains(&self.azimuth) {
            return Err(TeleopError::OutOfRange { field: "azimuth", value: self.azimuth, range: "[0, 2pi]" });
        }
        if !self.timestamp.is_finite() {
            return Err(TeleopError::OutOfRange { field: "timestamp", value: self.timestamp, range: "finite" });
        }
        Ok(())
    }
}

/// Drawable extents and the paper frame in the drawing-arm base frame. The
/// paper z axis is the outward surface normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperSpec {
    pub p_xmax: f64,
    pub p_ymax: f64,
    pub pose: Pose,
}

impl PaperSpec {
    pub fn normal(&self) -> Vec3 {
        self.pose.transform_vector(&Vec3::z())
    }

    /// Point in paper coordinates.
    pub fn to_paper(&self, world: &Vec3) -> Vec3 {
        self.pose.inverse().transform_point(world)
    }

    pub fn to_world(&self, paper: &Vec3) -> Vec3 {
        self.pose.transform_point(paper)
    }

    pub fn center(&self) -> Vec3 {
        self.to_world(&Vec3::new(0.5 * self.p_xmax, 0.5 * self.p_ymax, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceScale {
    pub f_min: f64,
    pub f_max: f64,
}

impl ForceScale {
    pub fn new(f_min: f64, f_max: f64) -> Result<Self, TeleopError> {
        if !(f_min > 0.0 && f_min < f_max && f_max.is_finite()) {
            return Err(TeleopError::OutOfRange { field: "f_min", value: f_min, range: "(0, f_max)" });
        }
        Ok(Self { f_min, f_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenCommand {
    pub pose: Pose,
    pub force: f64,
    pub in_contact_intent: bool,
}

/// Pen-tip pose in the drawing-arm base frame for a tablet sample.
pub fn map_sample(s: &TabletSample, paper: &PaperSpec) -> Result<Pose, TeleopError> {
    s.validate()?;
    let rotation = rot_z(FRAC_PI_2 - s.azimuth) * rot_x(s.altitude);
    let pen = Pose::new(rotation, Vec3::new(paper.p_xmax * s.p_tx, paper.p_ymax * s.p_ty, 0.0));
    Ok(paper.pose.compose(&pen))
}

pub fn scale_force(pressure: f64, fs: &ForceScale) -> Result<f64, TeleopError> {
    if !(0.0..=1.0).contains(&pressure) {
        return Err(TeleopError::OutOfRange { field: "pressure", value: pressure, range: "[0, 1]" });
    }
    Ok(fs.f_min + pressure * (fs.f_max - fs.f_min))
}

/// Full command for a sample. Zero pressure means hovering: the pose is
/// lifted off the paper and no force is requested.
pub fn pen_command(s: &TabletSample, paper: &PaperSpec, fs: &ForceScale) -> Result<PenCommand, TeleopError> {
    let mut pose = map_sample(s, paper)?;
    if s.pressure > 0.0 {
        Ok(PenCommand { pose, force: scale_force(s.pressure, fs)?, in_contact_intent: true })
    } else {
        pose.translation += paper.normal() * HOVER_LIFT;
        Ok(PenCommand { pose, force: 0.0, in_contact_intent: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub pose: Pose,
    pub rms: f64,
}

/// Least-squares plane through touched end-effector positions. The normal is
/// oriented toward `reference`; the paper x axis follows the first two
/// touches.
pub fn calibrate_plane(points: &[Vec3], reference: &Vec3) -> Result<PlaneFit, TeleopError> {
    if points.len() < 3 {
        return Err(TeleopError::DegenerateGeometry(format!("need 3 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) =
        (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if largest <= 0.0 || middle <= 1e-12 * largest {
        return Err(TeleopError::DegenerateGeometry("touch points are collinear".into()));
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if (reference - centroid).dot(&normal) < 0.0 {
        normal = -normal;
    }
    let project = |p: &Vec3| p - normal * (p - centroid).dot(&normal);
    let origin = project(&points[0]);
    let along = project(&points[1]) - origin;
    if along.norm() < 1e-9 {
        return Err(TeleopError::DegenerateGeometry("first two touches coincide".into()));
    }
    let x = along.normalize();
    let y = normal.cross(&x);
    let m = Matrix3::from_columns(&[x, y, normal]);
    let rotation = Rotation::from_matrix(&m);
    let rms = (smallest.max(0.0) / n).sqrt();
    Ok(PlaneFit { pose: Pose::new(rotation, origin), rms })
}

/// Quintic time scaling with zero boundary velocity and acceleration.
pub fn quintic(tau: f64) -> (f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    (s, ds)
}

/// Straight-line pose interpolation under quintic timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub start: Pose,
    pub end: Pose,
    pub duration: f64,
}

impl Handshake {
    pub fn pose_at(&self, t: f64) -> Pose {
        if t >= self.duration {
            return self.end;
        }
        if t <= 0.0 {
            return self.start;
        }
        let (s, _) = quintic(t / self.duration);
        let translation = self.start.translation.lerp(&self.end.translation, s);
        let rotation = self.start.rotation.slerp(&self.end.rotation, s);
        Pose::new(rotation, translation)
    }

    pub fn twist_at(&self, t: f64) -> Twist {
        if t <= 0.0 || t >= self.duration {
            return Twist::zero();
        }
        let (_, ds) = quintic(t / self.duration);
        let rate = ds / self.duration;
        let delta = self.end.rotation * self.start.rotation.inverse();
        Twist::new(
            (self.end.translation - self.start.translation) * rate,
            crate::se3::rotation_vector(&delta) * rate,
        )
    }

    pub fn is_complete(&self, t: f64) -> bool {
        t >= self.duration
    }
}

/// Trajectory from `current` to `target` taking `duration` seconds.
pub fn handshake(current: &Pose, target: &Pose, duration: f64) -> Result<Handshake, TeleopError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(TeleopError::OutOfRange { field: "duration", value: duration, range: "(0, inf)" });
    }
    Ok(Handshake { start: *current, end: *target, duration })
}
