//! Inverse kinematics for 7-DoF shoulder–elbow–wrist arms.
//!
//! The analytic solver works on the product-of-exponentials form of the
//! chain: with all joints at zero the arm is straight along its first axis,
//! joints 1–3 intersect at the shoulder, joint 4 is the elbow and joints 5–7
//! intersect at the wrist. The elbow's swivel about the shoulder–wrist line is
//! the arm angle, which the caller passes as the redundancy parameter. A short
//! damped-least-squares pass absorbs small deviations from that ideal
//! geometry.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix6, Vector6};

use super::kinematics::jacobian_from_poses;
use super::{fk, ArmError, JointVector, KinematicChain};
use crate::se3::{axis_angle, rot_y, rot_z, rotation_vector, Pose, Rotation, Vec3};

pub const POSITION_TOLERANCE: f64 = 1e-4;
pub const ORIENTATION_TOLERANCE: f64 = 1e-3;

pub trait IkSolver: Send + Sync {
    fn name(&self) -> &'static str;

    /// Joint vector reaching `target` within tolerance and joint limits.
    fn solve(
        &self,
        chain: &KinematicChain,
        target: &Pose,
        seed: &JointVector,
        redundancy: f64,
    ) -> Result<JointVector, ArmError>;
}

/// Zero-configuration geometry of a shoulder–elbow–wrist arm.
#[derive(Debug, Clone, PartialEq)]
pub struct SrsGeometry {
    pub shoulder: Vec3,
    pub upper_arm: f64,
    pub forearm: f64,
    /// Wrist center at zero configuration.
    pub wrist_home: Vec3,
    /// End-effector pose at zero configuration.
    pub ee_home: Pose,
    /// Sign relating each joint angle to the canonical z/y axis rotation.
    pub signs: [f64; 7],
    /// Largest deviation, in meters, from the ideal layout.
    pub deviation: f64,
}

impl SrsGeometry {
    /// Extracts the layout, or `None` when the chain is not (nearly) a
    /// shoulder–elbow–wrist arm.
    pub fn from_chain(chain: &KinematicChain) -> Option<SrsGeometry> {
        if chain.dof() != 7 {
            return None;
        }
        let home = fk(chain, &JointVector::zeros(7)).ok()?;
        let axes = home.joint_axes(chain);
        let mut signs = [0.0; 7];
        for (i, (_, z)) in axes.iter().enumerate() {
            let want = if i % 2 == 0 { Vec3::z() } else { Vec3::y() };
            let d = z.dot(&want);
            if d.abs() < 0.995 {
                return None;
            }
            signs[i] = d.signum();
        }
        let shoulder = Vec3::new(0.0, 0.0, axes[1].0.z);
        let elbow = Vec3::new(0.0, 0.0, axes[3].0.z);
        let wrist = Vec3::new(0.0, 0.0, axes[5].0.z);
        // Off-axis offsets of the joint centers, including the 1st joint.
        let mut deviation: f64 = 0.0;
        for (p, _) in &axes {
            deviation = deviation.max(p.xy().norm());
        }
        let upper_arm = elbow.z - shoulder.z;
        let forearm = wrist.z - elbow.z;
        if !(upper_arm > 1e-6 && forearm > 1e-6) || deviation > 0.1 {
            return None;
        }
        Some(SrsGeometry { shoulder, upper_arm, forearm, wrist_home: wrist, ee_home: home.ee, signs, deviation })
    }

    /// Analytic joint solutions for one arm angle, one per branch that exists.
    pub fn solutions(&self, target: &Pose, arm_angle: f64, seed: &JointVector) -> Vec<JointVector> {
        let r07 = target.rotation * self.ee_home.rotation.inverse();
        let wrist = target.translation - r07 * (self.ee_home.translation - self.wrist_home);
        let x_sw = wrist - self.shoulder;
        let len = x_sw.norm();
        let (a, b) = (self.upper_arm, self.forearm);
        let cos4 = (len * len - a * a - b * b) / (2.0 * a * b);
        if !(cos4.abs() <= 1.0 + 1e-9) || len < 1e-9 {
            return Vec::new();
        }
        let cos4 = cos4.clamp(-1.0, 1.0);
        let seed_canon: Vec<f64> = (0..7).map(|i| seed[i] * self.signs[i]).collect();
        let mut out = Vec::with_capacity(8);
        for gc4 in [1.0, -1.0] {
            let t4 = gc4 * cos4.acos();
            let r03 = shoulder_rotation(&x_sw, t4, a, b, arm_angle);
            let r34 = rot_y(t4);
            let r47 = (r03 * r34).inverse() * r07;
            let m03 = *r03.to_rotation_matrix().matrix();
            let m47 = *r47.to_rotation_matrix().matrix();
            for gc2 in [1.0, -1.0] {
                let (t1, t2, t3) = zyz(&m03, gc2, seed_canon[0]);
                for gc6 in [1.0, -1.0] {
                    let (t5, t6, t7) = zyz(&m47, gc6, seed_canon[4]);
                    let canon = [t1, t2, t3, t4, t5, t6, t7];
                    if canon.iter().all(|v| v.is_finite()) {
                        out.push(JointVector::from_iterator(7, (0..7).map(|i| canon[i] * self.signs[i])));
                    }
                }
            }
            if cos4.abs() == 1.0 {
                break;
            }
        }
        out
    }

    /// Arm angle of configuration `q`, consistent with [`Self::solutions`].
    pub fn arm_angle(&self, q: &JointVector) -> f64 {
        let c: Vec<f64> = (0..7).map(|i| q[i] * self.signs[i]).collect();
        let r03 = rot_z(c[0]) * rot_y(c[1]) * rot_z(c[2]);
        let v = Vec3::new(self.forearm * c[3].sin(), 0.0, self.upper_arm + self.forearm * c[3].cos());
        let x_sw = r03 * v;
        let reference = shoulder_rotation(&x_sw, c[3], self.upper_arm, self.forearm, 0.0);
        let delta = rotation_vector(&(r03 * reference.inverse()));
        let n = x_sw.norm();
        if n < 1e-12 {
            return 0.0;
        }
        let psi = delta.dot(&(x_sw / n));
        // The rotation vector covers [-pi, pi]; keep the sign of the swivel.
        if psi > PI {
            psi - TAU
        } else {
            psi
        }
    }
}

/// Shoulder rotation placing the wrist on `x_sw` with elbow angle `t4`,
/// swiveled by `arm_angle` about the shoulder–wrist line.
fn shoulder_rotation(x_sw: &Vec3, t4: f64, upper: f64, fore: f64, arm_angle: f64) -> Rotation {
    let v = Vec3::new(fore * t4.sin(), 0.0, upper + fore * t4.cos());
    let r = x_sw.xy().norm();
    let t1 = if r > 1e-12 { x_sw.y.atan2(x_sw.x) } else { 0.0 };
    let t2 = r.atan2(x_sw.z) - v.x.atan2(v.z);
    let reference = rot_z(t1) * rot_y(t2);
    axis_angle(x_sw, arm_angle) * reference
}

/// `R = Rz(a) Ry(b) Rz(c)`; `sign_b` picks the branch of `b`. At the
/// singularity `a` is set to `a_hint`.
fn zyz(m: &Matrix3<f64>, sign_b: f64, a_hint: f64) -> (f64, f64, f64) {
    let sb = (m[(0, 2)].powi(2) + m[(1, 2)].powi(2)).sqrt();
    if sb < 1e-10 {
        let b = if m[(2, 2)] > 0.0 { 0.0 } else { PI };
        let a = a_hint;
        let rest = (rot_z(a) * rot_y(b)).inverse().to_rotation_matrix().matrix() * m;
        let c = rest[(1, 0)].atan2(rest[(0, 0)]);
        return (a, b, c);
    }
    let b = (sign_b * sb).atan2(m[(2, 2)]);
    let a = (sign_b * m[(1, 2)]).atan2(sign_b * m[(0, 2)]);
    let c = (sign_b * m[(2, 1)]).atan2(-sign_b * m[(2, 0)]);
    (a, b, c)
}

/// Shifts each joint by whole turns to land inside its limits, preferring
/// the value nearest the seed. `None` if some joint cannot fit.
fn wrap_into_limits(chain: &KinematicChain, q: &JointVector, seed: &JointVector) -> Option<JointVector> {
    let mut out = q.clone();
    for (i, j) in chain.joints.iter().enumerate() {
        let mut best: Option<f64> = None;
        for k in [-1.0, 0.0, 1.0] {
            let v = q[i] + k * TAU;
            if v >= j.lower - 1e-12 && v <= j.upper + 1e-12 {
                let v = v.clamp(j.lower, j.upper);
                if best.is_none_or(|b| (v - seed[i]).abs() < (b - seed[i]).abs()) {
                    best = Some(v);
                }
            }
        }
        out[i] = best?;
    }
    Some(out)
}

fn pose_error(target: &Pose, current: &Pose) -> Vector6<f64> {
    let dp = target.translation - current.translation;
    let dr = rotation_vector(&(target.rotation * current.rotation.inverse()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

fn within_tolerance(target: &Pose, reached: &Pose) -> bool {
    let (dp, dr) = target.distance_to(reached);
    dp < POSITION_TOLERANCE && dr < ORIENTATION_TOLERANCE
}

/// Damped least squares from `start`, clamped to joint limits each step.
fn dls_refine(chain: &KinematicChain, target: &Pose, start: &JointVector, iterations: usize) -> JointVector {
    let mut q = start.clone();
    let mut lambda = 1e-3;
    let mut err = match fk(chain, &q) {
        Ok(p) => pose_error(target, &p.ee),
        Err(_) => return q,
    };
    for _ in 0..iterations {
        if err.fixed_rows::<3>(0).norm() < 1e-12 && err.fixed_rows::<3>(3).norm() < 1e-12 {
            break;
        }
        let poses = fk(chain, &q).expect("length checked");
        let j = jacobian_from_poses(chain, &poses);
        let jjt: Matrix6<f64> = &j * j.transpose() + Matrix6::identity() * (lambda * lambda);
        let Some(chol) = jjt.cholesky() else { break };
        let dq = j.transpose() * chol.solve(&err);
        let next = chain.clamp_to_limits(&(&q + dq));
        let next_err = pose_error(target, &fk(chain, &next).expect("length checked").ee);
        if next_err.norm() < err.norm() {
            q = next;
            err = next_err;
            lambda = (lambda * 0.5).max(1e-6);
        } else {
            lambda *= 10.0;
            if lambda > 1.0 {
                break;
            }
        }
    }
    q
}

/// Closed-form shoulder–elbow–wrist solver with a least-squares polish.
///
/// Branches at the requested arm angle are tried first; if none respects the
/// joint limits, the arm angle is swept outward in 5° steps. Among feasible
/// branches the one nearest the seed wins.
#[derive(Debug, Clone, Copy, Default)]
pub struct SrsAnalyticIk;

impl IkSolver for SrsAnalyticIk {
    fn name(&self) -> &'static str {
        "srs-analytic"
    }

    fn solve(
        &self,
        chain: &KinematicChain,
        target: &Pose,
        seed: &JointVector,
        redundancy: f64,
    ) -> Result<JointVector, ArmError> {
        chain.check_len(seed)?;
        if !target.is_finite() {
            return Err(ArmError::Unreachable("target is not finite".into()));
        }
        let geom = SrsGeometry::from_chain(chain).ok_or_else(|| {
            ArmError::InvalidChain("chain is not a shoulder-elbow-wrist 7-DoF arm".into())
        })?;
        let step = 5f64.to_radians();
        for k in 0..=36 {
            let offsets: &[f64] = if k == 0 { &[0.0] } else { &[1.0, -1.0] };
            for &dir in offsets {
                let psi = redundancy + dir * k as f64 * step;
                let mut feasible: Vec<JointVector> = geom
                    .solutions(target, psi, seed)
                    .iter()
                    .filter_map(|q| wrap_into_limits(chain, q, seed))
                    .collect();
                feasible.sort_by(|a, b| (a - seed).norm().total_cmp(&(b - seed).norm()));
                for q in feasible {
                    let refined = if geom.deviation > 0.0 { dls_refine(chain, target, &q, 50) } else { q };
                    let refined = dls_refine(chain, target, &refined, 3);
                    let reached = fk(chain, &refined)?.ee;
                    if within_tolerance(target, &reached) && chain.within_limits(&refined) {
                        return Ok(refined);
                    }
                }
            }
            if geom.solutions(target, redundancy, seed).is_empty() {
                break;
            }
        }
        Err(ArmError::Unreachable(format!(
            "no branch reaches ({:.3}, {:.3}, {:.3}) within joint limits",
            target.translation.x, target.translation.y, target.translation.z
        )))
    }
}

/// Purely numeric damped least squares from the seed; ignores the
/// redundancy parameter.
#[derive(Debug, Clone, Copy, Default)]
pub struct DlsIk;

impl IkSolver for DlsIk {
    fn name(&self) -> &'static str {
        "dls"
    }

    fn solve(
        &self,
        chain: &KinematicChain,
        target: &Pose,
        seed: &JointVector,
        _redundancy: f64,
    ) -> Result<JointVector, ArmError> {
        chain.check_len(seed)?;
        let q = dls_refine(chain, target, &chain.clamp_to_limits(seed), 300);
        let reached = fk(chain, &q)?.ee;
        if within_tolerance(target, &reached) {
            Ok(q)
        } else {
            Err(ArmError::Unreachable("least-squares iteration did not converge".into()))
        }
    }
}

/// Arm angle of `q` for shoulder–elbow–wrist chains.
pub fn arm_angle(chain: &KinematicChain, q: &JointVector) -> Option<f64> {
    SrsGeometry::from_chain(chain).map(|g| g.arm_angle(q))
}

/// IK solvers selectable by name.
pub struct IkRegistry {
    entries: Vec<Box<dyn IkSolver>>,
}

impl Default for IkRegistry {
    fn default() -> Self {
        Self { entries: vec![Box::new(SrsAnalyticIk), Box::new(DlsIk)] }
    }
}

impl IkRegistry {
    pub fn register(&mut self, solver: Box<dyn IkSolver>) {
        self.entries.retain(|s| s.name() != solver.name());
        self.entries.push(solver);
    }

    pub fn get(&self, name: &str) -> Option<&dyn IkSolver> {
        self.entries.iter().find(|s| s.name() == name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }
}
