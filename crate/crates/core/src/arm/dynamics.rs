//! Joint-space rigid-body dynamics.
//!
//! Spatial quantities are expressed in the base frame about the base origin,
//! ordered angular over linear. The mass matrix comes from the composite
//! rigid-body algorithm and the bias torques from recursive Newton–Euler.

use nalgebra::{Matrix3, Matrix6, Vector6};

use super::kinematics::ChainPoses;
use super::{fk, ArmError, JointMatrix, JointVector, KinematicChain};
use crate::se3::{skew, Vec3};

type SVec = Vector6<f64>;

fn ang(v: &SVec) -> Vec3 {
    v.fixed_rows::<3>(0).into_owned()
}

fn lin(v: &SVec) -> Vec3 {
    v.fixed_rows::<3>(3).into_owned()
}

fn spatial(a: Vec3, l: Vec3) -> SVec {
    SVec::new(a.x, a.y, a.z, l.x, l.y, l.z)
}

/// Motion cross product `v ×m u`.
fn cross_motion(v: &SVec, u: &SVec) -> SVec {
    let (w, v0) = (ang(v), lin(v));
    spatial(w.cross(&ang(u)), w.cross(&lin(u)) + v0.cross(&ang(u)))
}

/// Force cross product `v ×f f`.
fn cross_force(v: &SVec, f: &SVec) -> SVec {
    let (w, v0) = (ang(v), lin(v));
    spatial(w.cross(&ang(f)) + v0.cross(&lin(f)), w.cross(&lin(f)))
}

struct Frames {
    /// Joint motion subspaces.
    s: Vec<SVec>,
    /// Link spatial inertias about the base origin.
    inertia: Vec<Matrix6<f64>>,
}

fn frames(chain: &KinematicChain, poses: &ChainPoses) -> Frames {
    let mut s = Vec::with_capacity(chain.dof());
    let mut inertia = Vec::with_capacity(chain.dof());
    for ((pose, joint), inertial) in poses.links.iter().zip(&chain.joints).zip(&chain.inertials) {
        let z = pose.rotation * joint.axis;
        let p = pose.translation;
        s.push(spatial(z, p.cross(&z)));

        let r = pose.rotation_matrix();
        let c = pose.transform_point(&inertial.com);
        let ic: Matrix3<f64> = r * inertial.inertia * r.transpose();
        let cx = skew(&c);
        let m = inertial.mass;
        let mut i6 = Matrix6::zeros();
        i6.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic + cx * cx.transpose() * m));
        i6.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * m));
        i6.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * m));
        i6.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
        inertia.push(i6);
    }
    Frames { s, inertia }
}

pub fn mass_matrix(chain: &KinematicChain, q: &JointVector) -> Result<JointMatrix, ArmError> {
    let poses = fk(chain, q)?;
    Ok(mass_matrix_from(chain, &poses))
}

pub(crate) fn mass_matrix_from(chain: &KinematicChain, poses: &ChainPoses) -> JointMatrix {
    let n = chain.dof();
    let f = frames(chain, poses);
    let mut composite = f.inertia.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        composite[i] = composite[i] + composite[i + 1];
    }
    let mut m = JointMatrix::zeros(n, n);
    for i in 0..n {
        let force = composite[i] * f.s[i];
        for j in 0..=i {
            let v = f.s[j].dot(&force);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn rnea(
    chain: &KinematicChain,
    poses: &ChainPoses,
    qd: &JointVector,
    qdd: Option<&JointVector>,
    gravity: bool,
) -> JointVector {
    let n = chain.dof();
    let f = frames(chain, poses);
    let mut v = SVec::zeros();
    let mut a = if gravity { spatial(Vec3::zeros(), -chain.gravity) } else { SVec::zeros() };
    let mut forces = Vec::with_capacity(n);
    for i in 0..n {
        let vj = f.s[i] * qd[i];
        v += vj;
        a += cross_motion(&v, &vj);
        if let Some(qdd) = qdd {
            a += f.s[i] * qdd[i];
        }
        forces.push(f.inertia[i] * a + cross_force(&v, &(f.inertia[i] * v)));
    }
    let mut tau = JointVector::zeros(n);
    let mut acc = SVec::zeros();
    for i in (0..n).rev() {
        acc += forces[i];
        tau[i] = f.s[i].dot(&acc);
    }
    tau
}

/// Inverse dynamics `M qdd + C qd + g`.
pub fn inverse_dynamics(
    chain: &KinematicChain,
    q: &JointVector,
    qd: &JointVector,
    qdd: &JointVector,
) -> Result<JointVector, ArmError> {
    chain.check_len(qd)?;
    chain.check_len(qdd)?;
    let poses = fk(chain, q)?;
    Ok(rnea(chain, &poses, qd, Some(qdd), true))
}

/// Coriolis, centrifugal and gravity torques.
pub fn bias_forces(chain: &KinematicChain, q: &JointVector, qd: &JointVector) -> Result<JointVector, ArmError> {
    chain.check_len(qd)?;
    let poses = fk(chain, q)?;
    Ok(rnea(chain, &poses, qd, None, true))
}

pub(crate) fn bias_forces_from(chain: &KinematicChain, poses: &ChainPoses, qd: &JointVector) -> JointVector {
    rnea(chain, poses, qd, None, true)
}

pub fn gravity_torques(chain: &KinematicChain, q: &JointVector) -> Result<JointVector, ArmError> {
    let poses = fk(chain, q)?;
    Ok(rnea(chain, &poses, &JointVector::zeros(chain.dof()), None, true))
}

/// Velocity-product torques `C(q, qd) qd` (no gravity).
pub fn velocity_product(chain: &KinematicChain, q: &JointVector, qd: &JointVector) -> Result<JointVector, ArmError> {
    chain.check_len(qd)?;
    let poses = fk(chain, q)?;
    Ok(rnea(chain, &poses, qd, None, false))
}

/// `C(q, qd) u` for the Christoffel-consistent Coriolis matrix, by
/// polarization of the quadratic velocity-product term.
pub fn coriolis_times(
    chain: &KinematicChain,
    q: &JointVector,
    qd: &JointVector,
    u: &JointVector,
) -> Result<JointVector, ArmError> {
    chain.check_len(qd)?;
    chain.check_len(u)?;
    let poses = fk(chain, q)?;
    let plus = rnea(chain, &poses, &(qd + u), None, false);
    let minus = rnea(chain, &poses, &(qd - u), None, false);
    Ok((plus - minus) * 0.25)
}

/// Joint accelerations `M⁻¹ (τ − bias)`.
pub fn forward_dynamics(
    chain: &KinematicChain,
    q: &JointVector,
    qd: &JointVector,
    tau: &JointVector,
) -> Result<JointVector, ArmError> {
    chain.check_len(tau)?;
    chain.check_len(qd)?;
    let poses = fk(chain, q)?;
    let m = mass_matrix_from(chain, &poses);
    let rhs = tau - rnea(chain, &poses, qd, None, true);
    let chol = m
        .cholesky()
        .ok_or_else(|| ArmError::InvalidChain("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

pub fn kinetic_energy(chain: &KinematicChain, q: &JointVector, qd: &JointVector) -> Result<f64, ArmError> {
    chain.check_len(qd)?;
    let m = mass_matrix(chain, q)?;
    Ok(0.5 * qd.dot(&(m * qd)))
}

/// Gravitational potential energy relative to the base origin.
pub fn potential_energy(chain: &KinematicChain, q: &JointVector) -> Result<f64, ArmError> {
    let poses = fk(chain, q)?;
    Ok(poses
        .links
        .iter()
        .zip(&chain.inertials)
        .map(|(p, i)| -i.mass * chain.gravity.dot(&p.transform_point(&i.com)))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::super::test_chains::srs7;
    use super::super::{jacobian, Inertial, Joint};
    use super::*;
    use crate::se3::Pose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Planar pendulum about y with a point mass at distance `l` along x.
    fn pendulum(m: f64, l: f64) -> KinematicChain {
        KinematicChain::new(
            "pendulum",
            vec![Joint {
                name: "j".into(),
                origin: Pose::identity(),
                axis: Vec3::new(0.0, -1.0, 0.0),
                lower: -3.0,
                upper: 3.0,
                velocity_limit: 5.0,
                effort_limit: 100.0,
            }],
            vec![Inertial { mass: m, com: Vec3::new(l, 0.0, 0.0), inertia: Matrix3::identity() * 1e-12 }],
            Pose::from_translation(l, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -9.81),
        )
        .unwrap()
    }

    #[test]
    fn pendulum_closed_form() {
        let (m, l) = (2.0, 0.7);
        let c = pendulum(m, l);
        for &q in &[0.0, 0.4, -1.1] {
            let qv = JointVector::from_vec(vec![q]);
            let mm = mass_matrix(&c, &qv).unwrap();
            assert!((mm[(0, 0)] - m * l * l).abs() < 1e-9);
            let g = gravity_torques(&c, &qv).unwrap();
            assert!((g[0] - m * 9.81 * l * q.cos()).abs() < 1e-9, "{} vs {}", g[0], m * 9.81 * l * q.cos());
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, c: &KinematicChain) -> (JointVector, JointVector) {
        let q = JointVector::from_iterator(c.dof(), c.joints.iter().map(|j| rng.random_range(j.lower..j.upper)));
        let qd = JointVector::from_iterator(c.dof(), (0..c.dof()).map(|_| rng.random_range(-1.5..1.5)));
        (q, qd)
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let c = srs7();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (q, _) = random_state(&mut rng, &c);
            let m = mass_matrix(&c, &q).unwrap();
            assert!((&m - m.transpose()).norm() < 1e-9);
            assert!(m.clone().cholesky().is_some());
        }
    }

    /// Independent route: M = Σ m Jvᵀ Jv + Jwᵀ I Jw over per-link center-of-mass Jacobians.
    #[test]
    fn mass_matrix_matches_jacobian_sum() {
        let c = srs7();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, _) = random_state(&mut rng, &c);
        let poses = fk(&c, &q).unwrap();
        let axes = poses.joint_axes(&c);
        let n = c.dof();
        let mut expected = JointMatrix::zeros(n, n);
        for (k, (pose, inertial)) in poses.links.iter().zip(&c.inertials).enumerate() {
            let com = pose.transform_point(&inertial.com);
            let mut jv = nalgebra::DMatrix::zeros(3, n);
            let mut jw = nalgebra::DMatrix::zeros(3, n);
            for (i, (p, z)) in axes.iter().enumerate().take(k + 1) {
                jv.fixed_view_mut::<3, 1>(0, i).copy_from(&z.cross(&(com - p)));
                jw.fixed_view_mut::<3, 1>(0, i).copy_from(z);
            }
            let r = pose.rotation_matrix();
            let iw = nalgebra::DMatrix::from_iterator(3, 3, (r * inertial.inertia * r.transpose()).iter().copied());
            expected += jv.transpose() * &jv * inertial.mass + jw.transpose() * iw * &jw;
        }
        assert!((mass_matrix(&c, &q).unwrap() - expected).abs().max() < 1e-10);
    }

    #[test]
    fn coriolis_matrix_is_consistent() {
        let c = srs7();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, qd) = random_state(&mut rng, &c);
        let cq = coriolis_times(&c, &q, &qd, &qd).unwrap();
        let vp = velocity_product(&c, &q, &qd).unwrap();
        assert!((cq - &vp).norm() < 1e-10);
        // Skew symmetry of Ṁ − 2C: uᵀ(Ṁ − 2C)u = 0.
        let h = 1e-6;
        let mdot = (mass_matrix(&c, &(&q + &qd * h)).unwrap() - mass_matrix(&c, &(&q - &qd * h)).unwrap()) / (2.0 * h);
        let u = JointVector::from_iterator(7, (0..7).map(|_| rng.random_range(-1.0..1.0)));
        let cu = coriolis_times(&c, &q, &qd, &u).unwrap();
        let val = u.dot(&(&mdot * &u)) - 2.0 * u.dot(&cu);
        assert!(val.abs() < 1e-6, "{val}");
    }

    #[test]
    fn inverse_and_forward_dynamics_agree() {
        let c = srs7();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (q, qd) = random_state(&mut rng, &c);
        let qdd = JointVector::from_iterator(7, (0..7).map(|_| rng.random_range(-2.0..2.0)));
        let tau = inverse_dynamics(&c, &q, &qd, &qdd).unwrap();
        let back = forward_dynamics(&c, &q, &qd, &tau).unwrap();
        assert!((back - qdd).norm() < 1e-9);
    }

    #[test]
    fn energy_consistent_along_trajectory() {
        // Integrate with RK4 under a smooth applied torque and compare the
        // energy change with the injected work.
        let c = srs7();
        let mut q = JointVector::from_vec(vec![0.2, 0.6, -0.4, 1.0, 0.3, -0.7, 0.1]);
        let mut qd = JointVector::zeros(7);
        let dt = 1e-3;
        let torque = |t: f64, q: &JointVector| {
            // Roughly 1 rad/s² per joint, whatever the link inertia.
            let wave = JointVector::from_iterator(7, (0..7).map(|i| (3.0 * t + i as f64).sin()));
            gravity_torques(&c, q).unwrap() + mass_matrix(&c, q).unwrap() * wave
        };
        let energy = |q: &JointVector, qd: &JointVector| {
            kinetic_energy(&c, q, qd).unwrap() + potential_energy(&c, q).unwrap()
        };
        let e0 = energy(&q, &qd);
        let mut work = 0.0;
        let mut t = 0.0;
        for _ in 0..1000 {
            let f = |t: f64, q: &JointVector, qd: &JointVector| forward_dynamics(&c, q, qd, &torque(t, q)).unwrap();
            let power = |t: f64, q: &JointVector, qd: &JointVector| qd.dot(&torque(t, q));
            let k1q = qd.clone();
            let k1v = f(t, &q, &qd);
            let p1 = power(t, &q, &qd);
            let q2 = &q + &k1q * (dt / 2.0);
            let v2 = &qd + &k1v * (dt / 2.0);
            let k2v = f(t + dt / 2.0, &q2, &v2);
            let p2 = power(t + dt / 2.0, &q2, &v2);
            let q3 = &q + &v2 * (dt / 2.0);
            let v3 = &qd + &k2v * (dt / 2.0);
            let k3v = f(t + dt / 2.0, &q3, &v3);
            let p3 = power(t + dt / 2.0, &q3, &v3);
            let q4 = &q + &v3 * dt;
            let v4 = &qd + &k3v * dt;
            let k4v = f(t + dt, &q4, &v4);
            let p4 = power(t + dt, &q4, &v4);
            work += dt / 6.0 * (p1 + 2.0 * p2 + 2.0 * p3 + p4);
            q += (k1q + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
            qd += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
            t += dt;
        }
        // Stay where fk does not clamp, otherwise energy is not conserved.
        assert!(c.joints.iter().enumerate().all(|(i, j)| q[i] > j.lower - 6.0 && q[i] < j.upper + 6.0));
        let drift = energy(&q, &qd) - e0 - work;
        assert!(drift.abs() < 1e-3, "drift {drift}");
        assert!(qd.norm() > 0.1, "trajectory should actually move");
    }

    #[test]
    fn static_wrench_balance() {
        // Gravity torques equal Jᵀ of the weight wrench for a single point mass.
        let c = {
            let mut c = srs7();
            for (i, inertial) in c.inertials.iter_mut().enumerate() {
                inertial.mass = if i == 6 { 1.0 } else { 1e-9 };
                inertial.com = Vec3::zeros();
            }
            c.ee_offset = Pose::identity();
            c
        };
        let q = JointVector::from_vec(vec![0.2, 0.6, -0.4, 1.0, 0.3, -0.7, 0.1]);
        let g = gravity_torques(&c, &q).unwrap();
        let mut w = Vector6::zeros();
        w[2] = 9.81;
        let expected = jacobian(&c, &q).unwrap().transpose() * w;
        assert!((g - expected).norm() < 1e-6);
    }
}
