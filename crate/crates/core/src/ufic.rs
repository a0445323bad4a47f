//! Unified force-impedance control for the drawing arm and joint impedance
//! control for the camera arm.
//!
//! Wrenches and twists are 6-vectors, linear over angular, expressed in the
//! drawing-arm base frame. A wrench `f` passed to these laws is the wrench
//! the robot applies to its environment, so `Jᵀ f` is the torque producing it.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::arm::{
    coriolis_times, fk, gravity_torques, jacobian_derivative, ArmError, Jacobian, JointMatrix, JointState, JointVector,
    KinematicChain,
};
use crate::se3::{rotation_vector, Pose, Rotation, SpatialAccel, Twist};

/// Above this condition number the Cartesian inertia is formed with a
/// damped inverse.
pub const SINGULAR_CONDITION: f64 = 1e8;
pub const PROJECTION_DAMPING: f64 = 1e-3;

pub type Wrench = Vector6<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceGains {
    pub k_x: Matrix6<f64>,
    pub d_x: Matrix6<f64>,
}

impl ImpedanceGains {
    pub fn diagonal(k_trans: f64, k_rot: f64, d_trans: f64, d_rot: f64) -> Self {
        let k = Vector6::new(k_trans, k_trans, k_trans, k_rot, k_rot, k_rot);
        let d = Vector6::new(d_trans, d_trans, d_trans, d_rot, d_rot, d_rot);
        Self { k_x: Matrix6::from_diagonal(&k), d_x: Matrix6::from_diagonal(&d) }
    }

    pub fn is_valid(&self) -> bool {
        let psd = |m: &Matrix6<f64>| {
            m.iter().all(|v| v.is_finite())
                && (m - m.transpose()).abs().max() < 1e-9
                && SymmetricEigen::new(*m).eigenvalues.iter().all(|&e| e >= -1e-9)
        };
        psd(&self.k_x) && psd(&self.d_x)
    }
}

impl Default for ImpedanceGains {
    /// Tuned in simulation for the shipped drawing arm.
    fn default() -> Self {
        Self::diagonal(1500.0, 60.0, 120.0, 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceGains {
    pub k_p: Vector6<f64>,
    pub k_i: Vector6<f64>,
    pub k_d: Vector6<f64>,
    /// Componentwise bound on the error integral, N·s.
    pub integral_limit: f64,
}

impl ForceGains {
    pub fn uniform(k_p: f64, k_i: f64, k_d: f64, integral_limit: f64) -> Self {
        Self {
            k_p: Vector6::repeat(k_p),
            k_i: Vector6::repeat(k_i),
            k_d: Vector6::repeat(k_d),
            integral_limit,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.k_p.iter().chain(self.k_i.iter()).chain(self.k_d.iter()).all(|&g| g >= 0.0 && g.is_finite())
            && self.integral_limit >= 0.0
    }
}

impl Default for ForceGains {
    fn default() -> Self {
        Self::uniform(1.0, 2.0, 0.0, 5.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceIntegrator {
    pub h: Vector6<f64>,
    pub last_time: f64,
}

impl ForceIntegrator {
    pub fn reset(&mut self, t: f64) {
        self.h = Vector6::zeros();
        self.last_time = t;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueCommand {
    pub tau: JointVector,
    /// Set when the Cartesian inertia had to be damped.
    pub singular_projection: bool,
}

impl TorqueCommand {
    pub fn zeros(n: usize) -> Self {
        Self { tau: JointVector::zeros(n), singular_projection: false }
    }

    pub fn clamped(self, chain: &KinematicChain) -> Self {
        Self { tau: chain.clamp_effort(&self.tau), ..self }
    }
}

/// Desired end-effector trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DesiredMotion {
    pub pose: Pose,
    pub twist: Twist,
    pub accel: SpatialAccel,
}

impl DesiredMotion {
    pub fn hold(pose: Pose) -> Self {
        Self { pose, ..Default::default() }
    }
}

/// Complementary force/impedance axis selection, given per axis of a task
/// frame (typically the paper frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSelection {
    pub frame: Rotation,
    /// 1 where the axis is force controlled, 0 where it is impedance
    /// controlled. Linear x, y, z then angular x, y, z.
    pub force_axes: [u8; 6],
}

impl AxisSelection {
    pub fn all_impedance() -> Self {
        Self { frame: Rotation::identity(), force_axes: [0; 6] }
    }

    pub fn all_force() -> Self {
        Self { frame: Rotation::identity(), force_axes: [1; 6] }
    }

    /// Force along the frame's z axis, impedance everywhere else.
    pub fn normal_force(frame: Rotation) -> Self {
        Self { frame, force_axes: [0, 0, 1, 0, 0, 0] }
    }

    fn projector(&self, pick_force: bool) -> Matrix6<f64> {
        if self.force_axes.iter().all(|&a| (a == 1) == pick_force) {
            return Matrix6::identity();
        }
        if self.force_axes.iter().all(|&a| (a == 1) != pick_force) {
            return Matrix6::zeros();
        }
        let r = *self.frame.to_rotation_matrix().matrix();
        let block = |axes: &[u8]| {
            let s = Matrix3::from_diagonal(&nalgebra::Vector3::from_iterator(
                axes.iter().map(|&a| if (a == 1) == pick_force { 1.0 } else { 0.0 }),
            ));
            r * s * r.transpose()
        };
        let mut p = Matrix6::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&block(&self.force_axes[..3]));
        p.fixed_view_mut::<3, 3>(3, 3).copy_from(&block(&self.force_axes[3..]));
        p
    }

    pub fn force_projector(&self) -> Matrix6<f64> {
        self.projector(true)
    }

    pub fn impedance_projector(&self) -> Matrix6<f64> {
        self.projector(false)
    }
}

/// Operational-space quantities at one state.
pub struct CartesianModel {
    pub pose: Pose,
    pub jacobian: Jacobian,
    pub mass: JointMatrix,
    pub mass_inv: JointMatrix,
    pub lambda: Matrix6<f64>,
    pub singular: bool,
}

impl CartesianModel {
    pub fn new(chain: &KinematicChain, q: &JointVector) -> Result<Self, ArmError> {
        let poses = fk(chain, q)?;
        let jacobian = crate::arm::jacobian_from_poses(chain, &poses);
        let mass = crate::arm::mass_matrix_from(chain, &poses);
        let mass_inv = mass
            .clone()
            .cholesky()
            .ok_or_else(|| ArmError::InvalidChain("mass matrix is not positive definite".into()))?
            .inverse();
        let a: Matrix6<f64> = &jacobian * &mass_inv * jacobian.transpose();
        let a = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(a);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let singular = !(min > 0.0 && max / min <= SINGULAR_CONDITION);
        let lambda = if singular {
            let d = eig.eigenvalues.map(|s| {
                let s = s.max(0.0);
                s / (s * s + PROJECTION_DAMPING * PROJECTION_DAMPING)
            });
            eig.eigenvectors * Matrix6::from_diagonal(&d) * eig.eigenvectors.transpose()
        } else {
            a.cholesky().expect("positive definite").inverse()
        };
        Ok(Self { pose: poses.ee, jacobian, mass, mass_inv, lambda, singular })
    }

    /// Dynamically consistent generalized inverse `M⁻¹ Jᵀ Λ`.
    pub fn consistent_inverse(&self) -> nalgebra::MatrixXx6<f64> {
        &self.mass_inv * self.jacobian.transpose() * self.lambda
    }

    pub fn ee_twist(&self, qd: &JointVector) -> Wrench {
        &self.jacobian * qd
    }
}

/// Pose error `x_d ⊖ x`: position difference over the rotation vector of
/// `R_d Rᵀ`.
pub fn pose_error(desired: &Pose, actual: &Pose) -> Wrench {
    let dp = desired.translation - actual.translation;
    let dr = rotation_vector(&(desired.rotation * actual.rotation.inverse()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Cartesian impedance wrench, restricted to the impedance axes of
/// `selection`.
pub fn impedance_wrench(
    chain: &KinematicChain,
    model: &CartesianModel,
    state: &JointState,
    desired: &DesiredMotion,
    gains: &ImpedanceGains,
    selection: &AxisSelection,
) -> Result<Wrench, ArmError> {
    let p = selection.impedance_projector();
    let xd_dot = desired.twist.to_vector();
    let xd_ddot = desired.accel.to_vector();
    let err = p * pose_error(&desired.pose, &model.pose);
    let err_dot = p * (xd_dot - model.ee_twist(&state.qd));
    let mut w = gains.k_x * err + gains.d_x * err_dot;
    if xd_ddot != Wrench::zeros() {
        w += model.lambda * xd_ddot;
    }
    if xd_dot != Wrench::zeros() {
        // μ ẋ_d = Λ (J M⁻¹ C − J̇) J̄ ẋ_d
        let u = model.consistent_inverse() * xd_dot;
        let cu = coriolis_times(chain, &state.q, &state.qd, &u)?;
        let jdot = jacobian_derivative(chain, &state.q, &state.qd)?;
        w += model.lambda * (&model.jacobian * (&model.mass_inv * cu) - jdot * u);
    }
    Ok(p * w)
}

/// `τ_imp = Jᵀ(M_C ẍ_d + C_C ẋ_d + K_x x̃ + D_x x̃̇)`.
pub fn impedance_torque(
    chain: &KinematicChain,
    state: &JointState,
    desired: &DesiredMotion,
    gains: &ImpedanceGains,
    selection: &AxisSelection,
) -> Result<TorqueCommand, ArmError> {
    chain.check_len(&state.q)?;
    chain.check_len(&state.qd)?;
    let model = CartesianModel::new(chain, &state.q)?;
    let w = impedance_wrench(chain, &model, state, desired, gains, selection)?;
    Ok(TorqueCommand { tau: model.jacobian.transpose() * w, singular_projection: model.singular })
}

/// Inputs of the force law at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    pub f_des: Wrench,
    pub f_ext: Wrench,
    pub f_des_dot: Wrench,
    pub f_ext_dot: Wrench,
}

impl ForceSample {
    pub fn steady(f_des: Wrench, f_ext: Wrench) -> Self {
        Self { f_des, f_ext, f_des_dot: Wrench::zeros(), f_ext_dot: Wrench::zeros() }
    }
}

/// Advances the integral of the force error and clamps it.
pub fn integrate_force_error(integ: &ForceIntegrator, error: &Wrench, limit: f64, dt: f64) -> ForceIntegrator {
    let h = (integ.h + error * dt).map(|v| v.clamp(-limit, limit));
    ForceIntegrator { h, last_time: integ.last_time + dt }
}

/// Force-control wrench on the force axes of `selection`, with the updated
/// integrator.
pub fn force_wrench(
    f: &ForceSample,
    integ: &ForceIntegrator,
    gains: &ForceGains,
    selection: &AxisSelection,
    dt: f64,
) -> (Wrench, ForceIntegrator) {
    let e = f.f_des - f.f_ext;
    let next = integrate_force_error(integ, &e, gains.integral_limit, dt);
    let w = f.f_des
        + gains.k_p.component_mul(&e)
        + gains.k_d.component_mul(&(f.f_des_dot - f.f_ext_dot))
        + gains.k_i.component_mul(&next.h);
    (selection.force_projector() * w, next)
}

/// `τ_c = Jᵀ(f_des + K_p(f_des − f_ext) + K_d(ḟ_des − ḟ_ext) + K_i h_i)`.
#[allow(clippy::too_many_arguments)]
pub fn force_torque(
    chain: &KinematicChain,
    q: &JointVector,
    f: &ForceSample,
    integ: &ForceIntegrator,
    gains: &ForceGains,
    selection: &AxisSelection,
    dt: f64,
) -> Result<(TorqueCommand, ForceIntegrator), ArmError> {
    let j = crate::arm::jacobian(chain, q)?;
    let (w, next) = force_wrench(f, integ, gains, selection, dt);
    Ok((TorqueCommand { tau: j.transpose() * w, singular_projection: false }, next))
}

/// `τ_r = τ_imp + τ_c`. Axis selection happens inside the component laws.
pub fn unified_torque(imp: &TorqueCommand, force: &TorqueCommand) -> TorqueCommand {
    TorqueCommand {
        tau: &imp.tau + &force.tau,
        singular_projection: imp.singular_projection || force.singular_projection,
    }
}

/// Power injected by the damping term; never negative for valid gains.
pub fn damping_power(gains: &ImpedanceGains, err_dot: &Wrench) -> f64 {
    err_dot.dot(&(gains.d_x * err_dot))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointGains {
    pub k_q: JointVector,
    pub d_q: JointVector,
}

impl JointGains {
    /// Tuned in simulation for the shipped camera arm.
    pub fn default_7dof() -> Self {
        Self {
            k_q: JointVector::from_vec(vec![400.0, 400.0, 300.0, 300.0, 80.0, 60.0, 20.0]),
            d_q: JointVector::from_vec(vec![50.0, 50.0, 30.0, 30.0, 5.0, 4.0, 1.0]),
        }
    }
}

/// `τ = K_q(q_des − q) − D_q q̇ + g(q)`.
pub fn joint_impedance_torque(
    chain: &KinematicChain,
    state: &JointState,
    q_des: &JointVector,
    gains: &JointGains,
) -> Result<TorqueCommand, ArmError> {
    for v in [&state.q, &state.qd, q_des, &gains.k_q, &gains.d_q] {
        chain.check_len(v)?;
    }
    let g = gravity_torques(chain, &state.q)?;
    let tau = gains.k_q.component_mul(&(q_des - &state.q)) - gains.d_q.component_mul(&state.qd) + g;
    Ok(TorqueCommand { tau, singular_projection: false })
}

/// Joint-space stiffness toward a rest posture, acting only in the null
/// space of the end-effector task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullspaceGains {
    pub stiffness: f64,
    pub damping: f64,
}

impl Default for NullspaceGains {
    fn default() -> Self {
        Self { stiffness: 5.0, damping: 1.0 }
    }
}

/// Drawing-arm controller state: gains plus the force integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedController {
    pub impedance: ImpedanceGains,
    pub force: ForceGains,
    pub nullspace: NullspaceGains,
    pub rest: JointVector,
    pub integrator: ForceIntegrator,
}

/// Everything the controller computed at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub command: TorqueCommand,
    pub pose_error: Wrench,
    pub damping_power: f64,
}

impl UnifiedController {
    pub fn new(impedance: ImpedanceGains, force: ForceGains, nullspace: NullspaceGains, rest: JointVector) -> Self {
        Self { impedance, force, nullspace, rest, integrator: ForceIntegrator::default() }
    }

    /// Task torques plus null-space posture torques. Gravity compensation is
    /// left to the caller, as on the real robot.
    pub fn update(
        &mut self,
        chain: &KinematicChain,
        state: &JointState,
        desired: &DesiredMotion,
        force: &ForceSample,
        selection: &AxisSelection,
        dt: f64,
    ) -> Result<ControlOutput, ArmError> {
        chain.check_len(&state.q)?;
        chain.check_len(&state.qd)?;
        let model = CartesianModel::new(chain, &state.q)?;
        let w_imp = impedance_wrench(chain, &model, state, desired, &self.impedance, selection)?;
        let (w_force, next) = force_wrench(force, &self.integrator, &self.force, selection, dt);
        self.integrator = next;
        let jt = model.jacobian.transpose();
        let imp = TorqueCommand { tau: &jt * w_imp, singular_projection: model.singular };
        let frc = TorqueCommand { tau: &jt * w_force, singular_projection: false };
        let mut command = unified_torque(&imp, &frc);

        let posture = (&self.rest - &state.q) * self.nullspace.stiffness - &state.qd * self.nullspace.damping;
        let n = chain.dof();
        let projector = JointMatrix::identity(n, n) - &jt * model.consistent_inverse().transpose();
        command.tau += projector * posture;

        let p = selection.impedance_projector();
        let err_dot = p * (desired.twist.to_vector() - model.ee_twist(&state.qd));
        Ok(ControlOutput {
            command,
            pose_error: pose_error(&desired.pose, &model.pose),
            damping_power: damping_power(&self.impedance, &err_dot),
        })
    }
}
