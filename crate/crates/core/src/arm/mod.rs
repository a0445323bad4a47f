//! Serial-chain arm model: description, kinematics, dynamics and inverse
//! kinematics.

mod dynamics;
mod ik;
mod kinematics;

pub use dynamics::{
    bias_forces, coriolis_times, forward_dynamics, gravity_torques, inverse_dynamics, kinetic_energy,
    mass_matrix, potential_energy, velocity_product,
};
pub use ik::{arm_angle, DlsIk, IkRegistry, IkSolver, SrsAnalyticIk, SrsGeometry};
pub use kinematics::{fk, jacobian, jacobian_derivative, posed_meshes, ChainPoses};
pub(crate) use dynamics::{bias_forces_from, mass_matrix_from};
pub(crate) use kinematics::jacobian_from_poses;

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6xX};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::TriangleMesh;
use crate::se3::{Pose, Rotation, Vec3};

pub type JointVector = DVector<f64>;
pub type Jacobian = Matrix6xX<f64>;
pub type JointMatrix = DMatrix<f64>;

pub const CHAIN_FORMAT: &str = "avatar-chain/1";

#[derive(Debug, Error)]
pub enum ArmError {
    #[error("expected {expected} joint values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("unsupported chain format '{0}'")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Parent link frame to joint frame at zero position.
    pub origin: Pose,
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
    pub velocity_limit: f64,
    pub effort_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inertial {
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vec3,
    /// Rotational inertia about the center of mass, link frame axes.
    pub inertia: Matrix3<f64>,
}

/// Revolute serial chain; link `i` is the child of joint `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<Joint>,
    pub inertials: Vec<Inertial>,
    pub ee_offset: Pose,
    pub gravity: Vec3,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        inertials: Vec<Inertial>,
        ee_offset: Pose,
        gravity: Vec3,
    ) -> Result<Self, ArmError> {
        let chain = Self { name: name.into(), joints, inertials, ee_offset, gravity };
        chain.validate()?;
        Ok(chain)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        let bad = |m: String| Err(ArmError::InvalidChain(m));
        if self.joints.is_empty() {
            return bad("chain has no joints".into());
        }
        if self.inertials.len() != self.joints.len() {
            return bad(format!("{} inertials for {} joints", self.inertials.len(), self.joints.len()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("joint {i} axis is not unit length"));
            }
            if !(j.lower < j.upper) {
                return bad(format!("joint {i} has lower limit >= upper limit"));
            }
            if !(j.velocity_limit > 0.0) || !(j.effort_limit > 0.0) {
                return bad(format!("joint {i} has nonpositive velocity or effort limit"));
            }
            if !j.origin.is_finite() {
                return bad(format!("joint {i} origin is not finite"));
            }
        }
        for (i, inertial) in self.inertials.iter().enumerate() {
            if !(inertial.mass > 0.0) {
                return bad(format!("link {i} mass must be positive"));
            }
            let sym = (inertial.inertia - inertial.inertia.transpose()).norm();
            if sym > 1e-12 {
                return bad(format!("link {i} inertia is not symmetric"));
            }
            if inertial.inertia.cholesky().is_none() {
                return bad(format!("link {i} inertia is not positive definite"));
            }
        }
        Ok(())
    }

    pub fn check_len(&self, v: &JointVector) -> Result<(), ArmError> {
        if v.len() != self.dof() {
            return Err(ArmError::LengthMismatch { expected: self.dof(), got: v.len() });
        }
        Ok(())
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower))
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper))
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof() && self.joints.iter().zip(q.iter()).all(|(j, &v)| v >= j.lower && v <= j.upper)
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector::from_iterator(
            self.dof(),
            self.joints.iter().zip(q.iter()).map(|(j, &v)| v.clamp(j.lower, j.upper)),
        )
    }

    /// Per-joint torque clamp.
    pub fn clamp_effort(&self, tau: &JointVector) -> JointVector {
        JointVector::from_iterator(
            self.dof(),
            self.joints.iter().zip(tau.iter()).map(|(j, &t)| t.clamp(-j.effort_limit, j.effort_limit)),
        )
    }

    pub fn from_json_str(text: &str) -> Result<Self, ArmError> {
        let file: ChainFile = serde_json::from_str(text)?;
        file.into_chain()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArmError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> ChainFile {
        ChainFile::from_chain(self)
    }
}

/// Joint positions, velocities and accelerations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: JointVector,
    pub qd: JointVector,
    pub qdd: JointVector,
}

impl JointState {
    pub fn at_rest(q: JointVector) -> Self {
        let n = q.len();
        Self { q, qd: JointVector::zeros(n), qdd: JointVector::zeros(n) }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).chain(self.qdd.iter()).all(|v| v.is_finite())
    }
}

/// One mesh per link, in the link frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkMeshSet {
    pub meshes: Vec<TriangleMesh>,
}

impl LinkMeshSet {
    pub fn new(meshes: Vec<TriangleMesh>) -> Self {
        Self { meshes }
    }

    pub fn empty(links: usize) -> Self {
        Self { meshes: vec![TriangleMesh::empty(); links] }
    }

    pub fn triangle_count(&self) -> usize {
        self.meshes.iter().map(|m| m.triangles.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Chain file format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    /// Roll, pitch, yaw in radians, applied as `Rz(yaw) Ry(pitch) Rx(roll)`.
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl FrameSpec {
    pub fn to_pose(&self) -> Pose {
        let [r, p, y] = self.rpy;
        Pose::new(Rotation::from_euler_angles(r, p, y), Vec3::from(self.xyz))
    }

    pub fn from_pose(p: &Pose) -> Self {
        let (r, pi, y) = p.rotation.euler_angles();
        Self { xyz: p.translation.into(), rpy: [r, pi, y] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimitSpec {
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
    pub effort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub origin: FrameSpec,
    pub axis: [f64; 3],
    pub limits: JointLimitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InertialSpec {
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, ixy, ixz, iyy, iyz, izz]` about the center of mass.
    pub inertia: [f64; 6],
}

/// On-disk chain description (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub format: String,
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    pub joints: Vec<JointSpec>,
    pub inertials: Vec<InertialSpec>,
    pub ee_offset: FrameSpec,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

impl ChainFile {
    pub fn into_chain(self) -> Result<KinematicChain, ArmError> {
        if self.format != CHAIN_FORMAT {
            return Err(ArmError::Format(self.format));
        }
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let axis = Vec3::from(j.axis);
                let n = axis.norm();
                if !(n > 0.0) {
                    return Err(ArmError::InvalidChain(format!("joint {} has zero axis", j.name)));
                }
                Ok(Joint {
                    name: j.name.clone(),
                    origin: j.origin.to_pose(),
                    axis: axis / n,
                    lower: j.limits.lower,
                    upper: j.limits.upper,
                    velocity_limit: j.limits.velocity,
                    effort_limit: j.limits.effort,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let inertials = self
            .inertials
            .iter()
            .map(|s| {
                let [xx, xy, xz, yy, yz, zz] = s.inertia;
                Inertial {
                    mass: s.mass,
                    com: Vec3::from(s.com),
                    inertia: Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz),
                }
            })
            .collect();
        KinematicChain::new(self.name, joints, inertials, self.ee_offset.to_pose(), Vec3::from(self.gravity))
    }

    pub fn from_chain(c: &KinematicChain) -> Self {
        Self {
            format: CHAIN_FORMAT.to_string(),
            name: c.name.clone(),
            gravity: c.gravity.into(),
            joints: c
                .joints
                .iter()
                .map(|j| JointSpec {
                    name: j.name.clone(),
                    origin: FrameSpec::from_pose(&j.origin),
                    axis: j.axis.into(),
                    limits: JointLimitSpec {
                        lower: j.lower,
                        upper: j.upper,
                        velocity: j.velocity_limit,
                        effort: j.effort_limit,
                    },
                })
                .collect(),
            inertials: c
                .inertials
                .iter()
                .map(|i| InertialSpec {
                    mass: i.mass,
                    com: i.com.into(),
                    inertia: [
                        i.inertia[(0, 0)],
                        i.inertia[(0, 1)],
                        i.inertia[(0, 2)],
                        i.inertia[(1, 1)],
                        i.inertia[(1, 2)],
                        i.inertia[(2, 2)],
                    ],
                })
                .collect(),
            ee_offset: FrameSpec::from_pose(&c.ee_offset),
        }
    }
}
