use std::f64::consts::TAU;

use super::{ArmError, Jacobian, JointVector, KinematicChain, LinkMeshSet};
use crate::mesh::TriangleMesh;
use crate::se3::{axis_angle, Pose, Vec3};

/// Link frames and end-effector pose in the chain base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPoses {
    pub links: Vec<Pose>,
    pub ee: Pose,
}

impl ChainPoses {
    /// World position and axis of each joint.
    pub fn joint_axes(&self, chain: &KinematicChain) -> Vec<(Vec3, Vec3)> {
        self.links
            .iter()
            .zip(chain.joints.iter())
            .map(|(p, j)| (p.translation, p.rotation * j.axis))
            .collect()
    }
}

fn sanitize(chain: &KinematicChain, q: &JointVector) -> Option<JointVector> {
    let out_of_band = chain
        .joints
        .iter()
        .zip(q.iter())
        .any(|(j, &v)| v < j.lower - TAU || v > j.upper + TAU || !v.is_finite());
    if !out_of_band {
        return None;
    }
    log::warn!("joint vector {:?} outside limit band, clamping", q.as_slice());
    Some(JointVector::from_iterator(
        chain.dof(),
        chain.joints.iter().zip(q.iter()).map(|(j, &v)| {
            if v.is_finite() {
                v.clamp(j.lower - TAU, j.upper + TAU)
            } else {
                0.5 * (j.lower + j.upper)
            }
        }),
    ))
}

pub fn fk(chain: &KinematicChain, q: &JointVector) -> Result<ChainPoses, ArmError> {
    chain.check_len(q)?;
    let clamped = sanitize(chain, q);
    let q = clamped.as_ref().unwrap_or(q);
    let mut links = Vec::with_capacity(chain.dof());
    let mut current = Pose::identity();
    for (joint, &angle) in chain.joints.iter().zip(q.iter()) {
        current = current.compose(&joint.origin).compose(&Pose::from_rotation(axis_angle(&joint.axis, angle)));
        links.push(current);
    }
    let ee = current.compose(&chain.ee_offset);
    Ok(ChainPoses { links, ee })
}

/// Geometric Jacobian of the end-effector twist, linear rows over angular rows.
pub fn jacobian(chain: &KinematicChain, q: &JointVector) -> Result<Jacobian, ArmError> {
    let poses = fk(chain, q)?;
    Ok(jacobian_from_poses(chain, &poses))
}

pub(crate) fn jacobian_from_poses(chain: &KinematicChain, poses: &ChainPoses) -> Jacobian {
    let n = chain.dof();
    let mut j = Jacobian::zeros(n);
    let p_ee = poses.ee.translation;
    for (i, (p, z)) in poses.joint_axes(chain).into_iter().enumerate() {
        let lin = z.cross(&(p_ee - p));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    j
}

/// Time derivative of the Jacobian along joint velocity `qd`, by central
/// differences along the motion.
pub fn jacobian_derivative(chain: &KinematicChain, q: &JointVector, qd: &JointVector) -> Result<Jacobian, ArmError> {
    chain.check_len(qd)?;
    let norm = qd.norm();
    if norm == 0.0 {
        return Ok(Jacobian::zeros(chain.dof()));
    }
    let h = 1e-6 / norm.max(1.0);
    let jp = jacobian(chain, &(q + qd * h))?;
    let jm = jacobian(chain, &(q - qd * h))?;
    Ok((jp - jm) / (2.0 * h))
}

/// Link meshes transformed into the base frame.
pub fn posed_meshes(chain: &KinematicChain, q: &JointVector, meshes: &LinkMeshSet) -> Result<Vec<TriangleMesh>, ArmError> {
    if meshes.meshes.len() != chain.dof() {
        return Err(ArmError::LengthMismatch { expected: chain.dof(), got: meshes.meshes.len() });
    }
    let poses = fk(chain, q)?;
    Ok(meshes.meshes.iter().zip(poses.links.iter()).map(|(m, p)| m.transformed(p)).collect())
}
