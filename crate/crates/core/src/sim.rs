//! Two-arm plant with pen–paper penalty contact, and the canvas grid that
//! remembers what was drawn and when the camera last saw it.

use std::sync::Arc;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{
    bias_forces_from, fk, jacobian_from_poses, mass_matrix_from, ArmError, JointState, JointVector, KinematicChain,
    LinkMeshSet,
};
use crate::mesh::TriangleMesh;
use crate::se3::{Pose, Vec3};
use crate::teleop::PaperSpec;

/// Normal force above which the pen leaves ink.
pub const PAINT_FORCE_THRESHOLD: f64 = 0.1;

const MAX_JOINT_SPEED: f64 = 1e3;
const MAX_JOINT_ANGLE: f64 = 1e3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    /// Vertical field of view, radians.
    pub fov_y: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { width: 1920, height: 1080, fov_y: 60f64.to_radians() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub drawing: KinematicChain,
    pub drawing_meshes: LinkMeshSet,
    pub camera: KinematicChain,
    pub camera_meshes: LinkMeshSet,
    /// Camera-arm base in the drawing-arm base frame.
    pub camera_base: Pose,
    pub paper: PaperSpec,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub control_rate: f64,
    pub planner_rate: f64,
    pub intrinsics: CameraIntrinsics,
    pub grid: (usize, usize),
    /// Occluders besides the drawing arm, in the drawing-arm base frame.
    pub extra_occluders: Vec<TriangleMesh>,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidWorld(m.to_string()));
        if !(self.control_rate > 0.0 && self.planner_rate > 0.0) {
            return bad("rates must be positive");
        }
        if !(self.contact_stiffness > 0.0) || self.contact_damping < 0.0 {
            return bad("contact stiffness must be positive and damping nonnegative");
        }
        if !(self.paper.p_xmax > 0.0 && self.paper.p_ymax > 0.0) {
            return bad("paper extents must be positive");
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return bad("grid must have cells");
        }
        if self.drawing_meshes.meshes.len() != self.drawing.dof()
            || self.camera_meshes.meshes.len() != self.camera.dof()
        {
            return bad("one mesh per link is required");
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate
    }

    /// Control ticks per planner tick.
    pub fn planner_decimation(&self) -> u64 {
        ((self.control_rate / self.planner_rate).round() as u64).max(1)
    }
}

/// Complete simulation state. `f_ext` is the wrench the pen applies to the
/// paper, linear over angular, in the drawing-arm base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub drawing: JointState,
    pub camera: JointState,
    pub pen_pose: Pose,
    /// Camera frame in the drawing-arm base frame; +z is the optical axis.
    pub camera_pose: Pose,
    pub contact: bool,
    pub normal_force: f64,
    pub f_ext: Vector6<f64>,
    pub time: f64,
    pub tick: u64,
}

impl WorldState {
    pub fn new(cfg: &WorldConfig, q_draw: JointVector, q_cam: JointVector) -> Result<Self, SimError> {
        let drawing = JointState::at_rest(q_draw);
        let camera = JointState::at_rest(q_cam);
        let mut s = Self {
            pen_pose: Pose::identity(),
            camera_pose: Pose::identity(),
            drawing,
            camera,
            contact: false,
            normal_force: 0.0,
            f_ext: Vector6::zeros(),
            time: 0.0,
            tick: 0,
        };
        s.refresh(cfg)?;
        Ok(s)
    }

    /// Pen leaves ink only when pressed hard enough.
    pub fn is_painting(&self) -> bool {
        self.contact && self.normal_force > PAINT_FORCE_THRESHOLD
    }

    fn refresh(&mut self, cfg: &WorldConfig) -> Result<(), SimError> {
        let poses = fk(&cfg.drawing, &self.drawing.q)?;
        let j = jacobian_from_poses(&cfg.drawing, &poses);
        let tip_velocity: Vec3 = (&j * &self.drawing.qd).fixed_rows::<3>(0).into();
        let contact = penalty_contact(cfg, &poses.ee.translation, &tip_velocity);
        self.pen_pose = poses.ee;
        self.contact = contact.touching;
        self.normal_force = contact.force;
        let push = -cfg.paper.normal() * contact.force;
        self.f_ext = Vector6::new(push.x, push.y, push.z, 0.0, 0.0, 0.0);
        self.camera_pose = cfg.camera_base.compose(&fk(&cfg.camera, &self.camera.q)?.ee);
        Ok(())
    }
}

struct Contact {
    touching: bool,
    force: f64,
}

fn penalty_contact(cfg: &WorldConfig, tip: &Vec3, tip_velocity: &Vec3) -> Contact {
    let n = cfg.paper.normal();
    let depth = -(tip - cfg.paper.pose.translation).dot(&n);
    if depth < 0.0 {
        return Contact { touching: false, force: 0.0 };
    }
    let rate = -tip_velocity.dot(&n);
    let force = (cfg.contact_stiffness * depth + cfg.contact_damping * rate).max(0.0);
    Contact { touching: true, force }
}

fn check_finite(label: &str, s: &JointState) -> Result<(), SimError> {
    let ok = s.q.iter().all(|v| v.is_finite() && v.abs() < MAX_JOINT_ANGLE)
        && s.qd.iter().all(|v| v.is_finite() && v.abs() < MAX_JOINT_SPEED);
    if ok {
        Ok(())
    } else {
        Err(SimError::NumericalDivergence(format!("{label} arm: q = {:?}, qd = {:?}", s.q.as_slice(), s.qd.as_slice())))
    }
}

fn advance(
    chain: &KinematicChain,
    s: &JointState,
    tau: &JointVector,
    contact_force: Option<(&Vec3, f64)>,
    dt: f64,
) -> Result<JointState, SimError> {
    chain.check_len(tau)?;
    let poses = fk(chain, &s.q)?;
    let mass = mass_matrix_from(chain, &poses);
    let mut rhs = tau - bias_forces_from(chain, &poses, &s.qd);
    if let Some((normal, f)) = contact_force {
        if f > 0.0 {
            let j = jacobian_from_poses(chain, &poses);
            let force = normal * f;
            rhs += j.fixed_rows::<3>(0).transpose() * force;
        }
    }
    let qdd = mass
        .cholesky()
        .ok_or_else(|| SimError::NumericalDivergence("mass matrix lost definiteness".into()))?
        .solve(&rhs);
    let qd = &s.qd + &qdd * dt;
    let q = &s.q + &qd * dt;
    Ok(JointState { q, qd, qdd })
}

/// One semi-implicit Euler step of both arms.
pub fn step(
    cfg: &WorldConfig,
    state: &WorldState,
    tau_draw: &JointVector,
    tau_cam: &JointVector,
    dt: f64,
) -> Result<WorldState, SimError> {
    let n = cfg.paper.normal();
    let drawing = advance(&cfg.drawing, &state.drawing, tau_draw, Some((&n, state.normal_force)), dt)?;
    let camera = advance(&cfg.camera, &state.camera, tau_cam, None, dt)?;
    check_finite("drawing", &drawing)?;
    check_finite("camera", &camera)?;
    let mut next = WorldState { drawing, camera, time: state.time + dt, tick: state.tick + 1, ..state.clone() };
    next.refresh(cfg)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Center in the paper frame.
    pub center: Vec3,
    /// Center in the drawing-arm base frame.
    pub world: Vec3,
    pub painted: bool,
    pub paint_time: Option<f64>,
    pub last_seen: f64,
}

/// `sx × sy` cells over the paper; cell `(i, j)` spans
/// `[i·w, (i+1)·w) × [j·h, (j+1)·h)` in paper coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasGrid {
    pub sx: usize,
    pub sy: usize,
    pub paper: PaperSpec,
    pub cells: Vec<Cell>,
    pub time: f64,
}

impl CanvasGrid {
    pub fn new(paper: PaperSpec, sx: usize, sy: usize) -> Self {
        let (w, h) = (paper.p_xmax / sx as f64, paper.p_ymax / sy as f64);
        let mut cells = Vec::with_capacity(sx * sy);
        for j in 0..sy {
            for i in 0..sx {
                let center = Vec3::new((i as f64 + 0.5) * w, (j as f64 + 0.5) * h, 0.0);
                cells.push(Cell { center, world: paper.to_world(&center), painted: false, paint_time: None, last_seen: 0.0 });
            }
        }
        Self { sx, sy, paper, cells, time: 0.0 }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.sx + i
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.sx, index / self.sx)
    }

    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[self.index(i, j)]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell containing a paper-frame point, if on the paper.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (w, h) = (self.paper.p_xmax, self.paper.p_ymax);
        if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
            return None;
        }
        let i = ((x / w * self.sx as f64) as usize).min(self.sx - 1);
        let j = ((y / h * self.sy as f64) as usize).min(self.sy - 1);
        Some((i, j))
    }

    pub fn painted_count(&self) -> usize {
        self.cells.iter().filter(|c| c.painted).count()
    }

    /// Paints the cell under the pen when `painting`, and stamps every cell
    /// flagged in `visible` as seen at `t`. Returns newly painted cells.
    pub fn update(&mut self, pen: &Vec3, painting: bool, visible: Option<&[bool]>, t: f64) -> Vec<(usize, usize)> {
        debug_assert!(t >= self.time, "canvas time went backwards");
        let t = t.max(self.time);
        self.time = t;
        let mut fresh = Vec::new();
        if painting {
            let local = self.paper.to_paper(pen);
            if let Some((i, j)) = self.locate(local.x, local.y) {
                let idx = self.index(i, j);
                let cell = &mut self.cells[idx];
                if !cell.painted {
                    cell.painted = true;
                    cell.paint_time = Some(t);
                    fresh.push((i, j));
                }
            }
        }
        if let Some(visible) = visible {
            for (cell, &seen) in self.cells.iter_mut().zip(visible) {
                if seen {
                    cell.last_seen = t;
                }
            }
        }
        fresh
    }
}

/// Immutable view of the world handed to the planner and to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: WorldState,
    pub grid: CanvasGrid,
}

pub fn snapshot(state: &WorldState, grid: &CanvasGrid) -> Arc<Snapshot> {
    Arc::new(Snapshot { state: state.clone(), grid: grid.clone() })
}
