//! Camera viewpoint planning: sample next-step poses under Cartesian motion
//! limits, score each by memory-weighted visibility of the canvas, and pick
//! the best one the camera arm can reach.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{arm_angle, fk, posed_meshes, IkSolver, JointVector, KinematicChain};
use crate::mesh::{OcclusionIndex, OcclusionRegistry, Segment, TriangleMesh};
use crate::se3::{integrate_pose, integrate_twist, look_at, rotation_vector, Pose, SpatialAccel, Twist, Vec3};
use crate::sim::{CanvasGrid, WorldConfig};

/// Sight-lines stop this far short of the cell so the paper never hides itself.
pub const CELL_CLEARANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("no candidate has an inverse-kinematics solution")]
    NoFeasibleCandidate,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMotionLimits {
    pub pdot_maxt: f64,
    pub pdot_maxr: f64,
    pub pddot_maxt: f64,
    pub pddot_maxr: f64,
    /// Acceleration samples per direction and axis.
    pub n: u32,
}

impl Default for CameraMotionLimits {
    fn default() -> Self {
        Self { pdot_maxt: 0.5, pdot_maxr: 1.0, pddot_maxt: 1.0, pddot_maxr: 2.0, n: 2 }
    }
}

impl CameraMotionLimits {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let positive = [self.pdot_maxt, self.pdot_maxr, self.pddot_maxt, self.pddot_maxr];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.n == 0 {
            return Err(PlannerError::InvalidConfig(format!("motion limits must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Spacing of the translational acceleration lattice.
    pub fn resolution(&self) -> f64 {
        self.pddot_maxt / self.n as f64
    }
}

/// Commanded camera state in the camera-arm base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraState {
    pub pose: Pose,
    pub twist: Twist,
}

impl CameraState {
    pub fn at_rest(pose: Pose) -> Self {
        Self { pose, twist: Twist::zero() }
    }

    pub fn within_limits(&self, limits: &CameraMotionLimits) -> bool {
        let slack = 1.05;
        self.twist.linear.amax() <= limits.pdot_maxt * slack && self.twist.angular.amax() <= limits.pdot_maxr * slack
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Camera pose after one step, camera-arm base frame.
    pub pose: Pose,
    pub accel: SpatialAccel,
    /// Twist after the step.
    pub twist: Twist,
    /// Lattice coordinates of the translational sample.
    pub index: [i32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Smallest translational acceleration, then lattice index order.
    MinAccelLex,
    /// Lattice index order only.
    Lex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub dt: f64,
    pub c_m: f64,
    pub w_0: f64,
    pub sx: usize,
    pub sy: usize,
    pub tie_break: TieBreak,
    /// Allowed camera-to-pen distance, meters.
    pub standoff_min: f64,
    pub standoff_max: f64,
    pub limits: CameraMotionLimits,
    /// Occlusion backend name in the [`OcclusionRegistry`].
    pub occlusion: String,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            dt: 0.033,
            c_m: 0.18,
            w_0: 0.1,
            sx: 32,
            sy: 32,
            tie_break: TieBreak::MinAccelLex,
            standoff_min: 0.25,
            standoff_max: 1.2,
            limits: CameraMotionLimits::default(),
            occlusion: "aabb-tree".into(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.c_m > 0.0) {
            return bad("c_m must be positive");
        }
        if !(self.w_0 > 0.0 && self.w_0 < 1.0) {
            return bad("w_0 must lie in (0, 1)");
        }
        if self.sx == 0 || self.sy == 0 {
            return bad("grid must have at least one cell");
        }
        if !(self.standoff_min >= 0.0 && self.standoff_max > self.standoff_min) {
            return bad("standoff range is empty");
        }
        self.limits.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub f: f64,
    /// Per-cell `g·w`, row-major like the grid.
    pub cells: Option<Vec<f64>>,
}

/// Largest `s ∈ [0, 1]` keeping every component of `v + s·a·dt` within `±limit`.
fn velocity_scale(v: &Vec3, a: &Vec3, dt: f64, limit: f64) -> f64 {
    let mut s = 1.0_f64;
    for i in 0..3 {
        let dv = a[i] * dt;
        let next = v[i] + dv;
        if next.abs() <= limit || dv == 0.0 {
            continue;
        }
        let bound = if dv > 0.0 { limit } else { -limit };
        s = s.min(((bound - v[i]) / dv).clamp(0.0, 1.0));
    }
    s
}

fn clamp_components(v: &Vec3, limit: f64) -> Vec3 {
    v.map(|c| c.clamp(-limit, limit))
}

/// Angular acceleration that turns `from` toward `target` over one step,
/// clamped componentwise and scaled for the velocity limit.
fn aim_accel(from: &Pose, omega: &Vec3, target: &crate::se3::Rotation, limits: &CameraMotionLimits, dt: f64) -> Vec3 {
    let theta = rotation_vector(&(target * from.rotation.inverse()));
    let alpha = clamp_components(&((theta - omega * dt) * (2.0 / (dt * dt))), limits.pddot_maxr);
    alpha * velocity_scale(omega, &alpha, dt, limits.pdot_maxr)
}

/// Candidate next-step poses: a `(2n+1)³` lattice of translational
/// accelerations, each paired with the rotational acceleration that aims the
/// camera at the pen. Candidates outside the standoff band are dropped.
pub fn gen_candidates(
    state: &CameraState,
    limits: &CameraMotionLimits,
    pen: &Vec3,
    dt: f64,
    standoff: (f64, f64),
    timestamp: f64,
) -> CandidateSet {
    let n = limits.n as i32;
    let s_r = limits.resolution();
    let up = state.pose.rotation * Vec3::y();
    let mut candidates = Vec::with_capacity(((2 * n + 1) as usize).pow(3));
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let raw = Vec3::new(i as f64, j as f64, k as f64) * s_r;
                let lin = raw * velocity_scale(&state.twist.linear, &raw, dt, limits.pdot_maxt);
                let eye = state.pose.translation + state.twist.linear * dt + lin * (0.5 * dt * dt);
                let dist = (pen - eye).norm();
                if dist < standoff.0 || dist > standoff.1 {
                    continue;
                }
                let Ok(aim) = look_at(&eye, pen, &up) else { continue };
                let ang = aim_accel(&state.pose, &state.twist.angular, &aim, limits, dt);
                let accel = SpatialAccel::new(lin, ang);
                candidates.push(Candidate {
                    pose: integrate_pose(&state.pose, &state.twist, &accel, dt),
                    accel,
                    twist: integrate_twist(&state.twist, &accel, dt),
                    index: [i, j, k],
                });
            }
        }
    }
    CandidateSet { candidates, timestamp }
}

/// Step that brakes as hard as the limits allow without re-aiming.
pub fn braking_candidate(state: &CameraState, limits: &CameraMotionLimits, dt: f64) -> Candidate {
    let lin = clamp_components(&(-state.twist.linear / dt), limits.pddot_maxt);
    let ang = clamp_components(&(-state.twist.angular / dt), limits.pddot_maxr);
    let accel = SpatialAccel::new(lin, ang);
    Candidate {
        pose: integrate_pose(&state.pose, &state.twist, &accel, dt),
        accel,
        twist: integrate_twist(&state.twist, &accel, dt),
        index: [0, 0, 0],
    }
}

/// 1 when the sight-line from the camera to the cell is clear, else 0.
pub fn occlusion_flag(camera: &Vec3, cell: &Vec3, occluders: &dyn OcclusionIndex) -> u8 {
    let s = Segment::new(*camera, *cell).shortened_at_end(CELL_CLEARANCE);
    u8::from(!occluders.segment_hits(&s))
}

pub fn cell_weight(painted: bool, t_l: f64, config: &PlannerConfig) -> f64 {
    debug_assert!(t_l >= 0.0);
    if painted {
        2.0 - (-config.c_m * t_l.max(0.0)).exp()
    } else {
        config.w_0
    }
}

fn weights(grid: &CanvasGrid, config: &PlannerConfig) -> Vec<f64> {
    grid.cells.iter().map(|c| cell_weight(c.painted, grid.time - c.last_seen, config)).collect()
}

/// Visibility of every cell from `camera` (drawing-arm frame).
pub fn visibility(camera: &Vec3, grid: &CanvasGrid, occluders: &dyn OcclusionIndex) -> Vec<bool> {
    grid.cells.iter().map(|c| occlusion_flag(camera, &c.world, occluders) == 1).collect()
}

fn score_with(camera: &Vec3, grid: &CanvasGrid, occluders: &dyn OcclusionIndex, w: &[f64], detail: bool) -> ViewScore {
    let mut f = 0.0;
    let mut cells = detail.then(|| Vec::with_capacity(w.len()));
    for (c, wi) in grid.cells.iter().zip(w) {
        let gw = f64::from(occlusion_flag(camera, &c.world, occluders)) * wi;
        f += gw;
        if let Some(v) = cells.as_mut() {
            v.push(gw);
        }
    }
    ViewScore { f, cells }
}

/// Weighted visible-cell score of a camera pose given in the drawing-arm frame.
pub fn score_pose(pose: &Pose, grid: &CanvasGrid, occluders: &dyn OcclusionIndex, config: &PlannerConfig) -> ViewScore {
    score_with(&pose.translation, grid, occluders, &weights(grid, config), true)
}

/// Score normalized by its all-visible bound.
pub fn viewpoint_quality(pose: &Pose, grid: &CanvasGrid, occluders: &dyn OcclusionIndex, config: &PlannerConfig) -> f64 {
    let w = weights(grid, config);
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return 1.0;
    }
    (score_with(&pose.translation, grid, occluders, &w, false).f / total).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position in the candidate set.
    pub chosen: usize,
    pub candidate: Candidate,
    pub f: f64,
    pub q_target: JointVector,
    /// Scores of all candidates, in set order.
    pub scores: Vec<f64>,
    /// Candidates rejected for lack of an IK solution before the choice.
    pub ik_rejected: usize,
}

/// Ranking of scored candidates: best first.
pub fn rank(candidates: &[Candidate], scores: &[f64], rule: TieBreak) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal);
        let by_accel = match rule {
            TieBreak::MinAccelLex => {
                let (na, nb) = (candidates[a].accel.linear.norm(), candidates[b].accel.linear.norm());
                na.partial_cmp(&nb).unwrap_or(Ordering::Equal)
            }
            TieBreak::Lex => Ordering::Equal,
        };
        by_score.then(by_accel).then(candidates[a].index.cmp(&candidates[b].index))
    });
    order
}

/// Everything `select_next` needs to know about the camera arm.
pub struct CameraArm<'a> {
    pub chain: &'a KinematicChain,
    /// Camera-arm base in the drawing-arm frame.
    pub base: Pose,
    pub ik: &'a dyn IkSolver,
}

/// Best-scoring candidate with an IK solution for the camera arm.
pub fn select_next(
    set: &CandidateSet,
    grid: &CanvasGrid,
    occluders: &dyn OcclusionIndex,
    config: &PlannerConfig,
    arm: &CameraArm,
    seed: &JointVector,
) -> Result<Selection, PlannerError> {
    if set.candidates.is_empty() {
        return Err(PlannerError::EmptyCandidates);
    }
    let w = weights(grid, config);
    let scores: Vec<f64> = set
        .candidates
        .iter()
        .map(|c| score_with(&arm.base.transform_point(&c.pose.translation), grid, occluders, &w, false).f)
        .collect();
    let psi = arm_angle(arm.chain, seed).unwrap_or(0.0);
    for (rejected, &idx) in rank(&set.candidates, &scores, config.tie_break).iter().enumerate() {
        let c = set.candidates[idx];
        if let Ok(q) = arm.ik.solve(arm.chain, &c.pose, seed, psi) {
            return Ok(Selection { chosen: idx, candidate: c, f: scores[idx], q_target: q, scores, ik_rejected: rejected });
        }
    }
    Err(PlannerError::NoFeasibleCandidate)
}

/// Occluders for the current drawing-arm configuration plus static extras,
/// in the drawing-arm frame.
pub fn scene_occluders(
    world: &WorldConfig,
    q_draw: &JointVector,
    registry: &OcclusionRegistry,
    backend: &str,
) -> Result<Box<dyn OcclusionIndex>, PlannerError> {
    let mut meshes: Vec<TriangleMesh> = posed_meshes(&world.drawing, q_draw, &world.drawing_meshes)
        .map_err(|e| PlannerError::InvalidConfig(e.to_string()))?;
    meshes.extend(world.extra_occluders.iter().cloned());
    registry
        .build(backend, &meshes)
        .ok_or_else(|| PlannerError::InvalidConfig(format!("unknown occlusion backend {backend:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TickOutcome {
    Selected,
    Braking,
    Hold,
}

/// Per-tick record for logs and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerTick {
    pub t: f64,
    pub outcome: TickOutcome,
    pub candidates: usize,
    pub chosen: Option<usize>,
    pub index: Option<[i32; 3]>,
    pub f: f64,
    pub best_f: f64,
    pub ik_rejected: usize,
    /// Commanded camera pose after this tick, camera-arm base frame.
    pub pose: Pose,
    pub twist: Twist,
    pub accel: SpatialAccel,
    pub elapsed_ms: f64,
}

/// Stateful planner: owns the commanded camera state and the IK seed.
pub struct ViewPlanner {
    pub config: PlannerConfig,
    pub state: CameraState,
    pub q_target: JointVector,
}

impl ViewPlanner {
    pub fn new(config: PlannerConfig, camera: &KinematicChain, q_cam: JointVector) -> Result<Self, PlannerError> {
        config.validate()?;
        let pose = fk(camera, &q_cam).map_err(|e| PlannerError::InvalidConfig(e.to_string()))?.ee;
        Ok(Self { config, state: CameraState::at_rest(pose), q_target: q_cam })
    }

    /// One planning step: `pen` and `occluders` are in the drawing-arm frame.
    pub fn tick(
        &mut self,
        grid: &CanvasGrid,
        pen: &Vec3,
        occluders: &dyn OcclusionIndex,
        arm: &CameraArm,
        t: f64,
    ) -> PlannerTick {
        let started = Instant::now();
        let cfg = &self.config;
        let pen_local = arm.base.inverse().transform_point(pen);
        let set = gen_candidates(
            &self.state,
            &cfg.limits,
            &pen_local,
            cfg.dt,
            (cfg.standoff_min, cfg.standoff_max),
            t,
        );
        let candidates = set.candidates.len();
        let (outcome, chosen, f, best_f, ik_rejected, next) =
            match select_next(&set, grid, occluders, cfg, arm, &self.q_target) {
                Ok(sel) => {
                    let best = sel.scores.iter().cloned().fold(0.0, f64::max);
                    self.q_target = sel.q_target.clone();
                    (TickOutcome::Selected, Some(sel.chosen), sel.f, best, sel.ik_rejected, sel.candidate)
                }
                Err(err) => {
                    log::warn!("planner at t={t:.3}: {err}; braking");
                    let brake = braking_candidate(&self.state, &cfg.limits, cfg.dt);
                    let psi = arm_angle(arm.chain, &self.q_target).unwrap_or(0.0);
                    match arm.ik.solve(arm.chain, &brake.pose, &self.q_target, psi) {
                        Ok(q) => {
                            self.q_target = q;
                            (TickOutcome::Braking, None, 0.0, 0.0, candidates, brake)
                        }
                        // The joint target stays put; the commanded state still
                        // decelerates so it never jumps past the limits.
                        Err(_) => {
                            log::warn!("planner at t={t:.3}: braking step unreachable; holding joints");
                            (TickOutcome::Hold, None, 0.0, 0.0, candidates, brake)
                        }
                    }
                }
            };
        self.state = CameraState { pose: next.pose, twist: next.twist };
        let accel = next.accel;
        PlannerTick {
            t,
            outcome,
            candidates,
            chosen,
            index: chosen.map(|i| set.candidates[i].index),
            f,
            best_f,
            ik_rejected,
            pose: self.state.pose,
            twist: self.state.twist,
            accel,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::test_chains::srs7;
    use crate::arm::SrsAnalyticIk;
    use crate::mesh::{segment_hits_triangle, AabbTree, BruteForceIndex, INTERSECTION_TOLERANCE};
    use crate::se3::{rot_x, rotation_distance};
    use crate::teleop::PaperSpec;

    fn grid(n: usize) -> CanvasGrid {
        CanvasGrid::new(PaperSpec { p_xmax: 0.2, p_ymax: 0.2, pose: Pose::from_translation(0.4, -0.1, 0.0) }, n, n)
    }

    fn empty() -> AabbTree {
        AabbTree::build(&[])
    }

    fn plate(z: f64) -> TriangleMesh {
        TriangleMesh::cuboid(Vec3::new(0.0, -0.5, z), Vec3::new(1.0, 0.5, z + 0.01))
    }

    #[test]
    fn lattice_size_and_resolution() {
        let limits = CameraMotionLimits { n: 4, ..Default::default() };
        assert_eq!(limits.resolution(), 0.25);
        let one = CameraMotionLimits { n: 1, ..Default::default() };
        let state = CameraState::at_rest(Pose::from_translation(0.0, 0.0, 0.6));
        let set = gen_candidates(&state, &one, &Vec3::zeros(), 0.033, (0.0, 10.0), 0.0);
        assert_eq!(set.candidates.len(), 27);
        let set = gen_candidates(&state, &CameraMotionLimits::default(), &Vec3::zeros(), 0.033, (0.0, 10.0), 0.0);
        assert_eq!(set.candidates.len(), 125);
    }

    #[test]
    fn aimed_camera_at_rest_needs_no_rotation() {
        // Camera 0.6 m above the pen looking straight down.
        let state = CameraState::at_rest(Pose::new(rot_x(std::f64::consts::PI), Vec3::new(0.0, 0.0, 0.6)));
        let set = gen_candidates(&state, &CameraMotionLimits::default(), &Vec3::zeros(), 0.033, (0.0, 10.0), 0.0);
        let still = set.candidates.iter().find(|c| c.index == [0, 0, 0]).unwrap();
        assert!(still.accel.angular.norm() < 1e-9);
        assert!(rotation_distance(&still.pose.rotation, &state.pose.rotation) < 1e-9);
        assert!((still.pose.translation - state.pose.translation).norm() == 0.0);
    }

    #[test]
    fn candidates_respect_limits_and_integrate_consistently() {
        let limits = CameraMotionLimits::default();
        let dt = 0.033;
        let state = CameraState {
            pose: Pose::new(rot_x(2.9), Vec3::new(0.1, 0.2, 0.7)),
            twist: Twist::new(Vec3::new(0.49, -0.3, 0.0), Vec3::new(0.2, -0.95, 0.1)),
        };
        let pen = Vec3::new(0.3, -0.1, 0.0);
        let set = gen_candidates(&state, &limits, &pen, dt, (0.25, 1.2), 0.0);
        assert!(!set.candidates.is_empty());
        for c in &set.candidates {
            assert!(c.accel.linear.amax() <= limits.pddot_maxt + 1e-12);
            assert!(c.accel.angular.amax() <= limits.pddot_maxr + 1e-12);
            assert!(c.twist.linear.amax() <= limits.pdot_maxt + 1e-12);
            assert!(c.twist.angular.amax() <= limits.pdot_maxr + 1e-12);
            let dp = c.pose.translation - state.pose.translation;
            let expect = state.twist.linear * dt + c.accel.linear * (0.5 * dt * dt);
            assert!((dp - expect).norm() < 1e-9);
            let d = (pen - c.pose.translation).norm();
            assert!((0.25..=1.2).contains(&d));
        }
    }

    #[test]
    fn standoff_drops_close_candidates() {
        let state = CameraState::at_rest(Pose::from_translation(0.0, 0.0, 0.1));
        let set = gen_candidates(&state, &CameraMotionLimits::default(), &Vec3::zeros(), 0.033, (0.25, 1.2), 0.0);
        assert!(set.candidates.is_empty());
    }

    #[test]
    fn weights() {
        let cfg = PlannerConfig::default();
        assert_eq!(cell_weight(true, 0.0, &cfg), 1.0);
        assert_eq!(cell_weight(false, 3.0, &cfg), 0.1);
        assert!((cell_weight(true, 10.0, &cfg) - 1.834701111778413).abs() < 1e-12);
        let mut last = 0.0;
        for k in 0..=600 {
            let w = cell_weight(true, k as f64 * 0.1, &cfg);
            assert!((1.0..2.0).contains(&w));
            assert!(k == 0 || w > last);
            last = w;
        }
    }

    #[test]
    fn flags() {
        let cam = Vec3::new(0.5, 0.0, 0.8);
        let cell = Vec3::new(0.5, 0.0, 0.0);
        assert_eq!(occlusion_flag(&cam, &cell, &empty()), 1);
        let blocker = TriangleMesh::cuboid(Vec3::new(0.45, -0.05, 0.35), Vec3::new(0.55, 0.05, 0.45));
        let tree = AabbTree::build(std::slice::from_ref(&blocker));
        assert_eq!(occlusion_flag(&cam, &cell, &tree), 0);
        let oracle = blocker.triangle_soup().any(|t| segment_hits_triangle(&Segment::new(cam, cell), &t, INTERSECTION_TOLERANCE));
        assert!(oracle);
        // The paper itself never occludes its own cell.
        let paper = TriangleMesh::cuboid(Vec3::new(0.0, -1.0, -0.01), Vec3::new(1.0, 1.0, 0.0));
        let tree = AabbTree::build(&[paper]);
        assert_eq!(occlusion_flag(&cam, &cell, &tree), 1);
    }

    #[test]
    fn trivial_scores() {
        let g = grid(8);
        let cfg = PlannerConfig::default();
        let cam = Pose::from_translation(0.5, 0.0, 0.8);
        let s = score_pose(&cam, &g, &empty(), &cfg);
        assert!((s.f - 0.1 * 64.0).abs() < 1e-12);
        assert_eq!(s.cells.unwrap().len(), 64);
        assert_eq!(viewpoint_quality(&cam, &g, &empty(), &cfg), 1.0);
        let blocked = AabbTree::build(&[plate(0.4)]);
        assert_eq!(score_pose(&cam, &g, &blocked, &cfg).f, 0.0);
        assert_eq!(viewpoint_quality(&cam, &g, &blocked, &cfg), 0.0);
    }

    #[test]
    fn half_occluded_quality() {
        // A plate over the x < 0.5 half of the paper, camera directly above
        // the dividing line: by symmetry exactly half the cells are hidden.
        let g = grid(8);
        let cfg = PlannerConfig::default();
        let half = TriangleMesh::cuboid(Vec3::new(0.3, -0.3, 0.2), Vec3::new(0.5, 0.3, 0.21));
        let tree = AabbTree::build(&[half]);
        let cam = Pose::from_translation(0.5, 0.0, 0.21 + 1e-3);
        // From just above the plate's edge plane the camera sees the far half
        // and none of the near half.
        let q = viewpoint_quality(&cam, &g, &tree, &cfg);
        assert!((q - 0.5).abs() < 1e-12, "{q}");
    }

    #[test]
    fn hand_summed_four_by_four() {
        let mut g = grid(4);
        g.time = 10.0;
        for (i, j, seen) in [(0, 0, 10.0), (3, 3, 0.0), (1, 2, 5.0)] {
            let idx = g.index(i, j);
            g.cells[idx].painted = true;
            g.cells[idx].last_seen = seen;
        }
        let cfg = PlannerConfig::default();
        // A post hiding cells with i = 3 from a camera at the paper center top.
        let post = TriangleMesh::cuboid(Vec3::new(0.555, -0.2, 0.05), Vec3::new(0.565, 0.2, 0.06));
        let tree = AabbTree::build(std::slice::from_ref(&post));
        let cam = Pose::from_translation(0.5, 0.0, 0.3);
        let mut expected = 0.0;
        for (idx, c) in g.cells.iter().enumerate() {
            let s = Segment::new(cam.translation, c.world).shortened_at_end(CELL_CLEARANCE);
            let hidden = post.triangle_soup().any(|t| segment_hits_triangle(&s, &t, INTERSECTION_TOLERANCE));
            let (i, _) = g.coords(idx);
            assert_eq!(hidden, i == 3, "cell {idx}");
            if !hidden {
                expected += if c.painted { 2.0 - (-0.18 * (10.0 - c.last_seen)).exp() } else { 0.1 };
            }
        }
        // Visible: 10 unpainted at 0.1 and painted cells (0,0) with t_l = 0 and (1,2) with t_l = 5.
        let by_hand = 10.0 * 0.1 + 1.0 + (2.0 - (-0.9f64).exp());
        assert!((expected - by_hand).abs() < 1e-12);
        assert!((score_pose(&cam, &g, &tree, &cfg).f - by_hand).abs() < 1e-12);
    }

    #[test]
    fn ranking_ties() {
        let c = |index: [i32; 3], a: f64| Candidate {
            pose: Pose::identity(),
            accel: SpatialAccel::new(Vec3::new(a, 0.0, 0.0), Vec3::zeros()),
            twist: Twist::zero(),
            index,
        };
        let cs = vec![c([-1, 0, 0], 0.5), c([0, 0, 0], 0.0), c([1, 0, 0], 0.5), c([0, 1, 0], 0.5)];
        assert_eq!(rank(&cs, &[1.0; 4], TieBreak::MinAccelLex), vec![1, 0, 3, 2]);
        assert_eq!(rank(&cs, &[1.0; 4], TieBreak::Lex), vec![0, 1, 3, 2]);
        assert_eq!(rank(&cs, &[1.0, 1.0, 2.0, 1.0], TieBreak::MinAccelLex)[0], 2);
    }

    fn camera_setup() -> (KinematicChain, Pose, JointVector) {
        let chain = srs7();
        let base = Pose::new(crate::se3::rot_z(-std::f64::consts::FRAC_PI_2), Vec3::new(0.5, 0.75, 0.0));
        // Camera over the near edge of the paper, looking at its center.
        let eye = Vec3::new(0.5, 0.35, 0.55);
        let aim = look_at(&eye, &Vec3::new(0.5, 0.0, 0.0), &Vec3::z()).unwrap();
        let local = base.inverse().compose(&Pose::new(aim, eye));
        let seed = JointVector::from_vec(vec![0.0, 0.4, 0.0, -1.6, 0.0, 1.2, 0.0]);
        let q = SrsAnalyticIk.solve(&chain, &local, &seed, 0.0).unwrap();
        (chain, base, q)
    }

    #[test]
    fn select_prefers_unoccluded_vantage_and_matches_exhaustive() {
        let (chain, base, q) = camera_setup();
        let ik = SrsAnalyticIk;
        let arm = CameraArm { chain: &chain, base, ik: &ik };
        let start = fk(&chain, &q).unwrap().ee;
        let state = CameraState { pose: start, twist: Twist::new(Vec3::new(0.1, 0.0, 0.0), Vec3::zeros()) };
        let pen_world = Vec3::new(0.5, 0.0, 0.0);
        let pen = base.inverse().transform_point(&pen_world);
        let set = gen_candidates(&state, &CameraMotionLimits { n: 1, ..Default::default() }, &pen, 0.033, (0.25, 1.2), 0.0);
        assert!(!set.candidates.is_empty());
        let g = grid(6);
        let cfg = PlannerConfig::default();
        let blocker = TriangleMesh::cuboid(Vec3::new(0.42, -0.1, 0.1), Vec3::new(0.6, 0.1, 0.11)).subdivided(1);
        let tree = AabbTree::build(std::slice::from_ref(&blocker));
        let sel = select_next(&set, &g, &tree, &cfg, &arm, &q).unwrap();
        let brute = BruteForceIndex::new(std::slice::from_ref(&blocker));
        let exhaustive: Vec<f64> = set
            .candidates
            .iter()
            .map(|c| score_pose(&base.compose(&c.pose), &g, &brute, &cfg).f)
            .collect();
        assert_eq!(sel.scores, exhaustive);
        let psi = arm_angle(&chain, &q).unwrap();
        for (i, c) in set.candidates.iter().enumerate() {
            if ik.solve(&chain, &c.pose, &q, psi).is_ok() {
                assert!(sel.f >= exhaustive[i]);
            }
        }
        let reached = fk(&chain, &sel.q_target).unwrap().ee;
        assert!((reached.translation - sel.candidate.pose.translation).norm() < 1e-4);
    }

    #[test]
    fn single_candidate_and_flat_scores() {
        let (chain, base, q) = camera_setup();
        let ik = SrsAnalyticIk;
        let arm = CameraArm { chain: &chain, base, ik: &ik };
        let start = fk(&chain, &q).unwrap().ee;
        let pen = base.inverse().transform_point(&Vec3::new(0.5, 0.0, 0.0));
        let state = CameraState::at_rest(start);
        let set = gen_candidates(&state, &CameraMotionLimits::default(), &pen, 0.033, (0.25, 1.2), 0.0);
        let g = grid(4);
        let cfg = PlannerConfig::default();
        let sel = select_next(&set, &g, &empty(), &cfg, &arm, &q).unwrap();
        assert_eq!(sel.candidate.index, [0, 0, 0]);
        let one = CandidateSet { candidates: vec![set.candidates[7]], timestamp: 0.0 };
        assert_eq!(select_next(&one, &g, &empty(), &cfg, &arm, &q).unwrap().chosen, 0);
        let none = CandidateSet { candidates: vec![], timestamp: 0.0 };
        assert_eq!(select_next(&none, &g, &empty(), &cfg, &arm, &q).unwrap_err(), PlannerError::EmptyCandidates);
    }

    #[test]
    fn unreachable_candidates_are_rejected() {
        let (chain, base, q) = camera_setup();
        let ik = SrsAnalyticIk;
        let arm = CameraArm { chain: &chain, base, ik: &ik };
        let far = Candidate {
            pose: Pose::from_translation(5.0, 0.0, 0.0),
            accel: SpatialAccel::zero(),
            twist: Twist::zero(),
            index: [0, 0, 0],
        };
        let set = CandidateSet { candidates: vec![far], timestamp: 0.0 };
        let err = select_next(&set, &grid(2), &empty(), &PlannerConfig::default(), &arm, &q).unwrap_err();
        assert_eq!(err, PlannerError::NoFeasibleCandidate);
    }

    #[test]
    fn ticks_are_deterministic_and_within_limits() {
        let (chain, base, q) = camera_setup();
        let ik = SrsAnalyticIk;
        let arm = CameraArm { chain: &chain, base, ik: &ik };
        let g = grid(8);
        let blocker = TriangleMesh::cuboid(Vec3::new(0.42, -0.1, 0.1), Vec3::new(0.6, 0.0, 0.11));
        let tree = AabbTree::build(&[blocker]);
        let run = || {
            let mut p = ViewPlanner::new(PlannerConfig::default(), &chain, q.clone()).unwrap();
            (0..20).map(|k| p.tick(&g, &Vec3::new(0.5, 0.0, 0.0), &tree, &arm, k as f64 * 0.033)).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        let strip = |v: &[PlannerTick]| v.iter().map(|t| (t.pose, t.chosen, t.f)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        let limits = CameraMotionLimits::default();
        for t in &a {
            assert_eq!(t.outcome, TickOutcome::Selected);
            assert!(t.twist.linear.amax() <= limits.pdot_maxt + 1e-12);
            assert!(t.accel.angular.amax() <= limits.pddot_maxr + 1e-12);
        }
    }

    struct NoIk;

    impl IkSolver for NoIk {
        fn name(&self) -> &'static str {
            "none"
        }

        fn solve(&self, _: &KinematicChain, _: &Pose, _: &JointVector, _: f64) -> Result<JointVector, crate::arm::ArmError> {
            Err(crate::arm::ArmError::Unreachable("test".into()))
        }
    }

    #[test]
    fn holding_still_decelerates_within_limits() {
        let (chain, base, q) = camera_setup();
        let arm = CameraArm { chain: &chain, base, ik: &NoIk };
        let mut p = ViewPlanner::new(PlannerConfig::default(), &chain, q.clone()).unwrap();
        p.state.twist = Twist::new(Vec3::new(0.5, -0.4, 0.2), Vec3::new(0.0, 1.0, -0.5));
        let limits = p.config.limits;
        let mut prev = p.state.twist;
        for k in 0..20 {
            let t = p.tick(&grid(4), &Vec3::new(0.5, 0.0, 0.0), &empty(), &arm, k as f64 * 0.033);
            assert_eq!(t.outcome, TickOutcome::Hold);
            assert_eq!(p.q_target, q);
            let dv = (t.twist.linear - prev.linear) / 0.033;
            let dw = (t.twist.angular - prev.angular) / 0.033;
            assert!(dv.amax() <= limits.pddot_maxt + 1e-9 && dw.amax() <= limits.pddot_maxr + 1e-9);
            prev = t.twist;
        }
        assert_eq!(prev, Twist::zero());
    }
}
