//! One drawing session: calibration, handshake, then streaming teleoperation
//! with the camera arm driven by the active condition's strategy.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use avatar_core::arm::{fk, gravity_torques, JointVector, SrsAnalyticIk};
use avatar_core::mesh::OcclusionIndex;
use avatar_core::metrics::{aggregate, MetricsError, ReferenceSet, SessionMetrics, SessionTrace, Stroke};
use avatar_core::planner::{cell_weight, scene_occluders, visibility};
use avatar_core::se3::{rot_x, rotation_vector, Pose, Twist, Vec3};
use avatar_core::sim::{snapshot, step, CanvasGrid, SimError, WorldConfig, WorldState};
use avatar_core::teleop::{calibrate_plane, handshake, pen_command, Handshake, PaperSpec, PenCommand, PlaneFit, TabletSample};
use avatar_core::ufic::{joint_impedance_torque, AxisSelection, DesiredMotion, ForceSample, JointGains, UnifiedController, Wrench};

use crate::camera::{CameraContext, CameraRegistry, CameraStrategy};
use crate::config::{AvatarConfig, ConfigError};
use crate::protocol::{ClientMessage, Condition, MeshBundle, StateFrame};
use crate::replay::{ReplayError, ReplayEvent, ReplayHeader, ReplayLog, ReplayWriter, MARK_HANDSHAKE_END, MARK_SESSION_END, REPLAY_FORMAT};
use crate::script::TimedInput;

/// Pen records per second in the log.
pub const PEN_LOG_RATE: f64 = 100.0;

/// Longest gap between tablet samples still used for velocity feedforward.
const MAX_SAMPLE_GAP: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub condition: Option<Condition>,
    pub shape: Option<String>,
    pub record: Option<PathBuf>,
    /// Use this paper plane instead of calibrating.
    pub plane: Option<PlaneFit>,
    pub lockstep: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Idle,
    Handshake { traj: Handshake, start: f64 },
    Streaming,
}

/// Touches the paper at each normalized point with a vertical pen and fits a
/// plane through the reached tip positions. The first two touches must share
/// their paper y so that they fix the x axis.
pub fn calibrate(world: &WorldConfig, cfg: &AvatarConfig) -> Result<PlaneFit, SessionError> {
    let ik = SrsAnalyticIk;
    let home = JointVector::from_vec(cfg.server.drawing_home.clone());
    let above = fk(&world.drawing, &home).map_err(|e| SessionError::Setup(e.to_string()))?.ee.translation;
    let paper = &world.paper;
    let mut seed = home.clone();
    let mut points = Vec::new();
    for &[u, v] in &cfg.server.calibration_touches {
        let spot = paper.to_world(&Vec3::new(u * paper.p_xmax, v * paper.p_ymax, 0.0));
        let target = Pose::new(paper.pose.rotation * rot_x(std::f64::consts::FRAC_PI_2), spot);
        let q = avatar_core::arm::IkSolver::solve(&ik, &world.drawing, &target, &seed, 0.0)
            .map_err(|e| SessionError::Setup(format!("calibration touch ({u}, {v}): {e}")))?;
        points.push(fk(&world.drawing, &q).map_err(|e| SessionError::Setup(e.to_string()))?.ee.translation);
        seed = q;
    }
    let fit = calibrate_plane(&points, &above).map_err(|e| SessionError::Setup(e.to_string()))?;
    // The fit puts its origin at the first touch; move it back to the corner.
    let [u, v] = cfg.server.calibration_touches[0];
    let corner = fit.pose.translation - fit.pose.rotation * Vec3::new(u * paper.p_xmax, v * paper.p_ymax, 0.0);
    Ok(PlaneFit { pose: Pose::new(fit.pose.rotation, corner), rms: fit.rms })
}

pub struct Session {
    pub config: AvatarConfig,
    pub world: Arc<WorldConfig>,
    pub state: WorldState,
    pub grid: CanvasGrid,
    dt: f64,
    decimation: u64,
    pen_decimation: u64,
    controller: UnifiedController,
    camera_gains: JointGains,
    plane: PlaneFit,
    paper: PaperSpec,
    registry: CameraRegistry,
    ctx: CameraContext,
    camera: Box<dyn CameraStrategy>,
    phase: Phase,
    home_pose: Pose,
    latest: Option<TabletSample>,
    command: Option<PenCommand>,
    previous: Option<(f64, PenCommand)>,
    desired: DesiredMotion,
    touches: Vec<[f64; 2]>,
    pub events: Vec<ReplayEvent>,
    writer: Option<ReplayWriter>,
    header: ReplayHeader,
    pub quality: f64,
    pub planner_ticks: u64,
    pub ended: bool,
    handshake_done: bool,
    /// Cells painted since the last call to [`Session::take_canvas_diff`].
    canvas_diff: Vec<[usize; 2]>,
}

impl Session {
    pub fn new(config: AvatarConfig, condition: Condition, opts: &SessionOptions) -> Result<Self, SessionError> {
        let world = Arc::new(config.world_config()?);
        let dt = world.control_dt();
        let decimation = world.planner_decimation();
        let pen_decimation = ((world.control_rate / PEN_LOG_RATE).round() as u64).max(1);
        let q_draw = JointVector::from_vec(config.server.drawing_home.clone());
        let plane = match opts.plane {
            Some(p) => p,
            None => calibrate(&world, &config)?,
        };
        let paper = PaperSpec { pose: plane.pose, ..world.paper };

        let ik: Arc<dyn avatar_core::arm::IkSolver> = Arc::new(SrsAnalyticIk);
        let view = config.server.stationary_view.pose()?;
        let local = world.camera_base.inverse().compose(&view);
        let q_seed = JointVector::from_vec(vec![0.0, 0.3, 0.0, -1.5, 0.0, 1.2, 0.0]);
        let q_cam = [0.0, 0.5, -0.5, 1.0, -1.0, 1.5, -1.5]
            .iter()
            .find_map(|&psi| ik.solve(&world.camera, &local, &q_seed, psi).ok())
            .ok_or_else(|| SessionError::Setup("stationary camera view unreachable".into()))?;

        let state = WorldState::new(&world, q_draw.clone(), q_cam.clone())?;
        let grid = CanvasGrid::new(world.paper, world.grid.0, world.grid.1);
        let g = &config.gains;
        let controller = UnifiedController::new(g.impedance(), g.force(), g.nullspace.clone(), q_draw);
        let ctx = CameraContext {
            world: world.clone(),
            planner: config.planner.clone(),
            key_step: config.server.key_step,
            ik,
            lockstep: opts.lockstep,
        };
        let registry = CameraRegistry::default();
        let camera = registry.build(condition.strategy(), &ctx, q_cam).map_err(SessionError::Setup)?;
        let header = ReplayHeader {
            format: REPLAY_FORMAT.into(),
            config_hash: config.hash(),
            condition,
            shape: opts.shape.clone(),
            config: config.clone(),
        };
        let writer = match &opts.record {
            Some(path) => Some(ReplayWriter::create(path, &header)?),
            None => None,
        };
        let home_pose = state.pen_pose;
        let mut s = Self {
            camera_gains: g.camera_joint(),
            config,
            world,
            state,
            grid,
            dt,
            decimation,
            pen_decimation,
            controller,
            plane,
            paper,
            registry,
            ctx,
            camera,
            phase: Phase::Idle,
            home_pose,
            latest: None,
            command: None,
            previous: None,
            desired: DesiredMotion::hold(home_pose),
            touches: Vec::new(),
            events: Vec::new(),
            writer,
            header,
            quality: 1.0,
            planner_ticks: 0,
            ended: false,
            handshake_done: false,
            canvas_diff: Vec::new(),
        };
        s.record(ReplayEvent::Calibration { t: 0.0, plane });
        Ok(s)
    }

    pub fn time(&self) -> f64 {
        self.state.tick as f64 * self.dt
    }

    pub fn condition(&self) -> Condition {
        self.camera.condition()
    }

    pub fn header(&self) -> &ReplayHeader {
        &self.header
    }

    pub fn plane(&self) -> PlaneFit {
        self.plane
    }

    fn record(&mut self, e: ReplayEvent) {
        if let Some(w) = &self.writer {
            w.append(&e);
        }
        self.events.push(e);
    }

    fn mark(&mut self, name: &str) {
        let t = self.time();
        self.record(ReplayEvent::Marker { t, name: name.into() });
    }

    /// Applies one operator message at the current tick.
    pub fn apply(&mut self, seq: u64, message: ClientMessage) {
        let t = self.time();
        self.record(ReplayEvent::Input { t, seq, message });
        if let Err(e) = message.validate() {
            log::warn!("ignoring input {seq}: {e}");
            return;
        }
        match message {
            ClientMessage::TabletSample(s) => {
                self.latest = Some(s);
                if self.phase == Phase::Streaming {
                    self.take_sample(&s, t);
                }
            }
            ClientMessage::HandshakeStart => {
                let target = match self.latest.map(|s| pen_command(&s, &self.paper, &self.config.gains.force_scale)) {
                    Some(Ok(cmd)) => cmd.pose,
                    _ => self.state.pen_pose,
                };
                match handshake(&self.state.pen_pose, &target, self.config.server.handshake_duration) {
                    Ok(traj) => {
                        self.phase = Phase::Handshake { traj, start: t };
                        self.handshake_done = false;
                    }
                    Err(e) => log::warn!("handshake rejected: {e}"),
                }
            }
            ClientMessage::KeyTeleop { axis, direction } => {
                if self.camera.condition() == Condition::Teleoperated {
                    self.camera.on_key(axis, direction);
                } else {
                    log::debug!("key press ignored under {}", self.camera.condition());
                }
            }
            ClientMessage::ConditionSet { condition } => self.set_condition(condition),
            ClientMessage::CalibrationTouch { p_tx, p_ty } => self.touch(p_tx, p_ty),
            ClientMessage::SessionEnd => self.ended = true,
        }
    }

    fn set_condition(&mut self, condition: Condition) {
        if condition == self.camera.condition() {
            return;
        }
        let q = self.camera.target().clone();
        match self.registry.build(condition.strategy(), &self.ctx, q) {
            Ok(next) => self.camera = next,
            Err(e) => log::error!("switching to {condition}: {e}"),
        }
    }

    fn touch(&mut self, u: f64, v: f64) {
        self.touches.push([u, v]);
        if self.touches.len() < 3 {
            return;
        }
        let mut cfg = self.config.clone();
        cfg.server.calibration_touches = self.touches.clone();
        match calibrate(&self.world, &cfg) {
            Ok(plane) => {
                self.plane = plane;
                self.paper.pose = plane.pose;
                let t = self.time();
                self.record(ReplayEvent::Calibration { t, plane });
            }
            Err(e) => log::warn!("calibration touch rejected: {e}"),
        }
    }

    fn take_sample(&mut self, s: &TabletSample, t: f64) {
        let cmd = match pen_command(s, &self.paper, &self.config.gains.force_scale) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("bad tablet sample: {e}");
                return;
            }
        };
        let twist = match self.previous {
            Some((t0, prev)) if t > t0 && t - t0 <= MAX_SAMPLE_GAP && prev.in_contact_intent == cmd.in_contact_intent => {
                let h = t - t0;
                Twist::new(
                    (cmd.pose.translation - prev.pose.translation) / h,
                    rotation_vector(&(cmd.pose.rotation * prev.pose.rotation.inverse())) / h,
                )
            }
            _ => Twist::zero(),
        };
        if !cmd.in_contact_intent {
            self.controller.integrator.reset(t);
        }
        self.desired = DesiredMotion { pose: cmd.pose, twist, ..Default::default() };
        self.command = Some(cmd);
        self.previous = Some((t, cmd));
    }

    fn drawing_torque(&mut self, t: f64) -> Result<JointVector, SessionError> {
        let (desired, selection, f_des) = match self.phase {
            Phase::Idle => (DesiredMotion::hold(self.home_pose), AxisSelection::all_impedance(), 0.0),
            Phase::Handshake { traj, start } => {
                let local = t - start;
                let d = DesiredMotion { pose: traj.pose_at(local), twist: traj.twist_at(local), ..Default::default() };
                (d, AxisSelection::all_impedance(), 0.0)
            }
            Phase::Streaming => match self.command {
                Some(cmd) if cmd.in_contact_intent => {
                    (self.desired, AxisSelection::normal_force(self.paper.pose.rotation), cmd.force)
                }
                _ => (self.desired, AxisSelection::all_impedance(), 0.0),
            },
        };
        let n = self.paper.normal();
        let push = -n * f_des;
        let f = ForceSample::steady(Wrench::new(push.x, push.y, push.z, 0.0, 0.0, 0.0), self.state.f_ext);
        let chain = &self.world.drawing;
        let out = self
            .controller
            .update(chain, &self.state.drawing, &desired, &f, &selection, self.dt)
            .map_err(|e| SessionError::Setup(e.to_string()))?;
        let g = gravity_torques(chain, &self.state.drawing.q).map_err(|e| SessionError::Setup(e.to_string()))?;
        Ok(chain.clamp_effort(&(out.command.tau + g)))
    }

    /// One control tick: applies `inputs`, steps the plant, updates the
    /// canvas and runs the planner-rate work when due.
    pub fn step(&mut self, inputs: &[(u64, ClientMessage)]) -> Result<(), SessionError> {
        for &(seq, m) in inputs {
            self.apply(seq, m);
        }
        let t = self.time();
        if let Phase::Handshake { traj, start } = self.phase {
            if traj.is_complete(t - start) {
                self.phase = Phase::Streaming;
                if !self.handshake_done {
                    self.handshake_done = true;
                    self.mark(MARK_HANDSHAKE_END);
                }
                if let Some(s) = self.latest {
                    self.take_sample(&s, t);
                }
            }
        }
        let tau_draw = self.drawing_torque(t)?;
        let cam = &self.world.camera;
        let tau_cam = joint_impedance_torque(cam, &self.state.camera, self.camera.target(), &self.camera_gains)
            .map_err(|e| SessionError::Setup(e.to_string()))?;
        let tau_cam = cam.clamp_effort(&tau_cam.tau);
        self.state = step(&self.world, &self.state, &tau_draw, &tau_cam, self.dt)?;

        let t = self.time();
        let pen = self.state.pen_pose.translation;
        let painting = self.state.is_painting();
        let fresh = self.grid.update(&pen, painting, None, t);
        if !fresh.is_empty() {
            let cells: Vec<[usize; 2]> = fresh.iter().map(|&(i, j)| [i, j]).collect();
            self.canvas_diff.extend_from_slice(&cells);
            self.record(ReplayEvent::CanvasDiff { t, cells });
        }
        let tick = self.state.tick;
        if tick % self.pen_decimation == 0 {
            self.record(ReplayEvent::Pen {
                t,
                pose: self.state.pen_pose,
                contact: self.state.contact,
                normal_force: self.state.normal_force,
                painting,
            });
        }
        if tick % self.decimation == 0 {
            self.planner_tick(t)?;
        }
        Ok(())
    }

    fn planner_tick(&mut self, t: f64) -> Result<(), SessionError> {
        let occluders: Box<dyn OcclusionIndex> = scene_occluders(
            &self.world,
            &self.state.drawing.q,
            &avatar_core::mesh::OcclusionRegistry::default(),
            &self.config.planner.occlusion,
        )
        .map_err(|e| SessionError::Setup(e.to_string()))?;
        let camera = self.state.camera_pose;
        let visible = visibility(&camera.translation, &self.grid, &*occluders);
        let (mut seen, mut total) = (0.0, 0.0);
        for (c, &v) in self.grid.cells.iter().zip(&visible) {
            let w = cell_weight(c.painted, (self.grid.time - c.last_seen).max(0.0), &self.config.planner);
            total += w;
            if v {
                seen += w;
            }
        }
        self.quality = if total > 0.0 { seen / total } else { 1.0 };
        self.grid.update(&self.state.pen_pose.translation, false, Some(&visible), t);
        let snap = snapshot(&self.state, &self.grid);
        let tick = self.camera.on_planner_tick(&snap).map(Box::new);
        if tick.is_some() {
            self.planner_ticks += 1;
        }
        let condition = self.camera.condition();
        self.record(ReplayEvent::Planner { t, condition, quality: self.quality, camera, tick });
        Ok(())
    }

    pub fn take_canvas_diff(&mut self) -> Vec<[usize; 2]> {
        std::mem::take(&mut self.canvas_diff)
    }

    pub fn frame(&self) -> StateFrame {
        let s = &self.state;
        StateFrame {
            sim_time: self.time(),
            condition: self.camera.condition(),
            q_draw: s.drawing.q.iter().copied().collect(),
            q_cam: s.camera.q.iter().copied().collect(),
            pen_pose: s.pen_pose,
            camera_pose: s.camera_pose,
            contact: s.contact,
            normal_force: s.normal_force,
            f_ext: s.f_ext.into(),
            viewpoint_quality: self.quality,
            planner_ticks: self.planner_ticks,
        }
    }

    pub fn mesh_bundle(&self) -> MeshBundle {
        let w = &self.world;
        MeshBundle {
            drawing_chain: w.drawing.to_file(),
            camera_chain: w.camera.to_file(),
            drawing_meshes: w.drawing_meshes.meshes.clone(),
            camera_meshes: w.camera_meshes.meshes.clone(),
            camera_base: avatar_core::arm::FrameSpec::from_pose(&w.camera_base),
            paper: w.paper,
            grid: [w.grid.0, w.grid.1],
            intrinsics: w.intrinsics,
        }
    }

    /// Writes the end marker and returns the complete log.
    pub fn finish(mut self) -> Result<ReplayLog, SessionError> {
        self.mark(MARK_SESSION_END);
        if let Some(w) = self.writer.take() {
            w.finish()?;
        }
        Ok(ReplayLog { header: self.header.clone(), events: std::mem::take(&mut self.events) })
    }
}

/// Everything a finished session produced.
pub struct SessionOutcome {
    pub log: ReplayLog,
    pub metrics: SessionMetrics,
}

/// Runs a headless session over a fixed input schedule, as fast as possible.
/// The session ends `settle_time` after the last input.
pub fn run_session(
    config: &AvatarConfig,
    condition: Condition,
    inputs: &[TimedInput],
    opts: &SessionOptions,
) -> Result<SessionOutcome, SessionError> {
    let opts = SessionOptions { lockstep: true, ..opts.clone() };
    let mut session = Session::new(config.clone(), condition, &opts)?;
    let delay = config.server.input_delay_ms * 1e-3;
    let mut queue: VecDeque<(u64, f64, ClientMessage)> =
        inputs.iter().enumerate().map(|(i, inp)| (i as u64, inp.t + delay, inp.message)).collect();
    let end = queue.back().map_or(0.0, |q| q.1) + config.server.settle_time;
    let half = 0.5 * session.dt;
    let mut due = Vec::new();
    while !session.ended && (session.time() < end - half || !queue.is_empty()) {
        due.clear();
        while let Some(&(seq, t, m)) = queue.front() {
            if t > session.time() + half {
                break;
            }
            due.push((seq, m));
            queue.pop_front();
        }
        session.step(&due)?;
    }
    let log = session.finish()?;
    let metrics = aggregate_log(&log)?;
    Ok(SessionOutcome { log, metrics })
}

/// Re-runs a recorded session from its logged inputs.
pub fn replay_log(log: &ReplayLog, condition: Option<Condition>, record: Option<PathBuf>) -> Result<SessionOutcome, SessionError> {
    let mut inputs = Vec::new();
    let mut plane = None;
    for e in &log.events {
        match e {
            ReplayEvent::Input { t, message, .. } => inputs.push(TimedInput { t: *t, message: *message }),
            ReplayEvent::Calibration { t, plane: p } if *t == 0.0 => plane = Some(*p),
            _ => {}
        }
    }
    let mut config = log.header.config.clone();
    // Inputs were logged when applied, so any configured delay is already in
    // their timestamps.
    config.server.input_delay_ms = 0.0;
    let opts = SessionOptions { shape: log.header.shape.clone(), record, plane, lockstep: true, ..Default::default() };
    let end = log.events.last().map_or(0.0, |e| e.time());
    let last_input = inputs.last().map_or(0.0, |i| i.t);
    config.server.settle_time = (end - last_input).max(0.0);
    run_session(&config, condition.unwrap_or(log.header.condition), &inputs, &opts)
}

/// Pulls metric inputs out of a log.
pub fn trace_from_log(log: &ReplayLog) -> SessionTrace {
    let paper = log.header.config.world_config().map(|w| w.paper).ok();
    let mut trace = SessionTrace { condition: log.header.condition.label().into(), ..Default::default() };
    let mut stroke: Stroke = Vec::new();
    for e in &log.events {
        match e {
            ReplayEvent::Marker { t, name } if name == MARK_HANDSHAKE_END => {
                trace.handshake_end.get_or_insert(*t);
            }
            ReplayEvent::Pen { t, pose, contact, painting, .. } => {
                if *contact {
                    trace.last_contact = Some(*t);
                }
                if *painting {
                    if let Some(p) = &paper {
                        let local = p.to_paper(&pose.translation);
                        stroke.push(((local.x / p.p_xmax).clamp(0.0, 1.0), (local.y / p.p_ymax).clamp(0.0, 1.0)));
                    }
                } else if !stroke.is_empty() {
                    trace.strokes.push(std::mem::take(&mut stroke));
                }
            }
            ReplayEvent::Planner { t, quality, .. } => trace.quality.push((*t, *quality)),
            _ => {}
        }
    }
    if !stroke.is_empty() {
        trace.strokes.push(stroke);
    }
    trace
}

pub fn aggregate_log(log: &ReplayLog) -> Result<SessionMetrics, SessionError> {
    Ok(aggregate(&trace_from_log(log), &ReferenceSet::bundled())?)
}

/// Serialized metrics report.
pub fn metrics_json(m: &SessionMetrics) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneReport {
    pub plane: PlaneFit,
    pub touches: Vec<[f64; 2]>,
}
