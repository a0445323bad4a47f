//! Camera strategies, one per experimental condition, selected by name from
//! a registry. Exactly one strategy drives the camera arm at a time.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam::channel::{bounded, unbounded, Receiver, Sender};

use avatar_core::arm::{arm_angle, fk, IkSolver, JointVector};
use avatar_core::mesh::OcclusionRegistry;
use avatar_core::planner::{scene_occluders, CameraArm, PlannerConfig, PlannerTick, ViewPlanner};
use avatar_core::se3::{axis_angle, Pose, Vec3};
use avatar_core::sim::{Snapshot, WorldConfig};

use crate::config::KeyStep;
use crate::protocol::Condition;

/// Shared, immutable inputs for building strategies.
#[derive(Clone)]
pub struct CameraContext {
    pub world: Arc<WorldConfig>,
    pub planner: PlannerConfig,
    pub key_step: KeyStep,
    pub ik: Arc<dyn IkSolver>,
    /// Wait for each planner result at the next planner tick instead of
    /// picking it up whenever it is ready. Headless runs use this so that
    /// results do not depend on thread timing.
    pub lockstep: bool,
}

pub trait CameraStrategy: Send {
    fn name(&self) -> &'static str;
    fn condition(&self) -> Condition;
    /// Joint target for the camera arm's joint impedance controller.
    fn target(&self) -> &JointVector;
    /// One key press; strategies that are not keyboard driven ignore it.
    fn on_key(&mut self, _axis: u8, _direction: i8) {}
    /// Called once per planner period with the latest world snapshot.
    fn on_planner_tick(&mut self, _snapshot: &Arc<Snapshot>) -> Option<PlannerTick> {
        None
    }
}

pub type StrategyBuilder = fn(&CameraContext, JointVector) -> Result<Box<dyn CameraStrategy>, String>;

pub struct CameraRegistry {
    builders: BTreeMap<&'static str, StrategyBuilder>,
}

impl Default for CameraRegistry {
    fn default() -> Self {
        let mut r = Self { builders: BTreeMap::new() };
        r.register("st-pose", |_, q| Ok(Box::new(Stationary { target: q })));
        r.register("te-pose", |ctx, q| Ok(Box::new(Teleoperated::new(ctx, q)?)));
        r.register("au-pose", |ctx, q| Ok(Box::new(Autonomous::spawn(ctx, q)?)));
        r
    }
}

impl CameraRegistry {
    pub fn register(&mut self, name: &'static str, builder: StrategyBuilder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    /// Builds the strategy `name`, starting from camera joints `q`.
    pub fn build(&self, name: &str, ctx: &CameraContext, q: JointVector) -> Result<Box<dyn CameraStrategy>, String> {
        let builder = self.builders.get(name).ok_or_else(|| format!("unknown camera strategy {name:?}"))?;
        builder(ctx, q)
    }
}

/// Holds the configured pose for the whole session.
pub struct Stationary {
    target: JointVector,
}

impl CameraStrategy for Stationary {
    fn name(&self) -> &'static str {
        "st-pose"
    }

    fn condition(&self) -> Condition {
        Condition::Stationary
    }

    fn target(&self) -> &JointVector {
        &self.target
    }
}

/// Twelve keys step the Cartesian target along or about the world axes.
pub struct Teleoperated {
    ctx: CameraContext,
    /// Target in the camera-arm base frame.
    pose: Pose,
    target: JointVector,
}

impl Teleoperated {
    fn new(ctx: &CameraContext, q: JointVector) -> Result<Self, String> {
        let pose = fk(&ctx.world.camera, &q).map_err(|e| e.to_string())?.ee;
        Ok(Self { ctx: ctx.clone(), pose, target: q })
    }
}

impl CameraStrategy for Teleoperated {
    fn name(&self) -> &'static str {
        "te-pose"
    }

    fn condition(&self) -> Condition {
        Condition::Teleoperated
    }

    fn target(&self) -> &JointVector {
        &self.target
    }

    fn on_key(&mut self, axis: u8, direction: i8) {
        let base = self.ctx.world.camera_base;
        let world = base.compose(&self.pose);
        let dir = Vec3::ith(usize::from(axis % 3), f64::from(direction));
        let moved = if axis < 3 {
            Pose::new(world.rotation, world.translation + dir * self.ctx.key_step.translation)
        } else {
            let r = axis_angle(&dir, self.ctx.key_step.rotation_deg.to_radians());
            Pose::new(r * world.rotation, world.translation)
        };
        let local = base.inverse().compose(&moved);
        let chain = &self.ctx.world.camera;
        let psi = arm_angle(chain, &self.target).unwrap_or(0.0);
        match self.ctx.ik.solve(chain, &local, &self.target, psi) {
            Ok(q) => {
                self.pose = local;
                self.target = q;
            }
            Err(e) => log::warn!("camera key step on axis {axis} unreachable: {e}"),
        }
    }
}

type PlannerResult = (PlannerTick, JointVector);

/// Runs the view planner on its own thread. Each tick hands over the newest
/// snapshot and applies the result computed from the previous one.
pub struct Autonomous {
    target: JointVector,
    tx: Option<Sender<Arc<Snapshot>>>,
    rx: Receiver<PlannerResult>,
    pending: bool,
    lockstep: bool,
    worker: Option<JoinHandle<()>>,
}

impl Autonomous {
    fn spawn(ctx: &CameraContext, q: JointVector) -> Result<Self, String> {
        let mut planner = ViewPlanner::new(ctx.planner.clone(), &ctx.world.camera, q.clone()).map_err(|e| e.to_string())?;
        let (tx, jobs) = bounded::<Arc<Snapshot>>(1);
        let (results, rx) = unbounded::<PlannerResult>();
        let world = ctx.world.clone();
        let ik = ctx.ik.clone();
        let worker = std::thread::Builder::new()
            .name("view-planner".into())
            .spawn(move || {
                let registry = OcclusionRegistry::default();
                let arm = CameraArm { chain: &world.camera, base: world.camera_base, ik: &*ik };
                for snap in jobs {
                    let occluders =
                        match scene_occluders(&world, &snap.state.drawing.q, &registry, &planner.config.occlusion) {
                            Ok(o) => o,
                            Err(e) => {
                                log::error!("planner occluders: {e}");
                                return;
                            }
                        };
                    let tick = planner.tick(&snap.grid, &snap.state.pen_pose.translation, &*occluders, &arm, snap.state.time);
                    if results.send((tick, planner.q_target.clone())).is_err() {
                        return;
                    }
                }
            })
            .map_err(|e| e.to_string())?;
        Ok(Self { target: q, tx: Some(tx), rx, pending: false, lockstep: ctx.lockstep, worker: Some(worker) })
    }
}

impl CameraStrategy for Autonomous {
    fn name(&self) -> &'static str {
        "au-pose"
    }

    fn condition(&self) -> Condition {
        Condition::Autonomous
    }

    fn target(&self) -> &JointVector {
        &self.target
    }

    fn on_planner_tick(&mut self, snapshot: &Arc<Snapshot>) -> Option<PlannerTick> {
        let mut applied = None;
        if self.pending {
            let result = if self.lockstep { self.rx.recv().ok() } else { self.rx.try_recv().ok() };
            if let Some((tick, q)) = result {
                self.target = q;
                self.pending = false;
                applied = Some(tick);
            } else if self.lockstep {
                log::error!("view planner thread exited");
                self.pending = false;
            }
        }
        if !self.pending {
            if let Some(tx) = &self.tx {
                self.pending = tx.send(snapshot.clone()).is_ok();
            }
        }
        applied
    }
}

impl Drop for Autonomous {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
