//! Session configuration file: world, gains, planner and server blocks.
//!
//! Chain and mesh entries may be file paths (relative to the config file) or
//! inline values. [`AvatarConfig::resolve`] loads every path so the result is
//! self-contained; that resolved form is what replay headers embed and what
//! the config hash covers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use avatar_core::arm::{ChainFile, FrameSpec, JointVector, KinematicChain, LinkMeshSet};
use avatar_core::mesh::{load_mesh, TriangleMesh};
use avatar_core::planner::PlannerConfig;
use avatar_core::se3::{look_at, Pose, Vec3};
use avatar_core::sim::{CameraIntrinsics, WorldConfig};
use avatar_core::teleop::{ForceScale, PaperSpec};
use avatar_core::ufic::{ForceGains, ImpedanceGains, JointGains, NullspaceGains};

pub const CONFIG_FORMAT: &str = "avatar-config/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("unsupported config format {0:?}")]
    Format(String),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSource {
    Path(String),
    Inline(ChainFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    Path(String),
    Inline(TriangleMesh),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmBlock {
    pub chain: ChainSource,
    /// One mesh per link, in link frames.
    pub meshes: Vec<MeshSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperBlock {
    pub width: f64,
    pub height: f64,
    /// Paper corner frame in the drawing-arm base frame; +z is the normal.
    pub pose: FrameSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactBlock {
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldBlock {
    pub drawing: ArmBlock,
    pub camera: ArmBlock,
    /// Camera-arm base in the drawing-arm base frame.
    pub camera_base: FrameSpec,
    pub paper: PaperBlock,
    pub contact: ContactBlock,
    pub control_rate: f64,
    pub planner_rate: f64,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    pub grid: [usize; 2],
    #[serde(default)]
    pub extra_occluders: Vec<MeshSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceBlock {
    pub translational_stiffness: f64,
    pub rotational_stiffness: f64,
    pub translational_damping: f64,
    pub rotational_damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceBlock {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointGainsBlock {
    pub stiffness: Vec<f64>,
    pub damping: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsBlock {
    pub impedance: ImpedanceBlock,
    pub force: ForceBlock,
    pub nullspace: NullspaceGains,
    pub camera_joint: JointGainsBlock,
    pub force_scale: ForceScale,
}

impl GainsBlock {
    pub fn impedance(&self) -> ImpedanceGains {
        let b = &self.impedance;
        ImpedanceGains::diagonal(
            b.translational_stiffness,
            b.rotational_stiffness,
            b.translational_damping,
            b.rotational_damping,
        )
    }

    pub fn force(&self) -> ForceGains {
        ForceGains::uniform(self.force.kp, self.force.ki, self.force.kd, self.force.integral_limit)
    }

    pub fn camera_joint(&self) -> JointGains {
        JointGains {
            k_q: JointVector::from_vec(self.camera_joint.stiffness.clone()),
            d_q: JointVector::from_vec(self.camera_joint.damping.clone()),
        }
    }
}

/// Camera placement as an eye point aimed at a target, drawing-arm frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

impl CameraView {
    /// Camera pose in the drawing-arm frame, image +y kept near world -z.
    pub fn pose(&self) -> Result<Pose, ConfigError> {
        let eye = Vec3::from(self.eye);
        let rotation = look_at(&eye, &Vec3::from(self.target), &-Vec3::z()).map_err(invalid)?;
        Ok(Pose::new(rotation, eye))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyStep {
    /// Meters per key press.
    pub translation: f64,
    /// Degrees per key press.
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerBlock {
    pub port: u16,
    /// StateFrame broadcast rate, Hz.
    pub state_rate: f64,
    /// Seconds of the pre-streaming synchronization move.
    pub handshake_duration: f64,
    /// Drawing-arm joints at session start.
    pub drawing_home: Vec<f64>,
    /// Stationary camera view; also the starting view in every condition.
    pub stationary_view: CameraView,
    pub key_step: KeyStep,
    /// Normalized paper points touched during calibration.
    pub calibration_touches: Vec<[f64; 2]>,
    /// Seconds simulated after the last input sample.
    pub settle_time: f64,
    /// Fixed delay applied to operator input, milliseconds.
    #[serde(default)]
    pub input_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarConfig {
    pub format: String,
    pub world: WorldBlock,
    pub gains: GainsBlock,
    #[serde(default)]
    pub planner: PlannerConfig,
    pub server: ServerBlock,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })
}

fn resolve_chain(src: &ChainSource, dir: &Path) -> Result<ChainSource, ConfigError> {
    match src {
        ChainSource::Inline(_) => Ok(src.clone()),
        ChainSource::Path(p) => {
            let path = dir.join(p);
            let text = read(&path)?;
            let file: ChainFile =
                serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: path.clone(), source })?;
            Ok(ChainSource::Inline(file))
        }
    }
}

fn resolve_mesh(src: &MeshSource, dir: &Path) -> Result<MeshSource, ConfigError> {
    match src {
        MeshSource::Inline(_) => Ok(src.clone()),
        MeshSource::Path(p) => {
            let path = dir.join(p);
            let mesh = load_mesh(&path, None).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            Ok(MeshSource::Inline(mesh))
        }
    }
}

fn resolve_arm(arm: &ArmBlock, dir: &Path) -> Result<ArmBlock, ConfigError> {
    Ok(ArmBlock {
        chain: resolve_chain(&arm.chain, dir)?,
        meshes: arm.meshes.iter().map(|m| resolve_mesh(m, dir)).collect::<Result<_, _>>()?,
    })
}

fn inline_chain(src: &ChainSource) -> Result<KinematicChain, ConfigError> {
    match src {
        ChainSource::Inline(f) => f.clone().into_chain().map_err(invalid),
        ChainSource::Path(p) => Err(invalid(format!("chain {p:?} not resolved"))),
    }
}

fn inline_meshes(srcs: &[MeshSource]) -> Result<Vec<TriangleMesh>, ConfigError> {
    srcs.iter()
        .map(|m| match m {
            MeshSource::Inline(mesh) => Ok(mesh.clone()),
            MeshSource::Path(p) => Err(invalid(format!("mesh {p:?} not resolved"))),
        })
        .collect()
}

impl AvatarConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let cfg: AvatarConfig =
            serde_json::from_str(&read(path)?).map_err(|source| ConfigError::Json { path: path.into(), source })?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads every referenced file relative to `dir` and validates the result.
    pub fn resolve(&self, dir: &Path) -> Result<Self, ConfigError> {
        if self.format != CONFIG_FORMAT {
            return Err(ConfigError::Format(self.format.clone()));
        }
        let mut out = self.clone();
        out.world.drawing = resolve_arm(&self.world.drawing, dir)?;
        out.world.camera = resolve_arm(&self.world.camera, dir)?;
        out.world.extra_occluders =
            self.world.extra_occluders.iter().map(|m| resolve_mesh(m, dir)).collect::<Result<_, _>>()?;
        out.planner.sx = self.world.grid[0];
        out.planner.sy = self.world.grid[1];
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world_config()?.validate().map_err(invalid)?;
        self.planner.validate().map_err(invalid)?;
        let g = &self.gains;
        if !g.impedance().is_valid() || !g.force().is_valid() {
            return Err(invalid("controller gains must be nonnegative"));
        }
        ForceScale::new(g.force_scale.f_min, g.force_scale.f_max).map_err(invalid)?;
        if g.camera_joint.stiffness.len() != 7 || g.camera_joint.damping.len() != 7 {
            return Err(invalid("camera joint gains need seven entries each"));
        }
        let s = &self.server;
        if s.drawing_home.len() != 7 {
            return Err(invalid("drawing_home needs seven joint values"));
        }
        if !(s.handshake_duration > 0.0) || !(s.state_rate > 0.0) || !(s.settle_time >= 0.0) {
            return Err(invalid("server timing values must be positive"));
        }
        if !(s.input_delay_ms >= 0.0) {
            return Err(invalid("input_delay_ms must be nonnegative"));
        }
        if s.calibration_touches.len() < 3 {
            return Err(invalid("calibration needs at least three touches"));
        }
        s.stationary_view.pose()?;
        Ok(())
    }

    /// Simulation world described by a resolved config.
    pub fn world_config(&self) -> Result<WorldConfig, ConfigError> {
        let w = &self.world;
        Ok(WorldConfig {
            drawing: inline_chain(&w.drawing.chain)?,
            drawing_meshes: LinkMeshSet::new(inline_meshes(&w.drawing.meshes)?),
            camera: inline_chain(&w.camera.chain)?,
            camera_meshes: LinkMeshSet::new(inline_meshes(&w.camera.meshes)?),
            camera_base: w.camera_base.to_pose(),
            paper: PaperSpec { p_xmax: w.paper.width, p_ymax: w.paper.height, pose: w.paper.pose.to_pose() },
            contact_stiffness: w.contact.stiffness,
            contact_damping: w.contact.damping,
            control_rate: w.control_rate,
            planner_rate: w.planner_rate,
            intrinsics: w.intrinsics,
            grid: (w.grid[0], w.grid[1]),
            extra_occluders: inline_meshes(&w.extra_occluders)?,
        })
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Path of the config shipped in the repository's `assets/` directory.
pub fn default_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/avatar.json")
}
