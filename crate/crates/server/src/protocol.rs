//! Wire protocol: one JSON object per line over a TCP stream.
//!
//! Every message is an [`Envelope`] carrying a sequence number and a
//! timestamp next to a `type`-tagged body.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use avatar_core::arm::{ChainFile, FrameSpec};
use avatar_core::mesh::TriangleMesh;
use avatar_core::se3::Pose;
use avatar_core::sim::CameraIntrinsics;
use avatar_core::teleop::{PaperSpec, TabletSample};

/// Camera condition of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Stationary camera.
    #[serde(rename = "ST")]
    Stationary,
    /// Keyboard-teleoperated camera.
    #[serde(rename = "TE")]
    Teleoperated,
    /// Autonomously planned camera.
    #[serde(rename = "AU")]
    Autonomous,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Stationary, Condition::Teleoperated, Condition::Autonomous];

    pub fn label(self) -> &'static str {
        match self {
            Condition::Stationary => "ST",
            Condition::Teleoperated => "TE",
            Condition::Autonomous => "AU",
        }
    }

    /// Name of the camera strategy implementing this condition.
    pub fn strategy(self) -> &'static str {
        match self {
            Condition::Stationary => "st-pose",
            Condition::Teleoperated => "te-pose",
            Condition::Autonomous => "au-pose",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "st" | "st-pose" | "stationary" => Ok(Condition::Stationary),
            "te" | "te-pose" | "teleoperated" => Ok(Condition::Teleoperated),
            "au" | "au-pose" | "autonomous" => Ok(Condition::Autonomous),
            _ => Err(format!("unknown condition {s:?}; expected ST, TE or AU")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    TabletSample(TabletSample),
    /// One key press: `axis` 0–2 translate along x/y/z, 3–5 rotate about x/y/z.
    KeyTeleop { axis: u8, direction: i8 },
    ConditionSet { condition: Condition },
    HandshakeStart,
    /// Touch the paper at a normalized point to refine the plane fit.
    CalibrationTouch { p_tx: f64, p_ty: f64 },
    /// Ends the session and flushes the log.
    SessionEnd,
}

impl ClientMessage {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ClientMessage::TabletSample(s) => s.validate().map_err(|e| e.to_string()),
            ClientMessage::KeyTeleop { axis, direction } => {
                if *axis > 5 {
                    Err(format!("key axis {axis} outside 0..=5"))
                } else if direction.abs() != 1 {
                    Err(format!("key direction {direction} must be +1 or -1"))
                } else {
                    Ok(())
                }
            }
            ClientMessage::CalibrationTouch { p_tx, p_ty } => {
                if (0.0..=1.0).contains(p_tx) && (0.0..=1.0).contains(p_ty) {
                    Ok(())
                } else {
                    Err("calibration touch outside the paper".into())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub sim_time: f64,
    pub condition: Condition,
    pub q_draw: Vec<f64>,
    pub q_cam: Vec<f64>,
    pub pen_pose: Pose,
    /// Camera pose in the drawing-arm base frame.
    pub camera_pose: Pose,
    pub contact: bool,
    pub normal_force: f64,
    pub f_ext: [f64; 6],
    pub viewpoint_quality: f64,
    /// Planner ticks completed so far in this session.
    pub planner_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshBundle {
    pub drawing_chain: ChainFile,
    pub camera_chain: ChainFile,
    pub drawing_meshes: Vec<TriangleMesh>,
    pub camera_meshes: Vec<TriangleMesh>,
    pub camera_base: FrameSpec,
    pub paper: PaperSpec,
    pub grid: [usize; 2],
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    StateFrame(Box<StateFrame>),
    CanvasDiff { cells: Vec<[usize; 2]> },
    MeshBundle(Box<MeshBundle>),
    Ack { ack: u64 },
    Error { echo: Option<u64>, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub seq: u64,
    /// Sender clock, seconds.
    pub t: f64,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Envelope<T> {
    /// One line of the wire format, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }
}

/// Parses a client line. On failure returns the sequence number if one could
/// be recovered, for the error reply.
pub fn parse_client_line(line: &str) -> Result<Envelope<ClientMessage>, (Option<u64>, String)> {
    match serde_json::from_str::<Envelope<ClientMessage>>(line) {
        Ok(env) => {
            env.body.validate().map_err(|e| (Some(env.seq), e))?;
            Ok(env)
        }
        Err(e) => {
            let seq = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("seq").and_then(|s| s.as_u64()));
            Err((seq, e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip() {
        let msg = Envelope {
            seq: 7,
            t: 1.25,
            body: ClientMessage::TabletSample(TabletSample {
                p_tx: 0.5,
                p_ty: 0.5,
                pressure: 0.3,
                altitude: 1.5,
                azimuth: 1.5,
                timestamp: 1.25,
            }),
        };
        let line = msg.to_line();
        assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
        assert!(line.contains("\"type\":\"tablet_sample\""));
        assert_eq!(parse_client_line(line.trim()).unwrap(), msg);
        let key = r#"{"seq":3,"t":0.0,"type":"key_teleop","axis":2,"direction":-1}"#;
        assert_eq!(parse_client_line(key).unwrap().body, ClientMessage::KeyTeleop { axis: 2, direction: -1 });
        let cond = r#"{"seq":4,"t":0.0,"type":"condition_set","condition":"AU"}"#;
        assert_eq!(
            parse_client_line(cond).unwrap().body,
            ClientMessage::ConditionSet { condition: Condition::Autonomous }
        );
    }

    #[test]
    fn malformed_lines_keep_the_sequence_number() {
        assert_eq!(parse_client_line(r#"{"seq":9,"t":0,"type":"nope"}"#).unwrap_err().0, Some(9));
        assert_eq!(parse_client_line("{not json").unwrap_err().0, None);
        let bad_key = r#"{"seq":5,"t":0,"type":"key_teleop","axis":7,"direction":1}"#;
        assert_eq!(parse_client_line(bad_key).unwrap_err().0, Some(5));
    }

    #[test]
    fn condition_names() {
        for c in Condition::ALL {
            assert_eq!(c.label().parse::<Condition>().unwrap(), c);
            assert_eq!(c.strategy().parse::<Condition>().unwrap(), c);
        }
        assert!("XX".parse::<Condition>().is_err());
    }
}
