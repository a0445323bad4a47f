//! Replay log: JSON lines. Line 1 is a [`ReplayHeader`]; every later line is
//! a [`ReplayEvent`] with a nondecreasing `t`. A complete log ends with the
//! `session_end` marker.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use crossbeam::channel::{unbounded, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use avatar_core::planner::PlannerTick;
use avatar_core::se3::Pose;
use avatar_core::teleop::PlaneFit;

use crate::config::AvatarConfig;
use crate::protocol::{ClientMessage, Condition};

pub const REPLAY_FORMAT: &str = "avatar-replay/1";

pub const MARK_HANDSHAKE_END: &str = "handshake_end";
pub const MARK_SESSION_END: &str = "session_end";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("malformed log, line {line}: {message}")]
    MalformedLog { line: usize, message: String },
    #[error("log format {found:?}, expected {REPLAY_FORMAT:?}")]
    VersionMismatch { found: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn malformed(line: usize, message: impl Into<String>) -> ReplayError {
    ReplayError::MalformedLog { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub format: String,
    pub config_hash: String,
    pub condition: Condition,
    /// Reference shape the session drew, when scripted.
    pub shape: Option<String>,
    /// Fully resolved configuration; replays need nothing else.
    pub config: AvatarConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayEvent {
    /// Operator input as applied by the control loop.
    Input { t: f64, seq: u64, message: ClientMessage },
    /// Pen tip, 100 Hz.
    Pen { t: f64, pose: Pose, contact: bool, normal_force: f64, painting: bool },
    /// Planner-rate record: quality seen from the actual camera, and the
    /// planner's own diagnostics under AU-Pose.
    Planner {
        t: f64,
        condition: Condition,
        quality: f64,
        camera: Pose,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        tick: Option<Box<PlannerTick>>,
    },
    CanvasDiff { t: f64, cells: Vec<[usize; 2]> },
    /// Paper plane in use from `t` on.
    Calibration { t: f64, plane: PlaneFit },
    Marker { t: f64, name: String },
}

impl ReplayEvent {
    pub fn time(&self) -> f64 {
        match self {
            ReplayEvent::Input { t, .. }
            | ReplayEvent::Pen { t, .. }
            | ReplayEvent::Planner { t, .. }
            | ReplayEvent::CanvasDiff { t, .. }
            | ReplayEvent::Calibration { t, .. }
            | ReplayEvent::Marker { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub header: ReplayHeader,
    pub events: Vec<ReplayEvent>,
}

impl ReplayLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<ReplayLog, ReplayError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| malformed(1, "empty log"))?;
        let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| malformed(1, e.to_string()))?;
        let format = raw.get("format").and_then(|f| f.as_str()).unwrap_or_default().to_string();
        if format != REPLAY_FORMAT {
            return Err(ReplayError::VersionMismatch { found: format });
        }
        let header: ReplayHeader = serde_json::from_value(raw).map_err(|e| malformed(1, e.to_string()))?;
        if header.config.hash() != header.config_hash {
            return Err(malformed(1, "config hash does not match the embedded config"));
        }
        let mut events = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEvent = serde_json::from_str(line).map_err(|e| malformed(n, e.to_string()))?;
            let t = e.time();
            if !(t >= last_t) {
                return Err(malformed(n, format!("time {t} before {last_t}")));
            }
            last_t = t;
            events.push(e);
        }
        match events.last() {
            Some(ReplayEvent::Marker { name, .. }) if name == MARK_SESSION_END => {}
            _ => return Err(malformed(text.lines().count(), "log does not end with the session_end marker")),
        }
        Ok(ReplayLog { header, events })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ReplayLog, ReplayError> {
        let path = path.as_ref();
        let io = |source| ReplayError::Io { path: path.into(), source };
        let mut text = String::new();
        for line in BufReader::new(File::open(path).map_err(io)?).lines() {
            text.push_str(&line.map_err(io)?);
            text.push('\n');
        }
        Self::parse(&text)
    }
}

enum Job {
    Line(String),
    Flush(Sender<()>),
}

/// Appends log lines from a dedicated thread so callers never touch the disk.
pub struct ReplayWriter {
    tx: Option<Sender<Job>>,
    worker: Option<JoinHandle<std::io::Result<()>>>,
    path: PathBuf,
}

impl ReplayWriter {
    pub fn create(path: impl AsRef<Path>, header: &ReplayHeader) -> Result<Self, ReplayError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|source| ReplayError::Io { path: path.clone(), source })?;
        let (tx, rx) = unbounded::<Job>();
        let worker = std::thread::Builder::new()
            .name("replay-appender".into())
            .spawn(move || {
                let mut out = BufWriter::new(file);
                for job in rx {
                    match job {
                        Job::Line(l) => {
                            out.write_all(l.as_bytes())?;
                            out.write_all(b"\n")?;
                        }
                        Job::Flush(done) => {
                            out.flush()?;
                            let _ = done.send(());
                        }
                    }
                }
                out.flush()
            })
            .map_err(|source| ReplayError::Io { path: path.clone(), source })?;
        let w = Self { tx: Some(tx), worker: Some(worker), path };
        w.send(serde_json::to_string(header).expect("header serializes"));
        Ok(w)
    }

    fn send(&self, line: String) {
        if let Some(tx) = &self.tx {
            if tx.send(Job::Line(line)).is_err() {
                log::error!("replay appender for {} stopped", self.path.display());
            }
        }
    }

    pub fn append(&self, e: &ReplayEvent) {
        self.send(serde_json::to_string(e).expect("event serializes"));
    }

    /// Blocks until every queued line is on disk.
    pub fn flush(&self) {
        if let Some(tx) = &self.tx {
            let (done_tx, done_rx) = crossbeam::channel::bounded(1);
            if tx.send(Job::Flush(done_tx)).is_ok() {
                let _ = done_rx.recv();
            }
        }
    }

    pub fn finish(mut self) -> Result<(), ReplayError> {
        self.close()
    }

    fn close(&mut self) -> Result<(), ReplayError> {
        drop(self.tx.take());
        if let Some(worker) = self.worker.take() {
            let result = worker.join().unwrap_or_else(|_| Err(std::io::Error::other("appender panicked")));
            result.map_err(|source| ReplayError::Io { path: self.path.clone(), source })?;
        }
        Ok(())
    }
}

impl Drop for ReplayWriter {
    fn drop(&mut self) {
        if let Err(e) = self.close() {
            log::error!("closing replay log: {e}");
        }
    }
}
