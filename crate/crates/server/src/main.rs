use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avatar_core::metrics::ReferenceSet;
use avatar_core::teleop::PlaneFit;
use avatar_server::config::{default_config_path, AvatarConfig};
use avatar_server::protocol::Condition;
use avatar_server::replay::ReplayLog;
use avatar_server::script::{session_inputs, shape_samples, ScriptParams};
use avatar_server::serve::{ServeOptions, Server};
use avatar_server::session::{aggregate_log, calibrate, metrics_json, replay_log, run_session, PlaneReport, SessionOptions};

/// Drawing avatar: simulated drawing and camera arms with viewpoint planning.
#[derive(Parser)]
#[command(name = "avatar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a bundled reference shape headlessly and print its metrics.
    Sim {
        /// Session config; defaults to the shipped assets/avatar.json.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Camera condition: ST, TE or AU.
        #[arg(long, default_value = "AU")]
        condition: Condition,
        /// Reference shape to draw: line, square, triangle or circle.
        #[arg(long, default_value = "square")]
        shape: String,
        /// Pen speed in paper widths per second.
        #[arg(long, default_value_t = 0.2)]
        speed: f64,
        /// Tablet pressure in [0, 1] while drawing.
        #[arg(long, default_value_t = 0.5)]
        pressure: f64,
        /// Write the replay log here.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Write the metrics report here instead of stdout.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Use a saved paper plane (from `calibrate`) instead of calibrating.
        #[arg(long)]
        plane: Option<PathBuf>,
    },
    /// Serve a live session over TCP (newline-delimited JSON).
    Serve {
        /// TCP port on 127.0.0.1; defaults to the config's port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "AU")]
        condition: Condition,
        /// Write the replay log here.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Write the metrics report here when the session ends.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        plane: Option<PathBuf>,
    },
    /// Touch the configured calibration points and save the fitted plane.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the metrics report of a replay log.
    Metrics {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a replay log through the full pipeline.
    Replay {
        log: PathBuf,
        /// Evaluate the recorded drawing under another camera condition.
        #[arg(long)]
        condition: Option<Condition>,
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn load_config(path: Option<PathBuf>) -> Result<AvatarConfig> {
    Ok(AvatarConfig::load(path.unwrap_or_else(default_config_path))?)
}

fn load_plane(path: Option<PathBuf>) -> Result<Option<PlaneFit>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let report: PlaneReport = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
            Ok(Some(report.plane))
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim { config, condition, shape, speed, pressure, record, metrics, plane } => {
            let cfg = load_config(config)?;
            let refs = ReferenceSet::bundled();
            let reference = refs.get(&shape)?;
            let params = ScriptParams { speed, pressure, ..ScriptParams::default() };
            let samples = shape_samples(reference, &params);
            for s in &samples {
                s.validate()?;
            }
            let inputs = session_inputs(&samples, cfg.server.handshake_duration + 0.2);
            let opts = SessionOptions { shape: Some(shape), record, plane: load_plane(plane)?, ..Default::default() };
            let out = run_session(&cfg, condition, &inputs, &opts)?;
            emit(&metrics_json(&out.metrics), metrics.as_deref())
        }
        Command::Serve { port, config, condition, record, metrics, plane } => {
            let cfg = load_config(config)?;
            let port = port.unwrap_or(cfg.server.port);
            let opts = ServeOptions { port, condition, record, plane: load_plane(plane)? };
            let server = Server::bind(cfg, &opts)?;
            log::info!("listening on {}", server.local_addr());
            eprintln!("listening on {}", server.local_addr());
            let log = server.run()?;
            match aggregate_log(&log) {
                Ok(m) => emit(&metrics_json(&m), metrics.as_deref()),
                Err(e) => {
                    log::warn!("no metrics for this session: {e}");
                    Ok(())
                }
            }
        }
        Command::Calibrate { config, out } => {
            let cfg = load_config(config)?;
            let world = cfg.world_config()?;
            let plane = calibrate(&world, &cfg)?;
            let report = PlaneReport { plane, touches: cfg.server.calibration_touches.clone() };
            emit(&serde_json::to_string_pretty(&report)?, out.as_deref())
        }
        Command::Metrics { log, out } => {
            let log = ReplayLog::load(log)?;
            emit(&metrics_json(&aggregate_log(&log)?), out.as_deref())
        }
        Command::Replay { log, condition, record, metrics } => {
            let log = ReplayLog::load(log)?;
            let out = replay_log(&log, condition, record)?;
            emit(&metrics_json(&out.metrics), metrics.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
