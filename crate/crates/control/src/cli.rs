//! The `gazemesh` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gazemesh::scenesim::io::{write_frame_log, write_gaze_log, write_jsonl, TruthRecord};
use gazemesh::timesync::write_offset_log;
use serde_json::json;

use crate::api::{self, DEFAULT_BIND};
use crate::config::{Mode, SessionConfig};
use crate::posthoc::{export_viz_series, write_analysis, write_posthoc, write_projection};
use crate::session::{load_recording, posthoc_from_dir, Session, SessionArtifacts};
use crate::viz::{export_viz, pick_times};
use crate::ControlError;

#[derive(Debug, Parser)]
#[command(name = "gazemesh", version, about = "Synchronized multi-device eye tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Session config (JSON). Defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "GAZEMESH_DATA_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated gaze logs, clock offsets and ground truth.
    Sim {
        /// Also write ego and central feature-frame logs (large).
        #[arg(long)]
        frames: bool,
    },
    /// Run a session, persist every topic and process it afterwards.
    Record,
    /// Run a session with live projection only.
    Stream,
    /// Clock fits and projection for a recorded session.
    Project {
        /// Recorded session directory; defaults to --out.
        #[arg(long)]
        session: Option<PathBuf>,
    },
    /// Full post-hoc analysis for a recorded session.
    Analyze {
        #[arg(long)]
        session: Option<PathBuf>,
    },
    /// Render views and series exports for a recorded session.
    Viz {
        #[arg(long)]
        session: Option<PathBuf>,
        /// Number of time points to render.
        #[arg(long, default_value_t = 5)]
        frames: usize,
    },
    /// Run a paced session behind the HTTP/WebSocket API.
    Serve {
        #[arg(long, env = "GAZEMESH_BIND", default_value = DEFAULT_BIND)]
        bind: String,
        /// Simulated seconds per wall second (default 1).
        #[arg(long)]
        speed: Option<f64>,
        /// Stop serving once the session has ended.
        #[arg(long)]
        exit_on_end: bool,
    },
}

fn load_config(cli: &Cli) -> Result<SessionConfig, ControlError> {
    let mut cfg = match &cli.config {
        Some(p) => SessionConfig::load(p)?,
        None => SessionConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn need_out(cli: &Cli) -> Result<&Path, ControlError> {
    cli.out.as_deref().ok_or_else(|| ControlError::Config("--out or GAZEMESH_DATA_DIR is required".into()))
}

fn session_dir<'a>(cli: &'a Cli, session: &'a Option<PathBuf>) -> Result<&'a Path, ControlError> {
    match session {
        Some(p) => Ok(p),
        None => need_out(cli),
    }
}

fn summary(a: &SessionArtifacts) -> serde_json::Value {
    json!({
        "out": a.out,
        "devices": a.statuses.len(),
        "recording": a.statuses.iter().filter(|s| s.recording).count(),
        "annotations": a.annotations.len(),
        "posthoc": a.posthoc.as_ref().map(|p| json!({
            "devices": p.devices.len(),
            "excluded": p.excluded,
            "transformed_samples": p.batch.gaze.len(),
            "mean_pairwise_sim": p.pairwise_sim.as_ref().map(|m| m.mean_off_diagonal()),
        })),
        "live": a.live.as_ref().map(|l| json!({
            "collective_frames": l.collective.len(),
            "transformed_samples": l.transformed_total,
        })),
    })
}

fn sim(cfg: &SessionConfig, out: &Path, frames: bool) -> Result<serde_json::Value, ControlError> {
    let world = cfg.validate()?;
    let dir = out.join("sim");
    for sub in ["gaze", "offsets", "frames"] {
        if sub != "frames" || frames {
            fs::create_dir_all(dir.join(sub))?;
        }
    }
    serde_json::to_writer_pretty(File::create(dir.join("scene.json"))?, &*world.scene)?;
    let mut truth = BufWriter::new(File::create(dir.join("truth.jsonl"))?);
    let mut samples = 0;
    for i in cfg.selected(&world) {
        let d = &world.devices[i];
        let trace = world.gaze(i)?;
        samples += trace.samples.len();
        write_gaze_log(BufWriter::new(File::create(dir.join("gaze").join(format!("{}.jsonl", d.id)))?), &trace.samples)?;
        write_offset_log(BufWriter::new(File::create(dir.join("offsets").join(format!("{}.csv", d.id)))?), &world.offsets(i))?;
        write_jsonl(&mut truth, std::iter::once(TruthRecord::homography(d)).chain(TruthRecord::gaze(&d.id, &trace)))?;
        if frames {
            let path = dir.join("frames").join(format!("{}.jsonl", d.id));
            write_frame_log(BufWriter::new(File::create(path)?), world.ego_frames(i)?)?;
        }
    }
    if frames {
        write_frame_log(BufWriter::new(File::create(dir.join("central_frames.jsonl"))?), world.central_frames())?;
    }
    Ok(json!({ "out": dir, "devices": cfg.selected(&world).len(), "gaze_samples": samples }))
}

fn serve(mut cfg: SessionConfig, out: Option<&Path>, bind: &str, speed: Option<f64>, exit_on_end: bool) -> Result<serde_json::Value, ControlError> {
    if cfg.mode == Mode::Record {
        cfg.mode = Mode::Both;
    }
    if let Some(s) = speed {
        cfg.live.speed = Some(s);
    }
    cfg.live.speed.get_or_insert(1.0);
    if cfg.mode.records() && out.is_none() {
        cfg.mode = Mode::Stream;
    }
    let session = Session::start(cfg, out)?;
    let handle = session.handle();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let (listener, addr) = api::bind(bind).await.map_err(|e| ControlError::Runtime(format!("bind {bind}: {e}")))?;
        tracing::info!("serving on http://{addr}");
        let (done_tx, done_rx) = tokio::sync::oneshot::channel();
        let runner = std::thread::spawn(move || {
            let mut session = session;
            let r = session.run_to_end().and_then(|_| session.finish());
            let _ = done_tx.send(());
            r
        });
        let shutdown = async move {
            if exit_on_end {
                let _ = done_rx.await;
            } else {
                let _ = tokio::signal::ctrl_c().await;
            }
        };
        api::serve(listener, handle, shutdown).await?;
        let artifacts = tokio::task::spawn_blocking(move || runner.join())
            .await
            .map_err(|e| ControlError::Runtime(e.to_string()))?
            .map_err(|_| ControlError::Runtime("session thread panicked".into()))??;
        Ok(summary(&artifacts))
    })
}

pub fn execute(cli: &Cli) -> Result<serde_json::Value, ControlError> {
    match &cli.command {
        Command::Sim { frames } => sim(&load_config(cli)?, need_out(cli)?, *frames),
        Command::Record => {
            let mut cfg = load_config(cli)?;
            if cfg.mode != Mode::Both {
                cfg.mode = Mode::Record;
            }
            let mut s = Session::start(cfg, Some(need_out(cli)?))?;
            s.run_to_end()?;
            Ok(summary(&s.finish()?))
        }
        Command::Stream => {
            let mut cfg = load_config(cli)?;
            if cfg.mode != Mode::Both {
                cfg.mode = Mode::Stream;
            }
            let mut s = Session::start(cfg, cli.out.as_deref())?;
            s.run_to_end()?;
            Ok(summary(&s.finish()?))
        }
        Command::Project { session } => {
            let dir = session_dir(cli, session)?;
            let cfg = load_config(cli)?;
            let out = posthoc_from_dir(dir, &cfg.posthoc)?;
            write_projection(dir, &out)?;
            Ok(json!({ "session": dir, "transformed_samples": out.batch.gaze.len(), "excluded": out.excluded }))
        }
        Command::Analyze { session } => {
            let dir = session_dir(cli, session)?;
            let cfg = load_config(cli)?;
            let out = posthoc_from_dir(dir, &cfg.posthoc)?;
            write_posthoc(dir, &out, &cfg.posthoc.analysis)?;
            export_viz_series(dir, &out, cfg.posthoc.analysis.rolling_window)?;
            Ok(json!({ "session": dir, "devices": out.devices.len(), "excluded": out.excluded }))
        }
        Command::Viz { session, frames } => {
            let dir = session_dir(cli, session)?;
            let cfg = load_config(cli)?;
            let out = posthoc_from_dir(dir, &cfg.posthoc)?;
            write_analysis(dir, &out, &cfg.posthoc.analysis)?;
            let rec = load_recording(dir)?;
            let times = pick_times(&out.batch.central_times, *frames);
            let paths = export_viz(dir, &rec, &out, &times, &cfg.posthoc.analysis)?;
            Ok(json!({ "session": dir, "images": paths.len() }))
        }
        Command::Serve { bind, speed, exit_on_end } => {
            serve(load_config(cli)?, cli.out.as_deref(), bind, *speed, *exit_on_end)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(v) => {
            println!("{v}");
            0
        }
        Err(e) => {
            eprintln!("gazemesh: {e}");
            e.exit_code()
        }
    }
}
