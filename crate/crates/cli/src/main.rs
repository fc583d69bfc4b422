//! `asyncbev` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

mod config;

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use asyncbev::eval::{self, run_sweep};
use asyncbev::ingest::{self, LogMeta};
use asyncbev::sensors::simulate;
use asyncbev::syncbuild::{self, build_variant, extrapolate, LatencyConfig, Modality};
use asyncbev::worldsim::gt_bev_at;
use asyncbev::{BevGrid, Payload, Scenario};

use config::{resolve_jobs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "asyncbev", version, about = "Asynchronous sensor-fusion workbench")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for `sweep` (falls back to ASYNCBEV_JOBS; 0 = automatic).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write its capture log.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioFlags,
        /// Output log directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Build one latency-shifted dataset variant from a capture log.
    Build {
        /// Capture log directory.
        #[arg(long, value_name = "DIR")]
        log: PathBuf,
        /// Point modality whose sweeps are shifted.
        #[arg(long, value_enum)]
        modality: ModalityArg,
        /// Target sensor-to-camera latency.
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
        /// Extrapolate radar points along their velocity.
        #[arg(long)]
        compensate: bool,
        /// Output variant directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score every latency rung and write the report CSV.
    Sweep {
        /// Capture log directory.
        #[arg(long, value_name = "DIR")]
        log: PathBuf,
        /// Report CSV path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        head: HeadFlags,
    },
    /// Render raw, compensated and ground-truth BEV images of one keyframe.
    Render {
        /// Radar variant directory written by `build`.
        #[arg(long, value_name = "DIR")]
        variant: PathBuf,
        /// Keyframe index within the log.
        #[arg(long)]
        keyframe: usize,
        /// Output directory for raw.ppm, compensated.ppm and gt.ppm.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        head: HeadFlags,
    },
    /// Check a capture log and list every violation.
    Validate {
        /// Capture log directory.
        #[arg(long, value_name = "DIR")]
        log: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModalityArg {
    Radar,
    Lidar,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Radar => Modality::Radar,
            ModalityArg::Lidar => Modality::Lidar,
        }
    }
}

#[derive(Args, Debug)]
struct ScenarioFlags {
    /// Scenario and capture seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Number of traffic agents.
    #[arg(long)]
    agents: Option<usize>,
    /// World half-extent in meters.
    #[arg(long)]
    bounds: Option<f64>,
    /// Disable position and velocity noise and clutter.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args, Debug)]
struct HeadFlags {
    /// Camera-channel seed (defaults to the log's capture seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Cells dilated around each radar hit.
    #[arg(long)]
    radar_dilation: Option<usize>,
    /// Cells dilated around each LiDAR hit.
    #[arg(long)]
    lidar_dilation: Option<usize>,
    /// Camera depth-noise growth per meter of range.
    #[arg(long)]
    camera_sigma: Option<f64>,
    /// Comma-separated radar rungs in milliseconds.
    #[arg(long, value_delimiter = ',')]
    radar_ladder_ms: Option<Vec<u64>>,
    /// Comma-separated LiDAR rungs in milliseconds.
    #[arg(long, value_delimiter = ',')]
    lidar_ladder_ms: Option<Vec<u64>>,
}

enum Failure {
    Usage(anyhow::Error),
    Failed(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn failed(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Failed(e.into())
}

fn apply_scenario(cfg: &mut RunConfig, f: &ScenarioFlags) {
    if let Some(s) = f.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = f.duration {
        cfg.scenario.duration_s = d;
    }
    if let Some(a) = f.agents {
        cfg.scenario.agent_count = a;
    }
    if let Some(b) = f.bounds {
        cfg.scenario.bounds = b;
    }
    if f.noiseless {
        cfg.sensors = cfg.sensors.clone().noiseless();
    }
}

fn apply_head(cfg: &mut RunConfig, f: &HeadFlags) {
    if let Some(s) = f.seed {
        cfg.seed = Some(s);
    }
    if let Some(r) = f.radar_dilation {
        cfg.head.radar_dilation_radius = r;
    }
    if let Some(r) = f.lidar_dilation {
        cfg.head.lidar_dilation_radius = r;
    }
    if let Some(s) = f.camera_sigma {
        cfg.head.camera_sigma_per_m = s;
    }
    if let Some(l) = &f.radar_ladder_ms {
        cfg.ladders.radar_ms = l.clone();
    }
    if let Some(l) = &f.lidar_ladder_ms {
        cfg.ladders.lidar_ms = l.clone();
    }
}

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(failed)
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Outcome {
    let params = cfg.scenario_params();
    let scenario = Scenario::generate(&params).map_err(usage)?;
    let records = simulate(&scenario, &cfg.sensors, params.seed).map_err(failed)?;
    ensure_dir(out)?;
    let meta = LogMeta { scenario, sensor_config: cfg.sensors.clone(), capture_seed: params.seed };
    let log = ingest::write_log(&records, &meta, out).map_err(failed)?;
    println!(
        "wrote {} sample_data rows, {} keyframes to {}",
        log.sample_data.len(),
        log.samples.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build(log_dir: &Path, cfg: LatencyConfig, out: &Path) -> Outcome {
    cfg.validate().map_err(usage)?;
    let log = ingest::read_log(log_dir).map_err(failed)?;
    let variant = build_variant(&log, &cfg).map_err(failed)?;
    ensure_dir(out)?;
    syncbuild::write_variant(&variant, out).map_err(failed)?;
    println!(
        "{} frames ({} dropped), mean achieved latency {:.1} ms, written to {}",
        variant.frames.len(),
        variant.dropped.len(),
        variant.mean_achieved_latency_us() / 1000.0,
        out.display()
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, jobs: usize, log_dir: &Path, out: &Path) -> Outcome {
    let log = ingest::read_log(log_dir).map_err(failed)?;
    let seed = cfg.seed.unwrap_or(log.meta.capture_seed);
    let result = run_sweep(&log, &cfg.ladders(), &cfg.sweep_params(seed, jobs)).map_err(failed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    eval::emit_report(&result, out).map_err(failed)?;
    println!(
        "{} rows over {} keyframes, camera-only IoU {:.4}, written to {}",
        result.rows.len(),
        result.camera_only.count(),
        result.camera_only.mean(),
        out.display()
    );
    Ok(())
}

fn cmd_render(cfg: &RunConfig, dir: &Path, keyframe: usize, out: &Path) -> Outcome {
    let variant = syncbuild::read_variant(dir).map_err(failed)?;
    if variant.config.modality != Modality::Radar {
        return Err(usage(anyhow!("render needs a radar variant; {} is LiDAR", dir.display())));
    }
    let frame = variant.frame_for_keyframe(keyframe).ok_or_else(|| {
        let have: Vec<usize> = variant.frames.iter().map(|f| f.keyframe_index).collect();
        usage(anyhow!("keyframe {keyframe} is not in the variant (available: {have:?})"))
    })?;
    let Payload::Radar(points) = &frame.payload else {
        return Err(failed(anyhow!("frame payload is not radar")));
    };
    let dt = (frame.t_cam - frame.source_timestamp) as f64 * 1e-6;
    // recover both settings from whichever one was stored
    let (raw, comp) = if variant.config.compensate {
        (extrapolate(points, -dt), points.clone())
    } else {
        (points.clone(), extrapolate(points, dt))
    };

    let scenario = &variant.meta.scenario;
    let seed = cfg.seed.unwrap_or(variant.meta.capture_seed);
    let params = cfg.sweep_params(seed, 1);
    let camera = eval::camera_channel(scenario, frame.keyframe_index, frame.t_cam, &params).map_err(failed)?;
    let gt = gt_bev_at(scenario, frame.t_cam, &params.grid).map_err(failed)?;
    let outlines = scenario.footprints_in_ego(frame.t_cam).map_err(failed)?;
    ensure_dir(out)?;
    let mut images: Vec<(&str, BevGrid)> = Vec::new();
    for (name, pts) in [("raw", raw), ("compensated", comp)] {
        let f = syncbuild::VariantFrame { payload: Payload::Radar(pts), ..frame.clone() };
        images.push((name, eval::predict_frame(&f, Modality::Radar, &camera, &params).map_err(failed)?));
    }
    images.push(("gt", BevGrid::zeros(params.grid)));
    for (name, pred) in &images {
        let path = out.join(format!("{name}.ppm"));
        eval::render_bev(pred, &gt, &outlines, &path).map_err(failed)?;
    }
    let iou = |g: &BevGrid| eval::iou(g, &gt).unwrap_or(f64::NAN);
    println!(
        "keyframe {keyframe}: latency {:.1} ms, IoU raw {:.4}, compensated {:.4}; images in {}",
        frame.achieved_latency_us as f64 / 1000.0,
        iou(&images[0].1),
        iou(&images[1].1),
        out.display()
    );
    Ok(())
}

fn cmd_validate(dir: &Path) -> Outcome {
    let log = ingest::read_log_unvalidated(dir).map_err(failed)?;
    let violations = ingest::validate_log(&log);
    if violations.is_empty() {
        println!("ok: {} keyframes, {} sample_data rows", log.samples.len(), log.sample_data.len());
        return Ok(());
    }
    for v in &violations {
        println!("{v}");
    }
    Err(failed(anyhow!("{} violation(s) in {}", violations.len(), dir.display())))
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(usage)?;
    match &cli.command {
        Command::Simulate { scenario, .. } => apply_scenario(&mut cfg, scenario),
        Command::Sweep { head, .. } | Command::Render { head, .. } => apply_head(&mut cfg, head),
        _ => {}
    }
    cfg.validate().map_err(usage)?;
    let env_jobs = env::var("ASYNCBEV_JOBS").ok();
    let jobs = resolve_jobs(cli.jobs, env_jobs.as_deref(), cfg.jobs).map_err(usage)?;

    match cli.command {
        Command::Simulate { out, .. } => cmd_simulate(&cfg, &out),
        Command::Build { log, modality, latency_ms, compensate, out } => {
            let lc = LatencyConfig { target_latency_us: latency_ms * 1000, modality: modality.into(), compensate };
            cmd_build(&log, lc, &out)
        }
        Command::Sweep { log, out, .. } => cmd_sweep(&cfg, jobs, &log, &out),
        Command::Render { variant, keyframe, out, .. } => cmd_render(&cfg, &variant, keyframe, &out),
        Command::Validate { log } => cmd_validate(&log),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
