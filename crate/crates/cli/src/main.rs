use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gaze_core::calibration::{self, config_digest, CalibrationSet};
use gaze_core::config::Config;
use gaze_core::eval::{
    export, offset_pixel, place_target, reference, run_experiment, AmplitudeBucket, TargetPlane,
    TrialSummary,
};
use gaze_core::geometry::PixelPoint;
use gaze_core::homography::WELL_CONDITIONED_MIN;
use gaze_core::rig::{oracle_fixate, MotorState, SimulatedRig};
use gaze_core::saccade::{execute, Corrections, Interpolation, Planner};

const EXIT_CONFIG: u8 = 2;
const EXIT_CALIBRATION: u8 = 3;
const EXIT_EVALUATION: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "gaze",
    version,
    about = "Calibrate and evaluate saccades on a simulated pan/tilt camera"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Corrective saccades after each primary saccade.
    #[arg(long, global = true)]
    corrective: Option<usize>,
    /// Calibration grid step in degrees.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Refuse calibration files recorded with a different rig or board.
    #[arg(long, global = true)]
    strict_digest: bool,
    /// Snap to the nearest calibration node instead of interpolating.
    #[arg(long, global = true)]
    nearest: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the calibration sweep and save it.
    Calibrate,
    /// Run chained saccade trials and export CSV and summary files.
    Evaluate {
        /// Calibration file to load instead of sweeping.
        #[arg(long)]
        calib: Option<PathBuf>,
    },
    /// One saccade from a start state to a target around the current fixation.
    Saccade {
        #[command(flatten)]
        shot: Shot,
        #[arg(long)]
        calib: Option<PathBuf>,
    },
    /// Brute-force motor state that fixates a target, for debugging.
    Oracle {
        #[command(flatten)]
        shot: Shot,
        /// Grid resolution of the search in degrees.
        #[arg(long, default_value_t = 0.5)]
        resolution: f64,
    },
}

#[derive(Debug, Args)]
struct Shot {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pan: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tilt: f64,
    /// Target eccentricity in degrees.
    #[arg(long, default_value_t = 8.0)]
    ecc: f64,
    /// Target direction in degrees, 0 rightward, 90 downward.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    dir: f64,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail<E: Into<anyhow::Error>>(code: u8) -> impl FnOnce(E) -> Failure {
    move |e| Failure {
        code,
        error: e.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.global).map_err(fail(EXIT_CONFIG))?;
    let g = &cli.global;
    match &cli.command {
        Command::Calibrate => {
            let set = calibrate(&cfg)?;
            std::fs::create_dir_all(&g.out).map_err(fail(EXIT_CALIBRATION))?;
            let path = g.out.join("calibration.jsonl");
            calibration::save(&set, &path).map_err(fail(EXIT_CALIBRATION))?;
            println!("samples={} step={}", set.len(), set.step());
            println!("digest={}", set.digest());
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Evaluate { calib } => {
            let set = calibration_set(&cfg, calib.as_deref(), g.strict_digest)?;
            let planner = Planner::new(Arc::new(set), interpolation(g));
            let mut rig = SimulatedRig::new(cfg.rig).map_err(fail(EXIT_CONFIG))?;
            let experiment = run_experiment(&mut rig, &cfg.board, &planner, &cfg.experiment())
                .map_err(fail(EXIT_EVALUATION))?;
            let weak = experiment
                .trials
                .iter()
                .filter(|t| t.plan.min_shared < WELL_CONDITIONED_MIN)
                .count();
            if weak > 0 {
                tracing::warn!(
                    trials = weak,
                    "plans used homographies from fewer than {WELL_CONDITIONED_MIN} correspondences"
                );
            }
            let summary = export(&experiment, &g.out).map_err(fail(EXIT_EVALUATION))?;
            println!("wrote {}", g.out.display());
            match summary {
                Some(s) => {
                    print_summary(&s, experiment.resamples());
                    Ok(())
                }
                None => Err(Failure {
                    code: EXIT_EVALUATION,
                    error: anyhow!(
                        "no successful trials ({} failed)",
                        experiment.failures.len()
                    ),
                }),
            }
        }
        Command::Saccade { shot, calib } => {
            let set = calibration_set(&cfg, calib.as_deref(), g.strict_digest)?;
            let planner = Planner::new(Arc::new(set), interpolation(g));
            let mut rig = SimulatedRig::new(cfg.rig).map_err(fail(EXIT_CONFIG))?;
            let (target, pixel) = aim(&mut rig, &cfg, shot).map_err(fail(EXIT_EVALUATION))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().single_shot);
            let obs = rig.observe_with(&cfg.board, Some(&target), &mut rng);
            let t = obs.target.unwrap_or(pixel);
            let plan = planner
                .plan(rig.commanded(), &obs, &t)
                .map_err(fail(EXIT_EVALUATION))?;
            println!(
                "start pan={} tilt={}  target u={:.3} v={:.3}",
                shot.pan, shot.tilt, t.u, t.v
            );
            println!(
                "plan pan={:.4} tilt={:.4} case={} mode={} cell={:?} alpha={:.4} beta={:.4} min_shared={}",
                plan.solved.pan,
                plan.solved.tilt,
                plan.case.as_str(),
                plan.mode.as_str(),
                plan.cell,
                plan.barycentric.0,
                plan.barycentric.1,
                plan.min_shared
            );
            if plan.min_shared < WELL_CONDITIONED_MIN {
                tracing::warn!(
                    shared = plan.min_shared,
                    "homography from few correspondences"
                );
            }
            let corrections = Corrections {
                count: cfg.experiment.corrective,
                stop_threshold_deg: cfg.experiment.stop_threshold_deg,
            };
            let landings = execute(
                &mut rig,
                &cfg.board,
                &target,
                &planner,
                &plan,
                corrections,
                &mut rng,
            )
            .map_err(fail(EXIT_EVALUATION))?;
            for (i, l) in landings.iter().enumerate() {
                println!(
                    "pass {i}: cmd pan={:.4} tilt={:.4} landing u={:.3} v={:.3} error={:.4} deg (h={:.4} v={:.4})",
                    l.commanded.pan, l.commanded.tilt, l.pixel.u, l.pixel.v, l.error_deg, l.error_h_deg, l.error_v_deg
                );
            }
            Ok(())
        }
        Command::Oracle { shot, resolution } => {
            let mut rig = SimulatedRig::new(cfg.rig).map_err(fail(EXIT_CONFIG))?;
            let (target, pixel) = aim(&mut rig, &cfg, shot).map_err(fail(EXIT_EVALUATION))?;
            let m = oracle_fixate(&cfg.rig, &target, *resolution).map_err(fail(EXIT_EVALUATION))?;
            println!(
                "target u={:.3} v={:.3} world=({:.3}, {:.3}, {:.3})",
                pixel.u, pixel.v, target.x, target.y, target.z
            );
            println!("oracle pan={:.4} tilt={:.4}", m.pan, m.tilt);
            Ok(())
        }
    }
}

fn load_config(g: &Global) -> anyhow::Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = g.trials {
        cfg.experiment.trials = n;
    }
    if let Some(n) = g.corrective {
        cfg.experiment.corrective = n;
    }
    if let Some(s) = g.step {
        if !(s > 0.0) {
            return Err(anyhow!("--step must be positive"));
        }
        cfg.sweep = cfg.sweep.with_step(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn interpolation(g: &Global) -> Interpolation {
    if g.nearest {
        Interpolation::NearestNeighbor
    } else {
        Interpolation::Bilinear
    }
}

fn calibrate(cfg: &Config) -> Result<CalibrationSet, Failure> {
    let mut rig = SimulatedRig::new(cfg.rig).map_err(fail(EXIT_CONFIG))?;
    let c = calibration::collect(&mut rig, &cfg.board, &cfg.sweep, cfg.seeds().calibration)
        .map_err(fail(EXIT_CALIBRATION))?;
    if !c.dropped.is_empty() {
        tracing::warn!(
            dropped = c.dropped.len(),
            "grid states saw no board corners"
        );
    }
    Ok(c.set)
}

fn calibration_set(
    cfg: &Config,
    path: Option<&Path>,
    strict: bool,
) -> Result<CalibrationSet, Failure> {
    let Some(path) = path else {
        return calibrate(cfg);
    };
    let digest = config_digest(&cfg.rig, &cfg.board);
    let set = calibration::load(path, strict.then_some(digest.as_str()))
        .with_context(|| format!("loading {}", path.display()))
        .map_err(fail(EXIT_CONFIG))?;
    if set.digest() != digest {
        tracing::warn!("calibration file was recorded with a different rig or board configuration");
    }
    Ok(set)
}

/// Moves the rig to the shot's start state and places its target.
fn aim(
    rig: &mut SimulatedRig,
    cfg: &Config,
    shot: &Shot,
) -> anyhow::Result<(Point3<f64>, PixelPoint)> {
    rig.command(MotorState::new(shot.pan, shot.tilt))?;
    let pixel = offset_pixel(&cfg.rig.intrinsics, shot.ecc, shot.dir);
    let plane = TargetPlane::new(&cfg.board, cfg.experiment.target_depth());
    let world = place_target(rig, &plane, &pixel).ok_or_else(|| {
        anyhow!(
            "target pixel ({:.1}, {:.1}) is not visible",
            pixel.u,
            pixel.v
        )
    })?;
    Ok((world, pixel))
}

fn print_summary(s: &TrialSummary, resamples: usize) {
    println!(
        "trials={} failed={} resampled={}",
        s.n, s.n_failed, resamples
    );
    println!("{:<26}{:>10}{:>12}", "", "simulated", "reference");
    let line = |k: &str, a: f64, b: f64| println!("{k:<26}{a:>10.3}{b:>12.2}");
    line(
        "mean primary (deg)",
        s.primary.mean,
        reference::MEAN_PRIMARY_DEG,
    );
    line(
        "mean final (deg)",
        s.last.mean,
        reference::MEAN_CORRECTED_DEG,
    );
    for (i, b) in AmplitudeBucket::ALL.iter().enumerate() {
        line(
            &format!("  {} primary (n={})", b.label(), s.buckets[i].n),
            s.buckets[i].mean_primary,
            reference::BUCKET_PRIMARY_DEG[i],
        );
    }
    for (i, b) in AmplitudeBucket::ALL.iter().enumerate() {
        line(
            &format!("  {} final", b.label()),
            s.buckets[i].mean_final,
            reference::BUCKET_CORRECTED_DEG[i],
        );
    }
    line("mean |h| (deg)", s.mean_abs_h, reference::MEAN_ABS_H_DEG);
    line("mean |v| (deg)", s.mean_abs_v, reference::MEAN_ABS_V_DEG);
    line("median |h| (deg)", s.median_abs_h, reference::MEDIAN_H_DEG);
    line("median |v| (deg)", s.median_abs_v, reference::MEDIAN_V_DEG);
    line(
        "primary < 1 deg",
        s.primary.fraction_under_1,
        reference::FRACTION_UNDER_1,
    );
    line(
        "primary < 2 deg",
        s.primary.fraction_under_2,
        reference::FRACTION_UNDER_2,
    );
}
