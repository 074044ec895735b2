//! Saccade experiments: eccentricity sampling, chained trials, summary
//! statistics and file export.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{back_project, PixelPoint};
use crate::rig::{MotorState, SimulatedRig, TargetBoard};
use crate::saccade::{execute, Corrections, Landing, PlanMode, Planner, SaccadeError, SaccadePlan};

/// Published figures for the DIJIT head, printed next to simulated results.
pub mod reference {
    pub const MEAN_PRIMARY_DEG: f64 = 1.13;
    pub const MEAN_CORRECTED_DEG: f64 = 0.96;
    pub const BUCKET_PRIMARY_DEG: [f64; 3] = [0.93, 1.41, 1.62];
    pub const BUCKET_CORRECTED_DEG: [f64; 3] = [0.77, 1.16, 1.36];
    pub const MEAN_ABS_H_DEG: f64 = 0.90;
    pub const MEAN_ABS_V_DEG: f64 = 0.54;
    pub const MEDIAN_H_DEG: f64 = 0.72;
    pub const MEDIAN_V_DEG: f64 = 0.41;
    pub const FRACTION_UNDER_1: f64 = 0.58;
    pub const FRACTION_UNDER_2: f64 = 0.90;
    pub const TRIALS: usize = 191;
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no target reachable after {0} attempts")]
    Unreachable(usize),
    #[error("no successful trials")]
    NoSuccessfulTrials,
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Saccade(#[from] SaccadeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AmplitudeBucket {
    Small,
    Medium,
    Large,
}

impl AmplitudeBucket {
    pub const ALL: [AmplitudeBucket; 3] = [Self::Small, Self::Medium, Self::Large];
    pub const PROBABILITIES: [f64; 3] = [0.58, 0.33, 0.09];

    pub fn range_deg(&self) -> (f64, f64) {
        match self {
            Self::Small => (0.0, 6.0),
            Self::Medium => (6.0, 12.0),
            Self::Large => (12.0, 18.0),
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn of(ecc_deg: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|b| {
            let (lo, hi) = b.range_deg();
            ecc_deg >= lo && ecc_deg < hi
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Small => "0-6",
            Self::Medium => "6-12",
            Self::Large => "12-18",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.label() == s)
    }
}

impl fmt::Display for AmplitudeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eccentricity {
    pub bucket: AmplitudeBucket,
    pub ecc_deg: f64,
    /// Direction in the image, 0 rightward, 90 downward.
    pub dir_deg: f64,
}

/// Bucket by the fixed mix, eccentricity uniform inside it, direction
/// uniform on the circle.
pub fn draw_eccentricity<R: Rng + ?Sized>(rng: &mut R) -> Eccentricity {
    let x: f64 = rng.random();
    let bucket = if x < AmplitudeBucket::PROBABILITIES[0] {
        AmplitudeBucket::Small
    } else if x < AmplitudeBucket::PROBABILITIES[0] + AmplitudeBucket::PROBABILITIES[1] {
        AmplitudeBucket::Medium
    } else {
        AmplitudeBucket::Large
    };
    let (lo, hi) = bucket.range_deg();
    Eccentricity {
        bucket,
        ecc_deg: rng.random_range(lo..hi),
        dir_deg: rng.random_range(0.0..360.0),
    }
}

/// Pixel at angular offset `ecc` in direction `dir` from the image center.
pub fn offset_pixel(
    intr: &crate::geometry::CameraIntrinsics,
    ecc_deg: f64,
    dir_deg: f64,
) -> PixelPoint {
    let r = ecc_deg.to_radians().tan();
    let (s, c) = dir_deg.to_radians().sin_cos();
    let center = intr.image_center();
    PixelPoint::new(center.u + intr.fx * r * c, center.v + intr.fy * r * s)
}

/// Plane the targets are placed on: the board plane, or the plane
/// `z = depth` when a depth is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPlane {
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
}

impl TargetPlane {
    pub fn new(board: &TargetBoard, depth_mm: Option<f64>) -> Self {
        match depth_mm {
            Some(z) => Self {
                point: Point3::new(0.0, 0.0, z),
                normal: Vector3::z(),
            },
            None => Self {
                point: board.center(),
                normal: board.normal(),
            },
        }
    }
}

/// World point seen at `pixel` from the rig's current pose, placed on
/// `plane`.
pub fn place_target(
    rig: &SimulatedRig,
    plane: &TargetPlane,
    pixel: &PixelPoint,
) -> Option<Point3<f64>> {
    let intr = &rig.model.intrinsics;
    if !intr.contains(pixel) {
        return None;
    }
    let pose = rig.model.camera_pose(rig.actual());
    let dir: Vector3<f64> = pose.rotation * back_project(intr, pixel).as_vector();
    let origin = Point3::from(pose.translation.vector);
    let denom = plane.normal.dot(&dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let d = plane.normal.dot(&(plane.point - origin)) / denom;
    (d > 0.0).then(|| origin + dir * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSample {
    pub ecc: Eccentricity,
    pub pixel: PixelPoint,
    pub world: Point3<f64>,
}

/// Draws a target around the current fixation, resampling the direction
/// when the pixel falls outside the image.
pub fn sample_target<R: Rng + ?Sized>(
    rng: &mut R,
    rig: &SimulatedRig,
    plane: &TargetPlane,
    max_attempts: usize,
) -> Result<TargetSample, EvalError> {
    let mut ecc = draw_eccentricity(rng);
    for _ in 0..max_attempts {
        let pixel = offset_pixel(&rig.model.intrinsics, ecc.ecc_deg, ecc.dir_deg);
        if let Some(world) = place_target(rig, plane, &pixel) {
            return Ok(TargetSample { ecc, pixel, world });
        }
        ecc.dir_deg = rng.random_range(0.0..360.0);
    }
    Err(EvalError::Unreachable(max_attempts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub corrective: usize,
    /// Skip remaining corrective passes once the error is below this.
    pub stop_threshold_deg: f64,
    /// Taken from the top-level seed, never from the config file.
    #[serde(skip)]
    pub seed: u64,
    /// Target draws allowed per trial before it counts as a failure.
    pub max_resamples: usize,
    /// Depth of the plane `z = depth` that targets are placed on.
    pub target_depth_mm: f64,
    /// Place targets on the calibration board plane instead.
    pub target_on_board: bool,
}

impl ExperimentConfig {
    pub fn target_depth(&self) -> Option<f64> {
        (!self.target_on_board).then_some(self.target_depth_mm)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: reference::TRIALS,
            corrective: 1,
            stop_threshold_deg: 0.0,
            seed: 0,
            max_resamples: 100,
            target_depth_mm: 300.0,
            target_on_board: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaccadeTrial {
    pub id: usize,
    pub start: MotorState,
    pub ecc: Eccentricity,
    pub target: Point3<f64>,
    pub plan: SaccadePlan,
    pub landings: Vec<Landing>,
    /// Targets discarded before this one because their plan left the hull.
    pub resamples: usize,
}

impl SaccadeTrial {
    pub fn primary(&self) -> &Landing {
        &self.landings[0]
    }

    pub fn last(&self) -> &Landing {
        self.landings.last().expect("trial without landings")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub id: usize,
    pub start: MotorState,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Experiment {
    pub trials: Vec<SaccadeTrial>,
    pub failures: Vec<TrialFailure>,
}

impl Experiment {
    pub fn resamples(&self) -> usize {
        self.trials.iter().map(|t| t.resamples).sum()
    }
}

/// Runs chained trials: every trial starts where the previous one ended.
pub fn run_experiment(
    rig: &mut SimulatedRig,
    board: &TargetBoard,
    planner: &Planner,
    config: &ExperimentConfig,
) -> Result<Experiment, EvalError> {
    if config.trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let corrections = Corrections {
        count: config.corrective,
        stop_threshold_deg: config.stop_threshold_deg,
    };
    let mut out = Experiment::default();
    for id in 0..config.trials {
        let start = rig.commanded();
        match run_trial(rig, board, planner, config, corrections, &mut rng) {
            Ok((ecc, target, plan, landings, resamples)) => out.trials.push(SaccadeTrial {
                id,
                start,
                ecc,
                target,
                plan,
                landings,
                resamples,
            }),
            Err(e) => {
                tracing::warn!(trial = id, error = %e, "trial failed");
                out.failures.push(TrialFailure {
                    id,
                    start,
                    reason: e.to_string(),
                });
            }
        }
    }
    if out.resamples() > 0 {
        tracing::info!(
            resamples = out.resamples(),
            "targets resampled outside the calibration hull"
        );
    }
    Ok(out)
}

type TrialOutcome = (Eccentricity, Point3<f64>, SaccadePlan, Vec<Landing>, usize);

fn run_trial(
    rig: &mut SimulatedRig,
    board: &TargetBoard,
    planner: &Planner,
    config: &ExperimentConfig,
    corrections: Corrections,
    rng: &mut ChaCha8Rng,
) -> Result<TrialOutcome, EvalError> {
    let start = rig.commanded();
    let plane = TargetPlane::new(board, config.target_depth());
    for resamples in 0..config.max_resamples {
        let target = sample_target(rng, rig, &plane, config.max_resamples)?;
        let obs = rig.observe_with(board, Some(&target.world), rng);
        let Some(t) = obs.target else { continue };
        let plan = match planner.plan(start, &obs, &t) {
            Ok(p) if p.mode != PlanMode::BoundaryExtrapolated => p,
            Ok(_) | Err(SaccadeError::NoValidCell) => continue,
            Err(e) => return Err(e.into()),
        };
        let landings = execute(rig, board, &target.world, planner, &plan, corrections, rng)?;
        return Ok((target.ecc, target.world, plan, landings, resamples));
    }
    Err(EvalError::Unreachable(config.max_resamples))
}

/// A fixed start state and target, replayable against different planners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub start: MotorState,
    pub target: TargetSample,
}

fn approach(rig: &mut SimulatedRig, start: MotorState) -> Result<(), EvalError> {
    let below = MotorState::new(start.pan - 2.0, start.tilt - 2.0);
    rig.command(below).map_err(SaccadeError::from)?;
    rig.command(start).map_err(SaccadeError::from)?;
    Ok(())
}

/// Draws `n` probes with starts uniform inside `[pan_min, pan_max] x
/// [tilt_min, tilt_max]`, each start reached from below on both axes.
pub fn draw_probes(
    rig: &mut SimulatedRig,
    board: &TargetBoard,
    bounds: ([f64; 2], [f64; 2]),
    n: usize,
    target_depth_mm: Option<f64>,
    seed: u64,
) -> Result<Vec<Probe>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = TargetPlane::new(board, target_depth_mm);
    let ([p0, p1], [t0, t1]) = bounds;
    (0..n)
        .map(|_| {
            let start = MotorState::new(rng.random_range(p0..=p1), rng.random_range(t0..=t1));
            approach(rig, start)?;
            let target = sample_target(&mut rng, rig, &plane, 100)?;
            Ok(Probe { start, target })
        })
        .collect()
}

/// Primary saccade for every probe. Plans that leave the hull are recorded
/// as `None`.
pub fn run_probes(
    rig: &mut SimulatedRig,
    board: &TargetBoard,
    planner: &Planner,
    probes: &[Probe],
    seed: u64,
) -> Result<Vec<Option<Landing>>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let once = Corrections {
        count: 0,
        stop_threshold_deg: 0.0,
    };
    probes
        .iter()
        .map(|p| {
            approach(rig, p.start)?;
            let obs = rig.observe_with(board, Some(&p.target.world), &mut rng);
            let t = obs.target.ok_or(SaccadeError::TargetLost)?;
            let plan = planner.plan(rig.commanded(), &obs, &t)?;
            if plan.mode == PlanMode::BoundaryExtrapolated {
                return Ok(None);
            }
            let mut l = execute(rig, board, &p.target.world, planner, &plan, once, &mut rng)?;
            Ok(l.pop())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub fraction_under_1: f64,
    pub fraction_under_2: f64,
}

impl ErrorStats {
    fn of(errors: &[f64]) -> Self {
        Self {
            mean: mean(errors),
            median: median(errors),
            fraction_under_1: fraction(errors, 1.0),
            fraction_under_2: fraction(errors, 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BucketStats {
    pub n: usize,
    /// `NaN` for an empty bucket.
    pub mean_primary: f64,
    pub mean_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub n: usize,
    pub n_failed: usize,
    pub primary: ErrorStats,
    pub last: ErrorStats,
    pub buckets: [BucketStats; 3],
    pub mean_abs_h: f64,
    pub mean_abs_v: f64,
    pub median_abs_h: f64,
    pub median_abs_v: f64,
}

/// The per-trial numbers a summary is computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub bucket: AmplitudeBucket,
    pub primary: f64,
    pub primary_h: f64,
    pub primary_v: f64,
    pub last: f64,
}

pub fn summarize(trials: &[SaccadeTrial], n_failed: usize) -> Result<TrialSummary, EvalError> {
    let rows: Vec<SummaryRow> = trials
        .iter()
        .map(|t| SummaryRow {
            bucket: t.ecc.bucket,
            primary: t.primary().error_deg,
            primary_h: t.primary().error_h_deg,
            primary_v: t.primary().error_v_deg,
            last: t.last().error_deg,
        })
        .collect();
    summarize_rows(&rows, n_failed)
}

pub fn summarize_rows(rows: &[SummaryRow], n_failed: usize) -> Result<TrialSummary, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::NoSuccessfulTrials);
    }
    let primary: Vec<f64> = rows.iter().map(|r| r.primary).collect();
    let last: Vec<f64> = rows.iter().map(|r| r.last).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.primary_h.abs()).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.primary_v.abs()).collect();
    let buckets = AmplitudeBucket::ALL.map(|b| {
        let p: Vec<f64> = rows
            .iter()
            .filter(|r| r.bucket == b)
            .map(|r| r.primary)
            .collect();
        let l: Vec<f64> = rows
            .iter()
            .filter(|r| r.bucket == b)
            .map(|r| r.last)
            .collect();
        BucketStats {
            n: p.len(),
            mean_primary: mean(&p),
            mean_final: mean(&l),
        }
    });
    Ok(TrialSummary {
        n: rows.len(),
        n_failed,
        primary: ErrorStats::of(&primary),
        last: ErrorStats::of(&last),
        buckets,
        mean_abs_h: mean(&h),
        mean_abs_v: mean(&v),
        median_abs_h: median(&h),
        median_abs_v: median(&v),
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn fraction(xs: &[f64], below: f64) -> f64 {
    xs.iter().filter(|&&x| x < below).count() as f64 / xs.len() as f64
}

pub const CSV_HEADER: [&str; 16] = [
    "trial_id",
    "start_pan",
    "start_tilt",
    "ecc_deg",
    "dir_deg",
    "bucket",
    "cmd_pan",
    "cmd_tilt",
    "mode",
    "case",
    "landing_u",
    "landing_v",
    "err_deg",
    "err_h_deg",
    "err_v_deg",
    "pass_index",
];

/// One row per landing, primary pass first.
pub fn write_trials_csv<W: Write>(trials: &[SaccadeTrial], w: W) -> Result<(), EvalError> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(CSV_HEADER)?;
    for t in trials {
        for (pass, l) in t.landings.iter().enumerate() {
            out.write_record([
                t.id.to_string(),
                t.start.pan.to_string(),
                t.start.tilt.to_string(),
                t.ecc.ecc_deg.to_string(),
                t.ecc.dir_deg.to_string(),
                t.ecc.bucket.label().to_string(),
                l.commanded.pan.to_string(),
                l.commanded.tilt.to_string(),
                l.mode.as_str().to_string(),
                l.case.as_str().to_string(),
                l.pixel.u.to_string(),
                l.pixel.v.to_string(),
                l.error_deg.to_string(),
                l.error_h_deg.to_string(),
                l.error_v_deg.to_string(),
                pass.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Rebuilds summary rows from a trial CSV.
pub fn read_trial_rows<R: io::Read>(r: R) -> Result<Vec<SummaryRow>, EvalError> {
    let mut reader = csv::Reader::from_reader(r);
    let bad = |m: &str| EvalError::Io(io::Error::new(io::ErrorKind::InvalidData, m.to_string()));
    let mut rows: Vec<SummaryRow> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, EvalError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(&format!("bad field {}", CSV_HEADER[i])))
        };
        let pass = num(15)? as usize;
        let err = num(12)?;
        if pass == 0 {
            rows.push(SummaryRow {
                bucket: rec
                    .get(5)
                    .and_then(AmplitudeBucket::from_label)
                    .ok_or_else(|| bad("bad bucket"))?,
                primary: err,
                primary_h: num(13)?,
                primary_v: num(14)?,
                last: err,
            });
        } else {
            rows.last_mut()
                .ok_or_else(|| bad("corrective row before primary"))?
                .last = err;
        }
    }
    Ok(rows)
}

pub fn write_summary<W: Write>(
    summary: Option<&TrialSummary>,
    n_failed: usize,
    resamples: usize,
    mut w: W,
) -> io::Result<()> {
    let Some(s) = summary else {
        writeln!(w, "status=NoSuccessfulTrials")?;
        writeln!(w, "n=0")?;
        writeln!(w, "n_failed={n_failed}")?;
        return Ok(());
    };
    let mut kv = |k: &str, v: String| writeln!(w, "{k}={v}");
    kv("status", "ok".into())?;
    kv("n", s.n.to_string())?;
    kv("n_failed", s.n_failed.to_string())?;
    kv("resamples", resamples.to_string())?;
    kv("mean_primary_deg", s.primary.mean.to_string())?;
    kv("median_primary_deg", s.primary.median.to_string())?;
    kv("mean_final_deg", s.last.mean.to_string())?;
    kv("median_final_deg", s.last.median.to_string())?;
    for (b, st) in AmplitudeBucket::ALL.iter().zip(&s.buckets) {
        kv(&format!("bucket_{}_n", b.label()), st.n.to_string())?;
        kv(
            &format!("bucket_{}_mean_primary_deg", b.label()),
            st.mean_primary.to_string(),
        )?;
        kv(
            &format!("bucket_{}_mean_final_deg", b.label()),
            st.mean_final.to_string(),
        )?;
    }
    kv("mean_abs_h_deg", s.mean_abs_h.to_string())?;
    kv("mean_abs_v_deg", s.mean_abs_v.to_string())?;
    kv("median_abs_h_deg", s.median_abs_h.to_string())?;
    kv("median_abs_v_deg", s.median_abs_v.to_string())?;
    kv(
        "fraction_primary_under_1deg",
        s.primary.fraction_under_1.to_string(),
    )?;
    kv(
        "fraction_primary_under_2deg",
        s.primary.fraction_under_2.to_string(),
    )?;
    kv(
        "fraction_final_under_1deg",
        s.last.fraction_under_1.to_string(),
    )?;
    kv(
        "fraction_final_under_2deg",
        s.last.fraction_under_2.to_string(),
    )?;
    use reference as r;
    kv("reference_trials", r::TRIALS.to_string())?;
    kv(
        "reference_mean_primary_deg",
        r::MEAN_PRIMARY_DEG.to_string(),
    )?;
    kv(
        "reference_mean_final_deg",
        r::MEAN_CORRECTED_DEG.to_string(),
    )?;
    for (i, b) in AmplitudeBucket::ALL.iter().enumerate() {
        kv(
            &format!("reference_bucket_{}_mean_primary_deg", b.label()),
            r::BUCKET_PRIMARY_DEG[i].to_string(),
        )?;
        kv(
            &format!("reference_bucket_{}_mean_final_deg", b.label()),
            r::BUCKET_CORRECTED_DEG[i].to_string(),
        )?;
    }
    kv("reference_mean_abs_h_deg", r::MEAN_ABS_H_DEG.to_string())?;
    kv("reference_mean_abs_v_deg", r::MEAN_ABS_V_DEG.to_string())?;
    kv("reference_median_abs_h_deg", r::MEDIAN_H_DEG.to_string())?;
    kv("reference_median_abs_v_deg", r::MEDIAN_V_DEG.to_string())?;
    kv(
        "reference_fraction_primary_under_1deg",
        r::FRACTION_UNDER_1.to_string(),
    )?;
    kv(
        "reference_fraction_primary_under_2deg",
        r::FRACTION_UNDER_2.to_string(),
    )?;
    Ok(())
}

/// Landing points as angular offsets from the image center, one row per
/// landing.
pub fn write_scatter<W: Write>(trials: &[SaccadeTrial], w: W) -> Result<(), EvalError> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(["trial_id", "pass_index", "bucket", "x_deg", "y_deg"])?;
    for t in trials {
        for (pass, l) in t.landings.iter().enumerate() {
            out.write_record([
                t.id.to_string(),
                pass.to_string(),
                t.ecc.bucket.label().to_string(),
                l.error_h_deg.to_string(),
                l.error_v_deg.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `trials.csv`, `summary.txt` and `scatter.csv` into `dir`.
pub fn export(experiment: &Experiment, dir: &Path) -> Result<Option<TrialSummary>, EvalError> {
    fs::create_dir_all(dir)?;
    write_trials_csv(
        &experiment.trials,
        io::BufWriter::new(fs::File::create(dir.join("trials.csv"))?),
    )?;
    write_scatter(
        &experiment.trials,
        io::BufWriter::new(fs::File::create(dir.join("scatter.csv"))?),
    )?;
    let summary = match summarize(&experiment.trials, experiment.failures.len()) {
        Ok(s) => Some(s),
        Err(EvalError::NoSuccessfulTrials) => None,
        Err(e) => return Err(e),
    };
    let mut f = io::BufWriter::new(fs::File::create(dir.join("summary.txt"))?);
    write_summary(
        summary.as_ref(),
        experiment.failures.len(),
        experiment.resamples(),
        &mut f,
    )?;
    f.flush()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{collect, SweepSpec};
    use crate::geometry::{angular_error, CameraIntrinsics};
    use crate::rig::RigModel;
    use crate::saccade::Interpolation;
    use std::sync::Arc;

    fn row(bucket: AmplitudeBucket, primary: f64, last: f64) -> SummaryRow {
        SummaryRow {
            bucket,
            primary,
            primary_h: primary,
            primary_v: 0.0,
            last,
        }
    }

    fn setup(model: RigModel) -> (SimulatedRig, TargetBoard, Planner) {
        let board = TargetBoard::default();
        let mut rig = SimulatedRig::new(model).unwrap();
        let set = collect(&mut rig, &board, &SweepSpec::default(), 3)
            .unwrap()
            .set;
        let rig = SimulatedRig::new(model).unwrap();
        (
            rig,
            board,
            Planner::new(Arc::new(set), Interpolation::Bilinear),
        )
    }

    fn small_run(model: RigModel, trials: usize, corrective: usize) -> Experiment {
        let (mut rig, board, planner) = setup(model);
        let cfg = ExperimentConfig {
            trials,
            corrective,
            seed: 21,
            ..ExperimentConfig::default()
        };
        run_experiment(&mut rig, &board, &planner, &cfg).unwrap()
    }

    #[test]
    fn bucket_mix_matches_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            let e = draw_eccentricity(&mut rng);
            assert_eq!(AmplitudeBucket::of(e.ecc_deg), Some(e.bucket));
            assert!((0.0..360.0).contains(&e.dir_deg));
            counts[e.bucket.index()] += 1;
        }
        for (c, p) in counts.iter().zip(AmplitudeBucket::PROBABILITIES) {
            assert!((*c as f64 / 10_000.0 - p).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn ten_degrees_rightward_is_closed_form() {
        let i = CameraIntrinsics::default();
        let p = offset_pixel(&i, 10.0, 0.0);
        assert!((p.u - (i.cx + i.fx * 10f64.to_radians().tan())).abs() < 1e-9);
        assert!((p.v - i.cy).abs() < 1e-9);
        assert!((angular_error(&i, &p) - 10.0).abs() < 1e-9);
        let q = offset_pixel(&i, 13.0, 137.0);
        assert!((angular_error(&i, &q) - 13.0).abs() < 1e-9);
    }

    #[test]
    fn zero_eccentricity_is_image_center() {
        let i = CameraIntrinsics::default();
        assert_eq!(offset_pixel(&i, 0.0, 45.0), i.image_center());
    }

    #[test]
    fn placed_target_projects_back_to_its_pixel() {
        let rig = SimulatedRig::new(RigModel::imperfect()).unwrap();
        let board = TargetBoard::default();
        for depth in [None, Some(300.0)] {
            let plane = TargetPlane::new(&board, depth);
            let px = PixelPoint::new(700.0, 200.0);
            let w = place_target(&rig, &plane, &px).unwrap();
            let back = rig.model.project_world(rig.actual(), &w).unwrap();
            assert!(back.distance(&px) < 1e-9);
        }
        assert!(place_target(
            &rig,
            &TargetPlane::new(&board, None),
            &PixelPoint::new(-1.0, 5.0)
        )
        .is_none());
    }

    #[test]
    fn single_trial_summary() {
        let s = summarize_rows(&[row(AmplitudeBucket::Small, 1.0, 1.0)], 0).unwrap();
        assert_eq!((s.primary.mean, s.primary.median), (1.0, 1.0));
        assert_eq!(s.primary.fraction_under_2, 1.0);
        assert_eq!(s.primary.fraction_under_1, 0.0);
    }

    #[test]
    fn two_trials_in_two_buckets() {
        let s = summarize_rows(
            &[
                row(AmplitudeBucket::Small, 0.5, 0.5),
                row(AmplitudeBucket::Medium, 1.5, 1.0),
            ],
            1,
        )
        .unwrap();
        assert_eq!(s.buckets[0].mean_primary, 0.5);
        assert_eq!(s.buckets[1].mean_primary, 1.5);
        assert_eq!(s.buckets[1].mean_final, 1.0);
        assert!(s.buckets[2].mean_primary.is_nan());
        assert_eq!(s.primary.mean, 1.0);
        assert_eq!(s.last.mean, 0.75);
        assert_eq!((s.n, s.n_failed), (2, 1));
    }

    #[test]
    fn empty_summary_is_an_error() {
        assert!(matches!(
            summarize_rows(&[], 0),
            Err(EvalError::NoSuccessfulTrials)
        ));
    }

    #[test]
    fn experiment_statistics_are_consistent() {
        let e = small_run(RigModel::imperfect(), 60, 1);
        let s = summarize(&e.trials, e.failures.len()).unwrap();
        assert_eq!(s.n + s.n_failed, 60);
        assert_eq!(s.buckets.iter().map(|b| b.n).sum::<usize>(), s.n);
        let weighted: f64 = s
            .buckets
            .iter()
            .filter(|b| b.n > 0)
            .map(|b| b.mean_primary * b.n as f64)
            .sum::<f64>()
            / s.n as f64;
        assert!((weighted - s.primary.mean).abs() < 1e-12);
        for f in [
            s.primary.fraction_under_1,
            s.primary.fraction_under_2,
            s.last.fraction_under_1,
        ] {
            assert!((0.0..=1.0).contains(&f));
        }
        for t in &e.trials {
            assert!(!t.landings.is_empty());
            assert_eq!(AmplitudeBucket::of(t.ecc.ecc_deg), Some(t.ecc.bucket));
        }
    }

    #[test]
    fn trials_chain_from_previous_landing() {
        let e = small_run(RigModel::imperfect(), 30, 1);
        assert!(e.failures.is_empty());
        assert_eq!(e.trials[0].start, MotorState::new(0.0, 0.0));
        for w in e.trials.windows(2) {
            assert_eq!(w[1].start, w[0].last().commanded);
        }
    }

    #[test]
    fn csv_has_one_row_per_landing_and_reparses_exactly() {
        let e = small_run(RigModel::imperfect(), 40, 1);
        let mut buf = Vec::new();
        write_trials_csv(&e.trials, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let landings: usize = e.trials.iter().map(|t| t.landings.len()).sum();
        assert_eq!(text.lines().count(), landings + 1);
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        let rows = read_trial_rows(buf.as_slice()).unwrap();
        assert_eq!(
            summarize_rows(&rows, 0).unwrap(),
            summarize(&e.trials, 0).unwrap()
        );
    }

    #[test]
    fn ideal_scatter_stays_near_origin() {
        let e = small_run(RigModel::ideal(), 40, 0);
        let mut buf = Vec::new();
        write_scatter(&e.trials, &mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let mut n = 0;
        for rec in r.records() {
            let rec = rec.unwrap();
            let x: f64 = rec[3].parse().unwrap();
            let y: f64 = rec[4].parse().unwrap();
            assert!(x.hypot(y) < 0.1);
            n += 1;
        }
        assert_eq!(n, 40);
    }

    #[test]
    fn no_corrective_means_single_landing() {
        let e = small_run(RigModel::imperfect(), 10, 0);
        assert!(e.trials.iter().all(|t| t.landings.len() == 1));
    }

    #[test]
    fn export_with_no_trials_notes_the_failure() {
        let dir = tempfile::tempdir().unwrap();
        let s = export(&Experiment::default(), dir.path()).unwrap();
        assert!(s.is_none());
        let csv = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
        assert_eq!(csv, format!("{}\n", CSV_HEADER.join(",")));
        let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(summary.contains("status=NoSuccessfulTrials"));
    }

    #[test]
    fn same_seed_same_log() {
        let a = small_run(RigModel::imperfect(), 15, 1);
        let b = small_run(RigModel::imperfect(), 15, 1);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_trials_csv(&a.trials, &mut x).unwrap();
        write_trials_csv(&b.trials, &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_trials_rejected() {
        let (mut rig, board, planner) = setup(RigModel::ideal());
        let cfg = ExperimentConfig {
            trials: 0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(
            run_experiment(&mut rig, &board, &planner, &cfg),
            Err(EvalError::NoTrials)
        ));
    }

    #[test]
    fn median_of_even_count_averages() {
        assert_eq!(median(&[3.0, 1.0, 2.0, 4.0]), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
