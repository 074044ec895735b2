//! Calibration sweep over the pan/tilt grid and its line-oriented JSON
//! persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PixelPoint};
use crate::rig::{MotorState, Observation, RigError, RigModel, SimulatedRig, TargetBoard};

pub const FORMAT_VERSION: &str = "dijit-calib/1";

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration grid is empty")]
    EmptyGrid,
    #[error("every calibration sample was dropped (no visible corners)")]
    AllSamplesDropped,
    #[error("invalid calibration set: {0}")]
    Invalid(String),
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in record {record} (line {line}): {message}")]
    Parse {
        line: usize,
        record: usize,
        message: String,
    },
    #[error("config digest mismatch: file has {found}, current config is {expected}")]
    DigestMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub pan_min: f64,
    pub pan_max: f64,
    pub tilt_min: f64,
    pub tilt_max: f64,
    pub step: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            pan_min: -20.0,
            pan_max: 20.0,
            tilt_min: -15.0,
            tilt_max: 15.0,
            step: 5.0,
        }
    }
}

impl SweepSpec {
    pub fn with_step(self, step: f64) -> Self {
        Self { step, ..self }
    }
}

/// `min, min + step, ...` up to and including `max` (within tolerance).
pub fn grid_values(min: f64, max: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || !(max >= min) || !min.is_finite() || !max.is_finite() {
        return Vec::new();
    }
    let n = ((max - min) / step + GRID_TOL).floor() as usize + 1;
    (0..n).map(|i| min + i as f64 * step).collect()
}

/// SHA-256 over the canonical JSON form of the rig and board configuration.
pub fn config_digest(rig: &RigModel, board: &TargetBoard) -> String {
    let json = serde_json::to_string(&(rig, board)).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    /// Commanded motor values.
    pub motor: MotorState,
    pub obs: Observation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    intrinsics: CameraIntrinsics,
    pan_values: Vec<f64>,
    tilt_values: Vec<f64>,
    step: f64,
    digest: String,
    samples: Vec<CalibrationSample>,
    /// Sample index per grid node, `tilt_index * pan_values.len() + pan_index`.
    nodes: Vec<Option<usize>>,
    positions: Vec<(usize, usize)>,
}

fn grid_index(values: &[f64], step: f64, x: f64) -> Option<usize> {
    let first = *values.first()?;
    let k = ((x - first) / step).round();
    if k < 0.0 || k as usize >= values.len() {
        return None;
    }
    let k = k as usize;
    ((values[k] - x).abs() <= GRID_TOL).then_some(k)
}

impl CalibrationSet {
    pub fn new(
        intrinsics: CameraIntrinsics,
        pan_values: Vec<f64>,
        tilt_values: Vec<f64>,
        step: f64,
        digest: String,
        samples: Vec<CalibrationSample>,
    ) -> Result<Self, CalibrationError> {
        let invalid = |m: String| Err(CalibrationError::Invalid(m));
        if pan_values.is_empty() || tilt_values.is_empty() || !(step > 0.0) {
            return Err(CalibrationError::EmptyGrid);
        }
        for values in [&pan_values, &tilt_values] {
            for (i, &v) in values.iter().enumerate() {
                if (v - (values[0] + i as f64 * step)).abs() > GRID_TOL {
                    return invalid(format!("grid value {v} breaks uniform spacing {step}"));
                }
            }
        }
        let mut nodes = vec![None; pan_values.len() * tilt_values.len()];
        let mut positions = Vec::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            let (Some(i), Some(j)) = (
                grid_index(&pan_values, step, s.motor.pan),
                grid_index(&tilt_values, step, s.motor.tilt),
            ) else {
                return invalid(format!("sample {k} at {:?} is off the grid", s.motor));
            };
            let slot = &mut nodes[j * pan_values.len() + i];
            if slot.is_some() {
                return invalid(format!("duplicate sample at {:?}", s.motor));
            }
            if s.obs.corners.is_empty() {
                return invalid(format!("sample {k} has no corners"));
            }
            if !s.obs.corners.windows(2).all(|w| w[0].0 < w[1].0) {
                return invalid(format!("sample {k} corners not sorted by unique id"));
            }
            *slot = Some(k);
            positions.push((i, j));
        }
        if samples.is_empty() {
            return Err(CalibrationError::AllSamplesDropped);
        }
        Ok(Self {
            intrinsics,
            pan_values,
            tilt_values,
            step,
            digest,
            samples,
            nodes,
            positions,
        })
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn pan_values(&self) -> &[f64] {
        &self.pan_values
    }

    pub fn tilt_values(&self) -> &[f64] {
        &self.tilt_values
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn samples(&self) -> &[CalibrationSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample recorded at grid node (pan index, tilt index), if any.
    pub fn at(&self, pan_index: usize, tilt_index: usize) -> Option<usize> {
        if pan_index >= self.pan_values.len() || tilt_index >= self.tilt_values.len() {
            return None;
        }
        self.nodes[tilt_index * self.pan_values.len() + pan_index]
    }

    /// Grid node (pan index, tilt index) of sample `k`.
    pub fn position(&self, k: usize) -> (usize, usize) {
        self.positions[k]
    }

    /// Sample whose commanded state equals `m`, if `m` is a grid node.
    pub fn sample_at_state(&self, m: &MotorState) -> Option<usize> {
        let i = grid_index(&self.pan_values, self.step, m.pan)?;
        let j = grid_index(&self.tilt_values, self.step, m.tilt)?;
        self.at(i, j)
    }

    pub fn contains_state(&self, m: &MotorState) -> bool {
        let (p0, p1) = (self.pan_values[0], *self.pan_values.last().unwrap());
        let (t0, t1) = (self.tilt_values[0], *self.tilt_values.last().unwrap());
        m.pan >= p0 - GRID_TOL
            && m.pan <= p1 + GRID_TOL
            && m.tilt >= t0 - GRID_TOL
            && m.tilt <= t1 + GRID_TOL
    }
}

#[derive(Debug, Clone)]
pub struct Collection {
    pub set: CalibrationSet,
    /// Grid states that produced no visible corners.
    pub dropped: Vec<MotorState>,
}

/// Extra travel used to take up backlash before each calibration move, deg.
const APPROACH_MARGIN: f64 = 2.0;

/// Sweeps the grid in raster order (tilt outer, pan inner, both ascending),
/// approaching every node from below on both axes.
pub fn collect(
    rig: &mut SimulatedRig,
    board: &TargetBoard,
    sweep: &SweepSpec,
    seed: u64,
) -> Result<Collection, CalibrationError> {
    board.validate()?;
    let pan_values = grid_values(sweep.pan_min, sweep.pan_max, sweep.step);
    let tilt_values = grid_values(sweep.tilt_min, sweep.tilt_max, sweep.step);
    if pan_values.is_empty() || tilt_values.is_empty() {
        return Err(CalibrationError::EmptyGrid);
    }
    let range = rig.model.range;
    for (p, t) in [
        (sweep.pan_min, sweep.tilt_min),
        (sweep.pan_max, sweep.tilt_max),
    ] {
        if !range.contains(&MotorState::new(p, t)) {
            return Err(RigError::OutOfRange { pan: p, tilt: t }.into());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(pan_values.len() * tilt_values.len());
    let mut dropped = Vec::new();
    for &tilt in &tilt_values {
        for &pan in &pan_values {
            let cmd = MotorState::new(pan, tilt);
            let last = rig.commanded();
            if cmd.pan < last.pan || cmd.tilt < last.tilt {
                let pre = MotorState::new(
                    if cmd.pan < last.pan {
                        (cmd.pan - APPROACH_MARGIN).max(range.pan_min)
                    } else {
                        last.pan
                    },
                    if cmd.tilt < last.tilt {
                        (cmd.tilt - APPROACH_MARGIN).max(range.tilt_min)
                    } else {
                        last.tilt
                    },
                );
                rig.command(pre)?;
            }
            rig.command(cmd)?;
            let obs = rig.observe(board, None, rng.random());
            if obs.corners.is_empty() {
                tracing::warn!(pan, tilt, "calibration view shows no corners; dropped");
                dropped.push(cmd);
            } else {
                samples.push(CalibrationSample { motor: cmd, obs });
            }
        }
    }
    if samples.is_empty() {
        return Err(CalibrationError::AllSamplesDropped);
    }
    let set = CalibrationSet::new(
        rig.model.intrinsics,
        pan_values,
        tilt_values,
        sweep.step,
        config_digest(&rig.model, board),
        samples,
    )?;
    Ok(Collection { set, dropped })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    format: String,
    intrinsics: CameraIntrinsics,
    pan: Vec<f64>,
    tilt: Vec<f64>,
    step: f64,
    digest: String,
    samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    pan: f64,
    tilt: f64,
    imu: [f64; 3],
    corners: Vec<(u32, f64, f64)>,
}

pub fn write_to<W: Write>(set: &CalibrationSet, mut w: W) -> Result<(), CalibrationError> {
    let header = HeaderRecord {
        format: FORMAT_VERSION.to_string(),
        intrinsics: set.intrinsics,
        pan: set.pan_values.clone(),
        tilt: set.tilt_values.clone(),
        step: set.step,
        digest: set.digest.clone(),
        samples: set.samples.len(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for s in &set.samples {
        let rec = SampleRecord {
            pan: s.motor.pan,
            tilt: s.motor.tilt,
            imu: s.obs.imu,
            corners: s
                .obs
                .corners
                .iter()
                .map(|(id, p)| (*id, p.u, p.v))
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save(set: &CalibrationSet, path: &Path) -> Result<(), CalibrationError> {
    write_to(set, BufWriter::new(File::create(path)?))
}

/// Reads a calibration set. With `expected_digest`, refuses files collected
/// under a different rig/board configuration.
pub fn read_from<R: BufRead>(
    r: R,
    expected_digest: Option<&str>,
) -> Result<CalibrationSet, CalibrationError> {
    let parse_err = |line: usize, message: String| CalibrationError::Parse {
        line,
        record: line - 1,
        message,
    };
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header record".into()))??;
    let header: HeaderRecord =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported format {:?}", header.format),
        ));
    }
    if let Some(expected) = expected_digest {
        if expected != header.digest {
            return Err(CalibrationError::DigestMismatch {
                expected: expected.to_string(),
                found: header.digest,
            });
        }
    }

    let mut samples = Vec::with_capacity(header.samples);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if samples.len() == header.samples {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err(
                line_no,
                "record beyond declared sample count".into(),
            ));
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        samples.push(CalibrationSample {
            motor: MotorState::new(rec.pan, rec.tilt),
            obs: Observation {
                corners: rec
                    .corners
                    .into_iter()
                    .map(|(id, u, v)| (id, PixelPoint::new(u, v)))
                    .collect(),
                target: None,
                imu: rec.imu,
            },
        });
    }
    if samples.len() != header.samples {
        return Err(parse_err(
            samples.len() + 2,
            format!(
                "expected {} samples, found {}",
                header.samples,
                samples.len()
            ),
        ));
    }
    CalibrationSet::new(
        header.intrinsics,
        header.pan,
        header.tilt,
        header.step,
        header.digest,
        samples,
    )
}

pub fn load(
    path: &Path,
    expected_digest: Option<&str>,
) -> Result<CalibrationSet, CalibrationError> {
    read_from(BufReader::new(File::open(path)?), expected_digest)
}
