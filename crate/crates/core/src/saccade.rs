//! Saccade planning from calibration data.
//!
//! For a reference view `I_s` the center of every other calibration view is
//! transferred into `I_s` through the board homography. The target pixel is
//! then located inside the quad of four transferred centers belonging to a
//! grid cell, and the inverse bilinear coordinates inside that quad give the
//! pan/tilt command. When the camera sits between grid nodes the target is
//! transferred into each of the four surrounding calibration views, solved
//! there, and the four answers are blended by the camera's position in the
//! motor-space cell.

use std::sync::{Arc, OnceLock};

use nalgebra::Point3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationSet;
use crate::geometry::{angular_error, axis_errors, PixelPoint};
use crate::homography::{
    estimate, map_center, match_corners, source_spread, Correspondence, HomographyError,
    WELL_CONDITIONED_MIN,
};
use crate::rig::{MotorState, Observation, RigError, SimulatedRig, TargetBoard};

/// Corner sets flatter than this (see [`source_spread`]) give unreliable
/// center transfers and are flagged invalid.
pub const MIN_CORNER_SPREAD: f64 = 0.1;

/// Fewest shared corners behind a usable center transfer.
pub const MIN_SHARED_CORNERS: usize = WELL_CONDITIONED_MIN;

fn usable(corrs: &[Correspondence]) -> bool {
    corrs.len() >= MIN_SHARED_CORNERS && source_spread(corrs) >= MIN_CORNER_SPREAD
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaccadeError {
    #[error("reference sample {0} shares too few corners with every other sample")]
    NoValidNeighbors(usize),
    #[error("no grid cell with four valid transferred centers")]
    NoValidCell,
    #[error("inverse bilinear solve did not converge")]
    NonConvergence,
    #[error("motor state pan={}, tilt={} outside the calibration hull", .0.pan, .0.tilt)]
    OutsideCalibrationHull(MotorState),
    #[error("grid node ({0}, {1}) has no calibration sample")]
    MissingSample(usize, usize),
    #[error("current view shares {shared} corners with calibration sample {sample}")]
    InsufficientOverlap { sample: usize, shared: usize },
    #[error("target pixel is not finite")]
    NonFiniteTarget,
    #[error("target left the image after the saccade")]
    TargetLost,
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Rig(#[from] RigError),
}

/// How the four-sample neighborhood is turned into a motor command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Snap to the grid node whose transferred center is closest to the
    /// target. Kept for ablations.
    NearestNeighbor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Interior,
    BoundaryExtrapolated,
    NearestNeighbor,
}

impl PlanMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanMode::Interior => "interior",
            PlanMode::BoundaryExtrapolated => "extrapolated",
            PlanMode::NearestNeighbor => "nearest",
        }
    }
}

/// Whether the reference view was a calibration sample (A) or an off-grid
/// state reached through its four neighbors (B).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanCase {
    A,
    B,
}

impl PlanCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanCase::A => "A",
            PlanCase::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterEntry {
    /// Center of sample `k` seen in the reference view; `None` when too few
    /// or too nearly collinear corners are shared, or estimation failed.
    pub center: Option<PixelPoint>,
    /// Corners shared with the reference view.
    pub shared: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterMap {
    pub s_index: usize,
    /// Indexed by calibration sample.
    pub entries: Vec<CenterEntry>,
    /// Winding sign shared by most cells; folded or oppositely wound cells
    /// are never used.
    pub orientation: i8,
}

impl CenterMap {
    pub fn center(&self, k: usize) -> Option<PixelPoint> {
        self.entries[k].center
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.center.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaccadePlan {
    /// Target pixel in the current view.
    pub target: PixelPoint,
    pub solved: MotorState,
    /// Sample indices of the cell corners `(i,j), (i+1,j), (i,j+1), (i+1,j+1)`.
    pub cell: [usize; 4],
    /// Position inside the cell along pan and tilt. For case B this is the
    /// blend position of the current state inside its motor-space cell.
    pub barycentric: (f64, f64),
    pub mode: PlanMode,
    pub case: PlanCase,
    /// Fewest corner correspondences behind any homography used.
    pub min_shared: usize,
}

/// Transfers the center of every calibration view into view `s`.
pub fn build_center_map(set: &CalibrationSet, s: usize) -> Result<CenterMap, SaccadeError> {
    let samples = set.samples();
    let reference = &samples[s].obs.corners;
    let intr = set.intrinsics();
    let entries: Vec<CenterEntry> = (0..samples.len())
        .into_par_iter()
        .map(|k| {
            if k == s {
                return CenterEntry {
                    center: Some(intr.image_center()),
                    shared: reference.len(),
                };
            }
            let corrs = match_corners(reference, &samples[k].obs.corners);
            let center = if usable(&corrs) {
                map_center(&corrs, intr).ok().filter(|c| c.is_finite())
            } else {
                None
            };
            CenterEntry {
                center,
                shared: corrs.len(),
            }
        })
        .collect();
    let mut map = CenterMap {
        s_index: s,
        entries,
        orientation: 0,
    };
    let (mut pos, mut neg) = (0usize, 0usize);
    for i in 0..set.pan_values().len().saturating_sub(1) {
        for j in 0..set.tilt_values().len().saturating_sub(1) {
            let sign = cell_corners(set, i, j)
                .and_then(|cell| cell_centers(&map, &cell))
                .and_then(|c| convex_winding(&c));
            match sign {
                Some(1) => pos += 1,
                Some(_) => neg += 1,
                None => {}
            }
        }
    }
    map.orientation = if pos >= neg { 1 } else { -1 };
    if samples.len() > 1 && map.valid_count() < 2 {
        return Err(SaccadeError::NoValidNeighbors(s));
    }
    Ok(map)
}

fn bilinear(c: &[PixelPoint; 4], a: f64, b: f64) -> PixelPoint {
    let w = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
    PixelPoint::new(
        w.iter().zip(c).map(|(w, p)| w * p.u).sum(),
        w.iter().zip(c).map(|(w, p)| w * p.v).sum(),
    )
}

/// Solves `t = bilinear(c, alpha, beta)` for quad corners ordered
/// `c00, c10, c01, c11` by Newton iteration from the cell center.
pub fn inverse_bilinear(c: &[PixelPoint; 4], t: &PixelPoint) -> Result<(f64, f64), SaccadeError> {
    let (mut a, mut b) = (0.5, 0.5);
    for _ in 0..NEWTON_MAX_ITER {
        let p = bilinear(c, a, b);
        let (ru, rv) = (p.u - t.u, p.v - t.v);
        let da = (
            (1.0 - b) * (c[1].u - c[0].u) + b * (c[3].u - c[2].u),
            (1.0 - b) * (c[1].v - c[0].v) + b * (c[3].v - c[2].v),
        );
        let db = (
            (1.0 - a) * (c[2].u - c[0].u) + a * (c[3].u - c[1].u),
            (1.0 - a) * (c[2].v - c[0].v) + a * (c[3].v - c[1].v),
        );
        let det = da.0 * db.1 - db.0 * da.1;
        if det.abs() < 1e-15 || !det.is_finite() {
            return Err(SaccadeError::NonConvergence);
        }
        let step_a = (db.1 * ru - db.0 * rv) / det;
        let step_b = (da.0 * rv - da.1 * ru) / det;
        a -= step_a;
        b -= step_b;
        if step_a.abs().max(step_b.abs()) < NEWTON_TOL {
            return Ok((a, b));
        }
    }
    Err(SaccadeError::NonConvergence)
}

/// Boundary-inclusive winding test; `quad` is given in perimeter order.
pub fn point_in_quad(t: &PixelPoint, quad: &[PixelPoint; 4]) -> bool {
    let mut winding = 0i32;
    for e in 0..4 {
        let (p, q) = (quad[e], quad[(e + 1) % 4]);
        let cross = (q.u - p.u) * (t.v - p.v) - (q.v - p.v) * (t.u - p.u);
        let len = p.distance(&q);
        let along = (t.u - p.u) * (q.u - p.u) + (t.v - p.v) * (q.v - p.v);
        if cross.abs() <= 1e-9 * len.max(1.0) && along >= -1e-9 && along <= len * len + 1e-9 {
            return true;
        }
        if p.v <= t.v {
            if q.v > t.v && cross > 0.0 {
                winding += 1;
            }
        } else if q.v <= t.v && cross < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Winding sign of a cell (corners ordered `c00, c10, c01, c11`) when its
/// quad is strictly convex.
fn convex_winding(c: &[PixelPoint; 4]) -> Option<i8> {
    let quad = [c[0], c[1], c[3], c[2]];
    let mut sign = 0i8;
    for e in 0..4 {
        let (p, q, r) = (quad[e], quad[(e + 1) % 4], quad[(e + 2) % 4]);
        let cross = (q.u - p.u) * (r.v - q.v) - (q.v - p.v) * (r.u - q.u);
        let s = if cross > 0.0 {
            1
        } else if cross < 0.0 {
            -1
        } else {
            return None;
        };
        if sign != 0 && s != sign {
            return None;
        }
        sign = s;
    }
    Some(sign)
}

fn cell_corners(set: &CalibrationSet, i: usize, j: usize) -> Option<[usize; 4]> {
    Some([
        set.at(i, j)?,
        set.at(i + 1, j)?,
        set.at(i, j + 1)?,
        set.at(i + 1, j + 1)?,
    ])
}

fn cell_centers(map: &CenterMap, cell: &[usize; 4]) -> Option<[PixelPoint; 4]> {
    Some([
        map.center(cell[0])?,
        map.center(cell[1])?,
        map.center(cell[2])?,
        map.center(cell[3])?,
    ])
}

/// Plans a saccade to `t`, a pixel in the reference view of `map`.
pub fn solve_case_a(
    map: &CenterMap,
    set: &CalibrationSet,
    t: &PixelPoint,
    interpolation: Interpolation,
) -> Result<SaccadePlan, SaccadeError> {
    if !t.is_finite() {
        return Err(SaccadeError::NonFiniteTarget);
    }
    let (np, nt) = (set.pan_values().len(), set.tilt_values().len());

    if interpolation == Interpolation::NearestNeighbor {
        let (k, _) = map
            .entries
            .iter()
            .enumerate()
            .filter_map(|(k, e)| e.center.map(|c| (k, c.distance(t))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or(SaccadeError::NoValidCell)?;
        return Ok(SaccadePlan {
            target: *t,
            solved: set.samples()[k].motor,
            cell: [k; 4],
            barycentric: (0.0, 0.0),
            mode: PlanMode::NearestNeighbor,
            case: PlanCase::A,
            min_shared: map.entries[k].shared,
        });
    }

    let mut nearest: Option<(f64, usize, usize, [usize; 4], [PixelPoint; 4])> = None;
    for i in 0..np.saturating_sub(1) {
        for j in 0..nt.saturating_sub(1) {
            let Some(cell) = cell_corners(set, i, j) else {
                continue;
            };
            let Some(c) = cell_centers(map, &cell) else {
                continue;
            };
            if convex_winding(&c) != Some(map.orientation) {
                continue;
            }
            if point_in_quad(t, &[c[0], c[1], c[3], c[2]]) {
                let (a, b) = inverse_bilinear(&c, t)?;
                return Ok(plan_from_cell(
                    set,
                    map,
                    t,
                    (i, j),
                    cell,
                    (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0)),
                    PlanMode::Interior,
                ));
            }
            let d: f64 = c.iter().map(|p| p.distance(t)).sum();
            if nearest.as_ref().is_none_or(|n| d < n.0) {
                nearest = Some((d, i, j, cell, c));
            }
        }
    }

    let (_, i, j, cell, c) = nearest.ok_or(SaccadeError::NoValidCell)?;
    let ab = inverse_bilinear(&c, t)?;
    Ok(plan_from_cell(
        set,
        map,
        t,
        (i, j),
        cell,
        ab,
        PlanMode::BoundaryExtrapolated,
    ))
}

fn plan_from_cell(
    set: &CalibrationSet,
    map: &CenterMap,
    t: &PixelPoint,
    (i, j): (usize, usize),
    cell: [usize; 4],
    (a, b): (f64, f64),
    mode: PlanMode,
) -> SaccadePlan {
    let step = set.step();
    SaccadePlan {
        target: *t,
        solved: MotorState::new(
            set.pan_values()[i] + a * step,
            set.tilt_values()[j] + b * step,
        ),
        cell,
        barycentric: (a, b),
        mode,
        case: PlanCase::A,
        min_shared: cell
            .iter()
            .map(|&k| map.entries[k].shared)
            .min()
            .unwrap_or(0),
    }
}

/// Lower cell index and fractional position of `x` along a grid axis.
fn locate(values: &[f64], step: f64, x: f64) -> (usize, f64) {
    if values.len() < 2 {
        return (0, 0.0);
    }
    let f = (x - values[0]) / step;
    let i = (f.floor().max(0.0) as usize).min(values.len() - 2);
    (i, (f - i as f64).clamp(0.0, 1.0))
}

/// Memoizes center maps per reference sample; safe to share across threads.
pub struct Planner {
    set: Arc<CalibrationSet>,
    maps: Vec<OnceLock<Result<Arc<CenterMap>, SaccadeError>>>,
    interpolation: Interpolation,
}

impl Planner {
    pub fn new(set: Arc<CalibrationSet>, interpolation: Interpolation) -> Self {
        let maps = (0..set.len()).map(|_| OnceLock::new()).collect();
        Self {
            set,
            maps,
            interpolation,
        }
    }

    pub fn set(&self) -> &CalibrationSet {
        &self.set
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn center_map(&self, s: usize) -> Result<Arc<CenterMap>, SaccadeError> {
        self.maps[s]
            .get_or_init(|| build_center_map(&self.set, s).map(Arc::new))
            .clone()
    }

    /// Case A with reference view `s`.
    pub fn solve_case_a(&self, s: usize, t: &PixelPoint) -> Result<SaccadePlan, SaccadeError> {
        let map = self.center_map(s)?;
        solve_case_a(&map, &self.set, t, self.interpolation)
    }

    /// Case B: `current` lies between grid nodes and `t` is a pixel of
    /// `current_obs`.
    pub fn solve_case_b(
        &self,
        current: MotorState,
        current_obs: &Observation,
        t: &PixelPoint,
    ) -> Result<SaccadePlan, SaccadeError> {
        let set = &*self.set;
        if !t.is_finite() {
            return Err(SaccadeError::NonFiniteTarget);
        }
        if !set.contains_state(&current) {
            return Err(SaccadeError::OutsideCalibrationHull(current));
        }
        let (i, a) = locate(set.pan_values(), set.step(), current.pan);
        let (j, b) = locate(set.tilt_values(), set.step(), current.tilt);
        let nodes = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)];
        let weights = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];

        let mut cell = [usize::MAX; 4];
        let (mut pan, mut tilt, mut total) = (0.0, 0.0, 0.0);
        let mut mode = PlanMode::Interior;
        let mut min_shared = usize::MAX;
        for (n, (&(pi, ti), &w)) in nodes.iter().zip(&weights).enumerate() {
            if w <= 1e-12 {
                if let Some(k) = set.at(pi, ti) {
                    cell[n] = k;
                }
                continue;
            }
            let k = set.at(pi, ti).ok_or(SaccadeError::MissingSample(pi, ti))?;
            cell[n] = k;
            let corrs = match_corners(&set.samples()[k].obs.corners, &current_obs.corners);
            if !usable(&corrs) {
                return Err(SaccadeError::InsufficientOverlap {
                    sample: k,
                    shared: corrs.len(),
                });
            }
            let t_k = estimate(&corrs)?.apply(t)?;
            let plan = self.solve_case_a(k, &t_k)?;
            pan += w * plan.solved.pan;
            tilt += w * plan.solved.tilt;
            total += w;
            min_shared = min_shared.min(corrs.len()).min(plan.min_shared);
            if plan.mode != PlanMode::Interior {
                mode = plan.mode;
            }
        }
        Ok(SaccadePlan {
            target: *t,
            solved: MotorState::new(pan / total, tilt / total),
            cell,
            barycentric: (a, b),
            mode,
            case: PlanCase::B,
            min_shared,
        })
    }

    /// Case A when `current` is a grid node with a sample, case B otherwise.
    pub fn plan(
        &self,
        current: MotorState,
        current_obs: &Observation,
        t: &PixelPoint,
    ) -> Result<SaccadePlan, SaccadeError> {
        match self.set.sample_at_state(&current) {
            Some(s) => self.solve_case_a(s, t),
            None => self.solve_case_b(current, current_obs, t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landing {
    pub commanded: MotorState,
    pub pixel: PixelPoint,
    pub error_deg: f64,
    pub error_h_deg: f64,
    pub error_v_deg: f64,
    pub mode: PlanMode,
    pub case: PlanCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corrections {
    /// Corrective saccades after the primary one.
    pub count: usize,
    /// Stop correcting once the landing error is below this, degrees.
    pub stop_threshold_deg: f64,
}

impl Default for Corrections {
    fn default() -> Self {
        Self {
            count: 1,
            stop_threshold_deg: 0.0,
        }
    }
}

/// Executes `plan` toward the world point `target`, then up to
/// `corrections.count` corrective saccades re-planned from the new view.
pub fn execute<R: Rng>(
    rig: &mut SimulatedRig,
    board: &TargetBoard,
    target: &Point3<f64>,
    planner: &Planner,
    plan: &SaccadePlan,
    corrections: Corrections,
    rng: &mut R,
) -> Result<Vec<Landing>, SaccadeError> {
    let intr = rig.model.intrinsics;
    let mut plan = *plan;
    let mut landings = Vec::with_capacity(1 + corrections.count);
    loop {
        rig.command(plan.solved)?;
        let obs = rig.observe_with(board, Some(target), rng);
        let pixel = obs.target.ok_or(SaccadeError::TargetLost)?;
        let error_deg = angular_error(&intr, &pixel);
        let (error_h_deg, error_v_deg) = axis_errors(&intr, &pixel);
        landings.push(Landing {
            commanded: plan.solved,
            pixel,
            error_deg,
            error_h_deg,
            error_v_deg,
            mode: plan.mode,
            case: plan.case,
        });
        if landings.len() > corrections.count || error_deg < corrections.stop_threshold_deg {
            break;
        }
        match planner.plan(rig.commanded(), &obs, &pixel) {
            Ok(next) if next.mode == PlanMode::BoundaryExtrapolated => {
                tracing::debug!("corrective saccade would leave the calibration hull");
                break;
            }
            Ok(next) => plan = next,
            Err(e) => {
                tracing::debug!(error = %e, "corrective saccade could not be planned");
                break;
            }
        }
    }
    Ok(landings)
}
