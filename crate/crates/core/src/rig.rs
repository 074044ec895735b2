//! Simulated pan/tilt camera with imperfect kinematics.
//!
//! The rig frame coincides with the camera frame at the home pose
//! (pan = tilt = 0): `x` right, `y` down, `z` forward, millimetres. Each joint
//! is a rotation about a line given by a unit direction and a point on it.
//! Positive pan turns the camera right, positive tilt turns it down.

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angular_error, project, CameraIntrinsics, IntrinsicsError, PixelPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigError {
    #[error("motor command pan={pan}, tilt={tilt} outside range")]
    OutOfRange { pan: f64, tilt: f64 },
    #[error("no reachable motor state renders the target in view")]
    TargetUnreachable,
    #[error("invalid rig configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Intrinsics(#[from] IntrinsicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    pub pan: f64,
    pub tilt: f64,
}

impl MotorState {
    pub const fn new(pan: f64, tilt: f64) -> Self {
        Self { pan, tilt }
    }

    /// Largest per-axis difference in degrees.
    pub fn max_axis_diff(&self, other: &MotorState) -> f64 {
        (self.pan - other.pan)
            .abs()
            .max((self.tilt - other.tilt).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorRange {
    pub pan_min: f64,
    pub pan_max: f64,
    pub tilt_min: f64,
    pub tilt_max: f64,
}

impl Default for MotorRange {
    /// 92 x 80 degrees of travel, centered.
    fn default() -> Self {
        Self {
            pan_min: -46.0,
            pan_max: 46.0,
            tilt_min: -40.0,
            tilt_max: 40.0,
        }
    }
}

impl MotorRange {
    pub fn contains(&self, m: &MotorState) -> bool {
        const TOL: f64 = 1e-9;
        m.pan >= self.pan_min - TOL
            && m.pan <= self.pan_max + TOL
            && m.tilt >= self.tilt_min - TOL
            && m.tilt <= self.tilt_max + TOL
    }
}

/// A joint axis: direction (normalized on use) plus a point on the axis
/// (mm, rig frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationAxis {
    pub direction: [f64; 3],
    pub point: [f64; 3],
}

impl RotationAxis {
    fn joint(&self, angle_deg: f64) -> Isometry3<f64> {
        let o = Vector3::from(self.point);
        let axis = Unit::new_normalize(Vector3::from(self.direction));
        let rot = UnitQuaternion::from_axis_angle(&axis, angle_deg.to_radians());
        Translation3::from(o) * rot * Translation3::from(-o)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JointOrder {
    /// Tilt joint rides on the pan stage: rotate about tilt, then pan.
    #[default]
    TiltThenPan,
    PanThenTilt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigModel {
    pub intrinsics: CameraIntrinsics,
    pub pan_axis: RotationAxis,
    pub tilt_axis: RotationAxis,
    pub joint_order: JointOrder,
    /// Motor resolution in degrees; 0 disables quantization.
    pub quantization_step: f64,
    /// Total mechanical play in degrees, split evenly around the command.
    pub backlash: f64,
    pub gain_pan: f64,
    pub gain_tilt: f64,
    /// Standard deviation of detected corner positions, pixels.
    pub corner_noise_sigma: f64,
    /// Standard deviation of the detected target position, pixels.
    pub target_noise_sigma: f64,
    pub range: MotorRange,
}

impl Default for RigModel {
    fn default() -> Self {
        Self::imperfect()
    }
}

impl RigModel {
    /// Offset and slightly misaligned axes, linkage gain errors, 1 degree motor
    /// resolution, backlash and noisy corner detections.
    pub fn imperfect() -> Self {
        let mis = 0.5f64.to_radians();
        Self {
            intrinsics: CameraIntrinsics::default(),
            pan_axis: RotationAxis {
                direction: [mis.sin(), mis.cos(), 0.0],
                point: [0.0, 0.0, -20.0],
            },
            tilt_axis: RotationAxis {
                direction: [-mis.cos(), 0.0, mis.sin()],
                point: [0.0, 0.0, -15.0],
            },
            joint_order: JointOrder::TiltThenPan,
            quantization_step: 1.0,
            backlash: 0.2,
            gain_pan: 1.02,
            gain_tilt: 0.98,
            corner_noise_sigma: 0.3,
            target_noise_sigma: 0.0,
            range: MotorRange::default(),
        }
    }

    /// Both axes through the optical center, exact actuation, no noise.
    pub fn ideal() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            pan_axis: RotationAxis {
                direction: [0.0, 1.0, 0.0],
                point: [0.0; 3],
            },
            tilt_axis: RotationAxis {
                direction: [-1.0, 0.0, 0.0],
                point: [0.0; 3],
            },
            joint_order: JointOrder::TiltThenPan,
            quantization_step: 0.0,
            backlash: 0.0,
            gain_pan: 1.0,
            gain_tilt: 1.0,
            corner_noise_sigma: 0.0,
            target_noise_sigma: 0.0,
            range: MotorRange::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RigError> {
        self.intrinsics.validate()?;
        let bad = |m: &str| Err(RigError::InvalidConfig(m.to_string()));
        for (name, axis) in [("pan_axis", &self.pan_axis), ("tilt_axis", &self.tilt_axis)] {
            let n = Vector3::from(axis.direction).norm();
            if !(n > 1e-9 && n.is_finite()) {
                return bad(&format!("{name} direction must be non-zero"));
            }
        }
        if !(self.quantization_step >= 0.0) {
            return bad("quantization_step must be >= 0");
        }
        if !(self.backlash >= 0.0) {
            return bad("backlash must be >= 0");
        }
        if !(self.gain_pan > 0.0 && self.gain_tilt > 0.0) {
            return bad("gains must be > 0");
        }
        if !(self.corner_noise_sigma >= 0.0 && self.target_noise_sigma >= 0.0) {
            return bad("noise sigmas must be >= 0");
        }
        let r = &self.range;
        if !(r.pan_min < r.pan_max && r.tilt_min < r.tilt_max) {
            return bad("empty motor range");
        }
        Ok(())
    }

    fn quantize(&self, x: f64) -> f64 {
        if self.quantization_step > 0.0 {
            (x / self.quantization_step).round() * self.quantization_step
        } else {
            x
        }
    }

    /// Drives the motors to `cmd`, updating the backlash history. Returns the
    /// state the joints actually reach.
    pub fn set_motors(
        &self,
        cmd: MotorState,
        history: &mut MotionHistory,
    ) -> Result<MotorState, RigError> {
        if !self.range.contains(&cmd) || !cmd.pan.is_finite() || !cmd.tilt.is_finite() {
            return Err(RigError::OutOfRange {
                pan: cmd.pan,
                tilt: cmd.tilt,
            });
        }
        let direction = |new: f64, old: f64, prev: f64| {
            if new > old {
                1.0
            } else if new < old {
                -1.0
            } else {
                prev
            }
        };
        history.pan_direction = direction(cmd.pan, history.last.pan, history.pan_direction);
        history.tilt_direction = direction(cmd.tilt, history.last.tilt, history.tilt_direction);
        history.last = cmd;
        let half = 0.5 * self.backlash;
        Ok(MotorState::new(
            self.quantize(cmd.pan * self.gain_pan) + history.pan_direction * half,
            self.quantize(cmd.tilt * self.gain_tilt) + history.tilt_direction * half,
        ))
    }

    /// Joint angles reached with continuous actuation (no quantization or
    /// backlash); linkage gains still apply.
    pub fn continuous_actuation(&self, cmd: MotorState) -> MotorState {
        MotorState::new(cmd.pan * self.gain_pan, cmd.tilt * self.gain_tilt)
    }

    /// Camera-to-rig transform when the joints sit at `actual`.
    pub fn camera_pose(&self, actual: MotorState) -> Isometry3<f64> {
        let pan = self.pan_axis.joint(actual.pan);
        let tilt = self.tilt_axis.joint(actual.tilt);
        match self.joint_order {
            JointOrder::TiltThenPan => pan * tilt,
            JointOrder::PanThenTilt => tilt * pan,
        }
    }

    /// Pinhole projection of a world point, without bounds checking.
    pub fn project_world(&self, actual: MotorState, world: &Point3<f64>) -> Option<PixelPoint> {
        let cam = self.camera_pose(actual).inverse_transform_point(world);
        project(&self.intrinsics, &cam.coords)
    }

    /// Projection restricted to points that land inside the image.
    pub fn visible(&self, actual: MotorState, world: &Point3<f64>) -> Option<PixelPoint> {
        self.project_world(actual, world)
            .filter(|p| self.intrinsics.contains(p))
    }
}

/// Last commanded state and the direction each axis last travelled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionHistory {
    pub last: MotorState,
    pub pan_direction: f64,
    pub tilt_direction: f64,
}

impl Default for MotionHistory {
    fn default() -> Self {
        Self {
            last: MotorState::default(),
            pan_direction: 1.0,
            tilt_direction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardPose {
    /// Board center in the rig frame, mm.
    pub translation: [f64; 3],
    /// Roll, pitch, yaw in degrees.
    pub rotation_deg: [f64; 3],
}

impl Default for BoardPose {
    fn default() -> Self {
        Self {
            translation: [0.0, 0.0, 1000.0],
            rotation_deg: [0.0; 3],
        }
    }
}

/// Planar grid of uniquely identified corners. Corner ids are row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetBoard {
    pub rows: u32,
    pub cols: u32,
    /// Corner spacing, mm.
    pub square: f64,
    pub pose: BoardPose,
}

impl Default for TargetBoard {
    fn default() -> Self {
        Self {
            rows: 9,
            cols: 14,
            square: 30.0,
            pose: BoardPose::default(),
        }
    }
}

impl TargetBoard {
    pub fn validate(&self) -> Result<(), RigError> {
        if self.rows < 2 || self.cols < 2 || !(self.square > 0.0) {
            return Err(RigError::InvalidConfig(
                "board needs rows, cols >= 2 and square > 0".into(),
            ));
        }
        Ok(())
    }

    fn transform(&self) -> Isometry3<f64> {
        let [r, p, y] = self.pose.rotation_deg;
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.pose.translation)),
            UnitQuaternion::from_euler_angles(r.to_radians(), p.to_radians(), y.to_radians()),
        )
    }

    pub fn corner_count(&self) -> u32 {
        self.rows * self.cols
    }

    fn local_corner(&self, id: u32) -> Point3<f64> {
        let (r, c) = (id / self.cols, id % self.cols);
        let x = (c as f64 - 0.5 * (self.cols - 1) as f64) * self.square;
        let y = (r as f64 - 0.5 * (self.rows - 1) as f64) * self.square;
        Point3::new(x, y, 0.0)
    }

    /// World position of corner `id`; the board center is the pose origin.
    pub fn corner(&self, id: u32) -> Point3<f64> {
        self.transform() * self.local_corner(id)
    }

    pub fn corners(&self) -> impl Iterator<Item = (u32, Point3<f64>)> + '_ {
        let t = self.transform();
        (0..self.corner_count()).map(move |id| (id, t * self.local_corner(id)))
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation)
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.transform().rotation * Vector3::z()
    }
}

/// What the camera reports in one view: detected board corners (sorted by
/// id), the fixation target if visible, and the IMU orientation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub corners: Vec<(u32, PixelPoint)>,
    pub target: Option<PixelPoint>,
    /// Roll, pitch, yaw of the camera in degrees. Recorded but unused.
    pub imu: [f64; 3],
}

pub fn render(
    rig: &RigModel,
    actual: MotorState,
    board: &TargetBoard,
    target_world: Option<&Point3<f64>>,
    seed: u64,
) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = rig.camera_pose(actual);
    let intr = &rig.intrinsics;
    let corner_noise = Normal::new(0.0, rig.corner_noise_sigma).expect("validated sigma");
    let target_noise = Normal::new(0.0, rig.target_noise_sigma).expect("validated sigma");

    let corners = board
        .corners()
        .filter_map(|(id, world)| {
            let cam = pose.inverse_transform_point(&world);
            project(intr, &cam.coords)
                .filter(|p| intr.contains(p))
                .map(|p| (id, p))
        })
        .map(|(id, mut p)| {
            if rig.corner_noise_sigma > 0.0 {
                p.u += corner_noise.sample(&mut rng);
                p.v += corner_noise.sample(&mut rng);
            }
            (id, p)
        })
        .collect();

    let target = target_world.and_then(|w| {
        let cam = pose.inverse_transform_point(w);
        project(intr, &cam.coords)
            .filter(|p| intr.contains(p))
            .map(|mut p| {
                if rig.target_noise_sigma > 0.0 {
                    p.u += target_noise.sample(&mut rng);
                    p.v += target_noise.sample(&mut rng);
                }
                p
            })
    });

    let (roll, pitch, yaw) = pose.rotation.euler_angles();
    Observation {
        corners,
        target,
        imu: [roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees()],
    }
}

/// A rig instance with its own backlash history. Trials that run
/// concurrently must each own one.
#[derive(Debug, Clone)]
pub struct SimulatedRig {
    pub model: RigModel,
    history: MotionHistory,
    actual: MotorState,
}

impl SimulatedRig {
    pub fn new(model: RigModel) -> Result<Self, RigError> {
        model.validate()?;
        let mut history = MotionHistory::default();
        let actual = model.set_motors(MotorState::default(), &mut history)?;
        Ok(Self {
            model,
            history,
            actual,
        })
    }

    pub fn command(&mut self, cmd: MotorState) -> Result<MotorState, RigError> {
        self.actual = self.model.set_motors(cmd, &mut self.history)?;
        Ok(self.actual)
    }

    pub fn commanded(&self) -> MotorState {
        self.history.last
    }

    pub fn actual(&self) -> MotorState {
        self.actual
    }

    pub fn history(&self) -> MotionHistory {
        self.history
    }

    pub fn observe(
        &self,
        board: &TargetBoard,
        target_world: Option<&Point3<f64>>,
        seed: u64,
    ) -> Observation {
        render(&self.model, self.actual, board, target_world, seed)
    }

    /// Draws a render seed from `rng` and observes.
    pub fn observe_with<R: Rng>(
        &self,
        board: &TargetBoard,
        target_world: Option<&Point3<f64>>,
        rng: &mut R,
    ) -> Observation {
        self.observe(board, target_world, rng.random())
    }
}

/// Rotation of the camera frame relative to the rig frame, for IMU checks.
pub fn camera_rotation(rig: &RigModel, actual: MotorState) -> Rotation3<f64> {
    rig.camera_pose(actual).rotation.to_rotation_matrix()
}

/// Brute-force fixation: exhaustive grid over commanded states followed by
/// alternating golden-section refinement per axis. Uses continuous actuation
/// and noiseless rendering.
pub fn oracle_fixate(
    rig: &RigModel,
    target_world: &Point3<f64>,
    resolution: f64,
) -> Result<MotorState, RigError> {
    if !(resolution > 0.0) {
        return Err(RigError::InvalidConfig(
            "oracle resolution must be > 0".into(),
        ));
    }
    let cost = |cmd: MotorState| -> f64 {
        rig.visible(rig.continuous_actuation(cmd), target_world)
            .map(|p| angular_error(&rig.intrinsics, &p))
            .unwrap_or(f64::INFINITY)
    };
    let r = rig.range;
    let steps = |lo: f64, hi: f64| ((hi - lo) / resolution + 1e-9).floor() as usize;
    let (np, nt) = (steps(r.pan_min, r.pan_max), steps(r.tilt_min, r.tilt_max));
    let mut best = (f64::INFINITY, MotorState::default());
    for i in 0..=np {
        for j in 0..=nt {
            let m = MotorState::new(
                r.pan_min + i as f64 * resolution,
                r.tilt_min + j as f64 * resolution,
            );
            let c = cost(m);
            if c < best.0 {
                best = (c, m);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(RigError::TargetUnreachable);
    }

    let mut state = best.1;
    for _ in 0..50 {
        let before = state;
        let lo = (state.pan - resolution).max(r.pan_min);
        let hi = (state.pan + resolution).min(r.pan_max);
        state.pan = golden_section(lo, hi, |p| cost(MotorState::new(p, state.tilt)));
        let lo = (state.tilt - resolution).max(r.tilt_min);
        let hi = (state.tilt + resolution).min(r.tilt_max);
        state.tilt = golden_section(lo, hi, |t| cost(MotorState::new(state.pan, t)));
        if state.max_axis_diff(&before) < 1e-10 {
            break;
        }
    }
    if cost(state) <= best.0 {
        Ok(state)
    } else {
        Ok(best.1)
    }
}

fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-11 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantized(step: f64, backlash: f64) -> RigModel {
        RigModel {
            quantization_step: step,
            backlash,
            ..RigModel::ideal()
        }
    }

    #[test]
    fn quantization_rounds_command() {
        let rig = quantized(1.0, 0.0);
        let mut h = MotionHistory::default();
        let a = rig.set_motors(MotorState::new(10.4, 0.0), &mut h).unwrap();
        assert_eq!(a.pan, 10.0);
    }

    #[test]
    fn ideal_rig_tracks_command_exactly() {
        let rig = RigModel::ideal();
        let mut h = MotionHistory::default();
        let cmd = MotorState::new(-7.123, 3.5);
        assert_eq!(rig.set_motors(cmd, &mut h).unwrap(), cmd);
    }

    #[test]
    fn backlash_depends_on_approach_direction() {
        let rig = quantized(1.0, 0.2);
        let mut h = MotionHistory::default();
        rig.set_motors(MotorState::new(5.0, 0.0), &mut h).unwrap();
        let from_below = rig.set_motors(MotorState::new(10.0, 0.0), &mut h).unwrap();
        rig.set_motors(MotorState::new(15.0, 0.0), &mut h).unwrap();
        let from_above = rig.set_motors(MotorState::new(10.0, 0.0), &mut h).unwrap();
        assert!((from_below.pan - 10.1).abs() < 1e-12);
        assert!((from_above.pan - 9.9).abs() < 1e-12);
    }

    #[test]
    fn repeated_command_is_idempotent() {
        let rig = RigModel::imperfect();
        let mut h = MotionHistory::default();
        rig.set_motors(MotorState::new(-3.0, 8.0), &mut h).unwrap();
        let a = rig.set_motors(MotorState::new(4.3, 2.2), &mut h).unwrap();
        let b = rig.set_motors(MotorState::new(4.3, 2.2), &mut h).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_rejected() {
        let rig = RigModel::imperfect();
        let mut h = MotionHistory::default();
        assert!(matches!(
            rig.set_motors(MotorState::new(50.0, 0.0), &mut h),
            Err(RigError::OutOfRange { .. })
        ));
    }

    #[test]
    fn board_center_projects_to_image_center() {
        let rig = RigModel::ideal();
        let board = TargetBoard {
            rows: 9,
            cols: 15,
            ..TargetBoard::default()
        };
        let obs = render(&rig, MotorState::default(), &board, None, 1);
        let center_id = 4 * 15 + 7;
        let (_, p) = obs.corners.iter().find(|(id, _)| *id == center_id).unwrap();
        assert!(p.distance(&rig.intrinsics.image_center()) < 1e-9);
    }

    #[test]
    fn positive_pan_shifts_scene_left() {
        let rig = RigModel::ideal();
        let board = TargetBoard::default();
        let home = render(&rig, MotorState::default(), &board, None, 1);
        let panned = render(&rig, MotorState::new(5.0, 0.0), &board, None, 1);
        let mut compared = 0;
        for (id, p) in &panned.corners {
            if let Some((_, q)) = home.corners.iter().find(|(j, _)| j == id) {
                assert!(p.u < q.u);
                compared += 1;
            }
        }
        assert!(compared > 50);
    }

    #[test]
    fn positive_tilt_shifts_scene_up() {
        let rig = RigModel::ideal();
        let board = TargetBoard::default();
        let home = render(
            &rig,
            MotorState::default(),
            &board,
            Some(&board.center()),
            1,
        );
        let tilted = render(
            &rig,
            MotorState::new(0.0, 5.0),
            &board,
            Some(&board.center()),
            1,
        );
        assert!(tilted.target.unwrap().v < home.target.unwrap().v);
    }

    #[test]
    fn fewer_corners_toward_range_edges() {
        let rig = RigModel::imperfect();
        let board = TargetBoard::default();
        let counts: Vec<usize> = [0.0, 15.0, 30.0, 46.0]
            .iter()
            .map(|&p| {
                render(&rig, MotorState::new(p, 0.0), &board, None, 3)
                    .corners
                    .len()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        assert!(counts[0] > counts[3]);
        let left = render(&rig, MotorState::new(-46.0, 0.0), &board, None, 3)
            .corners
            .len();
        assert!(left < counts[0]);
    }

    #[test]
    fn render_is_deterministic_per_seed() {
        let rig = RigModel::imperfect();
        let board = TargetBoard::default();
        let m = MotorState::new(3.1, -2.0);
        assert_eq!(
            render(&rig, m, &board, None, 42),
            render(&rig, m, &board, None, 42)
        );
        assert_ne!(
            render(&rig, m, &board, None, 42),
            render(&rig, m, &board, None, 43)
        );
    }

    #[test]
    fn imu_reports_exact_camera_orientation() {
        let rig = RigModel::imperfect();
        let m = MotorState::new(12.0, -7.0);
        let obs = render(&rig, m, &TargetBoard::default(), None, 0);
        let [r, p, y] = obs.imu;
        let from_imu = Rotation3::from_euler_angles(r.to_radians(), p.to_radians(), y.to_radians());
        assert!((from_imu.matrix() - camera_rotation(&rig, m).matrix()).norm() < 1e-12);
    }

    #[test]
    fn ideal_rig_is_pure_rotation_about_optical_center() {
        let rig = RigModel::ideal();
        let pose = rig.camera_pose(MotorState::new(17.0, -9.0));
        assert!(pose.translation.vector.norm() < 1e-12);
        let offset = RigModel::imperfect().camera_pose(MotorState::new(17.0, -9.0));
        assert!(offset.translation.vector.norm() > 1.0);
    }

    #[test]
    fn oracle_on_axis_target_is_home() {
        let rig = RigModel::ideal();
        let m = oracle_fixate(&rig, &Point3::new(0.0, 0.0, 1000.0), 0.5).unwrap();
        assert!(m.max_axis_diff(&MotorState::default()) < 1e-6);
    }

    #[test]
    fn oracle_finds_ten_degrees_right() {
        let rig = RigModel::ideal();
        let a = 10f64.to_radians();
        let target = Point3::new(1000.0 * a.tan(), 0.0, 1000.0);
        let m = oracle_fixate(&rig, &target, 0.5).unwrap();
        assert!((m.pan - 10.0).abs() < 1e-6 && m.tilt.abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn oracle_residual_on_imperfect_rig() {
        let rig = RigModel::imperfect();
        for target in [
            Point3::new(150.0, -80.0, 1000.0),
            Point3::new(-300.0, 200.0, 900.0),
            Point3::new(20.0, 120.0, 600.0),
        ] {
            let m = oracle_fixate(&rig, &target, 0.05).unwrap();
            let p = rig.visible(rig.continuous_actuation(m), &target).unwrap();
            assert!(angular_error(&rig.intrinsics, &p) < 0.1);
        }
    }

    #[test]
    fn oracle_reports_unreachable_targets() {
        let rig = RigModel::ideal();
        assert_eq!(
            oracle_fixate(&rig, &Point3::new(0.0, 0.0, -1000.0), 1.0),
            Err(RigError::TargetUnreachable)
        );
    }

    #[test]
    fn axis_direction_is_normalized() {
        let mut scaled = RigModel::ideal();
        scaled.pan_axis.direction = [0.0, 2.0, 0.0];
        scaled.validate().unwrap();
        let m = MotorState::new(7.0, -3.0);
        let a = scaled.camera_pose(m);
        let b = RigModel::ideal().camera_pose(m);
        assert!((a.to_homogeneous() - b.to_homogeneous()).norm() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut rig = RigModel::imperfect();
        rig.gain_pan = 0.0;
        assert!(rig.validate().is_err());
        let mut rig = RigModel::imperfect();
        rig.pan_axis.direction = [0.0, 0.0, 0.0];
        assert!(rig.validate().is_err());
        assert!(TargetBoard {
            rows: 1,
            ..TargetBoard::default()
        }
        .validate()
        .is_err());
    }
}
