//! Data-driven saccade control for a pan/tilt camera.
//!
//! A calibration sweep records views of a planar board over a grid of motor
//! states. To fixate a pixel, the center of every calibration view is
//! transferred into the current reference view through a board homography,
//! and the motor state whose transferred center coincides with the target is
//! found by inverse bilinear interpolation over the grid.

pub mod calibration;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod homography;
pub mod rig;
pub mod saccade;
