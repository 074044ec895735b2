//! Pinhole projection primitives and angular fixation-error metrics.
//!
//! Pixel coordinates have their origin at the top-left corner of the image,
//! `u` growing rightward and `v` growing downward. The camera frame follows
//! the same convention: `x` right, `y` down, `z` along the optical axis.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dehomogenization threshold on `|w|`.
pub const W_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn homogeneous(&self) -> HomogeneousPoint {
        HomogeneousPoint::new(self.u, self.v, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousPoint {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl HomogeneousPoint {
    pub const fn new(x: f64, y: f64, w: f64) -> Self {
        Self { x, y, w }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.w)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    /// `None` when the point lies (numerically) at infinity.
    pub fn to_pixel(&self) -> Option<PixelPoint> {
        if self.w.abs() > W_EPSILON {
            Some(PixelPoint::new(self.x / self.w, self.y / self.w))
        } else {
            None
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntrinsicsError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside image {width}x{height}")]
    PrincipalPointOutside {
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, IntrinsicsError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Square pixels, principal point at the exact image center, focal length
    /// chosen so the horizontal field of view equals `hfov_deg`.
    pub fn centered_with_hfov(width: f64, height: f64, hfov_deg: f64) -> Self {
        let f = 0.5 * width / (0.5 * hfov_deg).to_radians().tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width,
            cy: 0.5 * height,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), IntrinsicsError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(IntrinsicsError::NonPositiveFocal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if !(self.cx > 0.0 && self.cx < self.width && self.cy > 0.0 && self.cy < self.height) {
            return Err(IntrinsicsError::PrincipalPointOutside {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn principal_point(&self) -> PixelPoint {
        PixelPoint::new(self.cx, self.cy)
    }

    /// The fixation point of the method: the geometric image center.
    pub fn image_center(&self) -> PixelPoint {
        PixelPoint::new(0.5 * self.width, 0.5 * self.height)
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= 0.0 && p.u < self.width && p.v >= 0.0 && p.v < self.height
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            fx: self.fx * k,
            fy: self.fy * k,
            cx: self.cx * k,
            cy: self.cy * k,
            width: self.width * k,
            height: self.height * k,
        }
    }
}

impl Default for CameraIntrinsics {
    /// 1024x768 with a 40 degree horizontal field of view.
    fn default() -> Self {
        Self::centered_with_hfov(1024.0, 768.0, 40.0)
    }
}

/// Unit direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray3 {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Ray3 {
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        let n = v.normalize();
        Self {
            dx: n.x,
            dy: n.y,
            dz: n.z,
        }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dz)
    }

    /// Angle between two rays in degrees.
    pub fn angle_to(&self, other: &Ray3) -> f64 {
        let a = self.as_vector();
        let b = other.as_vector();
        // atan2 keeps precision near 0 where acos does not.
        a.cross(&b).norm().atan2(a.dot(&b)).to_degrees()
    }
}

pub fn back_project(intr: &CameraIntrinsics, p: &PixelPoint) -> Ray3 {
    Ray3::from_vector(&Vector3::new(
        (p.u - intr.cx) / intr.fx,
        (p.v - intr.cy) / intr.fy,
        1.0,
    ))
}

/// Forward pinhole projection of a camera-frame point. `None` behind the camera.
pub fn project(intr: &CameraIntrinsics, point: &Vector3<f64>) -> Option<PixelPoint> {
    if point.z <= 0.0 {
        return None;
    }
    Some(PixelPoint::new(
        intr.fx * point.x / point.z + intr.cx,
        intr.fy * point.y / point.z + intr.cy,
    ))
}

/// Angle in degrees between the rays of `landing` and of the image center.
pub fn angular_error(intr: &CameraIntrinsics, landing: &PixelPoint) -> f64 {
    back_project(intr, landing).angle_to(&back_project(intr, &intr.image_center()))
}

/// Horizontal and vertical error components, signed positive to the right
/// of and below the image center.
pub fn axis_errors(intr: &CameraIntrinsics, landing: &PixelPoint) -> (f64, f64) {
    let c = intr.image_center();
    let h = angular_error(intr, &PixelPoint::new(landing.u, c.v));
    let v = angular_error(intr, &PixelPoint::new(c.u, landing.v));
    (h.copysign(landing.u - c.u), v.copysign(landing.v - c.v))
}
