//! Planar homography estimation by the normalized direct linear transform,
//! and transfer of the image center through it.

use std::collections::HashSet;

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, HomogeneousPoint, PixelPoint};

/// Ratio of the second-smallest to largest singular value below which the
/// design matrix is treated as rank deficient.
pub const DEGENERACY_RATIO: f64 = 1e-8;

/// Correspondence counts below this still estimate, but are poorly conditioned.
pub const WELL_CONDITIONED_MIN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomographyError {
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("duplicate correspondence id {0}")]
    DuplicateId(u32),
    #[error("point maps to infinity")]
    PointAtInfinity,
}

/// A board corner seen in both views: `a` in the destination image, `b` in
/// the source image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub id: u32,
    pub a: PixelPoint,
    pub b: PixelPoint,
}

/// Projective map from source to destination pixels, `a ~ m * b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity()).expect("identity is invertible")
    }

    /// Normalizes to unit Frobenius norm with a positive bottom-right entry
    /// (when that entry is not ~0) and rejects singular matrices.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        let n = m.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(HomographyError::DegenerateConfiguration);
        }
        let mut m = m / n;
        if m[(2, 2)].abs() > 1e-9 && m[(2, 2)] < 0.0 {
            m = -m;
        }
        if m.determinant().abs() <= 1e-12 {
            return Err(HomographyError::DegenerateConfiguration);
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply(&self, p: &PixelPoint) -> Result<PixelPoint, HomographyError> {
        let q = self.m * p.homogeneous().as_vector();
        HomogeneousPoint::from_vector(&q)
            .to_pixel()
            .ok_or(HomographyError::PointAtInfinity)
    }

    pub fn compose(&self, other: &Homography) -> Result<Homography, HomographyError> {
        Homography::from_matrix(self.m * other.m)
    }

    /// Frobenius distance to `other` after both are normalized; sign of the
    /// overall scale is ignored.
    pub fn distance(&self, other: &Homography) -> f64 {
        (self.m - other.m).norm().min((self.m + other.m).norm())
    }
}

/// Similarity taking the points to zero centroid and mean distance sqrt(2).
fn normalizing_transform(points: impl Iterator<Item = PixelPoint> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (su, sv) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), p| (a + p.u, b + p.v));
    let (mu, mv) = (su / n, sv / n);
    let mean_dist = points.map(|p| (p.u - mu).hypot(p.v - mv)).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(
        s,
        0.0,
        -s * mu,
        0.0,
        s,
        -s * mv,
        0.0,
        0.0,
        1.0,
    ))
}

fn transform(t: &Matrix3<f64>, p: &PixelPoint) -> (f64, f64) {
    let q = t * Vector3::new(p.u, p.v, 1.0);
    (q.x / q.z, q.y / q.z)
}

/// Least-squares homography from `b` (source) to `a` (destination).
pub fn estimate(corrs: &[Correspondence]) -> Result<Homography, HomographyError> {
    if corrs.len() < 4 {
        return Err(HomographyError::InsufficientCorrespondences(corrs.len()));
    }
    let mut seen = HashSet::with_capacity(corrs.len());
    for c in corrs {
        if !seen.insert(c.id) {
            return Err(HomographyError::DuplicateId(c.id));
        }
    }

    let tb = normalizing_transform(corrs.iter().map(|c| c.b))
        .ok_or(HomographyError::DegenerateConfiguration)?;
    let ta = normalizing_transform(corrs.iter().map(|c| c.a))
        .ok_or(HomographyError::DegenerateConfiguration)?;

    // Padded to at least 9 rows so the SVD yields a full right basis.
    let rows = (2 * corrs.len()).max(9);
    let mut design = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in corrs.iter().enumerate() {
        let (x, y) = transform(&tb, &c.b);
        let (xp, yp) = transform(&ta, &c.a);
        let r = 2 * i;
        design
            .row_mut(r)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp]);
        design
            .row_mut(r + 1)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -xp * x, -xp * y, -xp]);
    }

    let svd = design.svd(false, true);
    let v_t = svd.v_t.ok_or(HomographyError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if !(largest > 0.0) || second_smallest / largest < DEGENERACY_RATIO {
        return Err(HomographyError::DegenerateConfiguration);
    }

    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let ta_inv = ta
        .try_inverse()
        .ok_or(HomographyError::DegenerateConfiguration)?;
    Homography::from_matrix(ta_inv * hn * tb)
}

pub fn apply(h: &Homography, p: &PixelPoint) -> Result<PixelPoint, HomographyError> {
    h.apply(p)
}

/// Center of the source image expressed in destination-image pixels.
pub fn map_center(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Result<PixelPoint, HomographyError> {
    estimate(corrs)?.apply(&intr.image_center())
}

/// Square root of the eigenvalue ratio (minor over major) of the source
/// points' covariance: 0 for collinear points, 1 for isotropic spread.
pub fn source_spread(corrs: &[Correspondence]) -> f64 {
    let n = corrs.len() as f64;
    if corrs.len() < 2 {
        return 0.0;
    }
    let (mu, mv) = corrs
        .iter()
        .fold((0.0, 0.0), |(a, b), c| (a + c.b.u / n, b + c.b.v / n));
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for c in corrs {
        let (du, dv) = (c.b.u - mu, c.b.v - mv);
        suu += du * du;
        svv += dv * dv;
        suv += du * dv;
    }
    let tr = suu + svv;
    let disc = ((suu - svv).powi(2) + 4.0 * suv * suv).sqrt();
    let major = 0.5 * (tr + disc);
    let minor = (0.5 * (tr - disc)).max(0.0);
    if major > 0.0 {
        (minor / major).sqrt()
    } else {
        0.0
    }
}

/// Correspondences between two corner lists, matched by id. Both lists must
/// be sorted by id (observations keep them in board order).
pub fn match_corners(dest: &[(u32, PixelPoint)], src: &[(u32, PixelPoint)]) -> Vec<Correspondence> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < dest.len() && j < src.len() {
        match dest[i].0.cmp(&src[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(Correspondence {
                    id: dest[i].0,
                    a: dest[i].1,
                    b: src[j].1,
                });
                i += 1;
                j += 1;
            }
        }
    }
    out
}
