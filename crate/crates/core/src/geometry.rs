//! Rotations, rigid transforms and spherical coordinates.
//!
//! Angles crossing the public boundary of [`SphericalPoint`] are in degrees;
//! rotation vectors are radians. Everything is computed in `f64`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// A point or direction in 3D, meters.
pub type Vec3 = Vector3<f64>;

/// Tolerance for the orthonormality and determinant checks.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this angle the inverse map uses the first-order series.
const SMALL_ANGLE: f64 = 1e-6;

/// `sin(angle)` below this at angle ~ pi means the axis sign is unrecoverable.
const PI_SIN_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("point is at the origin; spherical angles are undefined")]
    DegenerateOrigin,
}

/// Axis-angle rotation: direction is the axis, magnitude the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationVector(Vec3);

impl RotationVector {
    pub fn new(rx: f64, ry: f64, rz: f64) -> Self {
        Self(Vec3::new(rx, ry, rz))
    }

    pub fn zero() -> Self {
        Self(Vec3::zeros())
    }

    pub fn from_vector(v: Vec3) -> Self {
        Self(v)
    }

    pub fn as_vector(&self) -> &Vec3 {
        &self.0
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

/// A proper orthonormal 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking `mᵀm = I` and `det m = 1` within [`ROTATION_TOLERANCE`].
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        let proper = ortho <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE;
        if !proper {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(Self(m))
    }

    #[cfg(test)]
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// The inverse rotation.
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula: the rotation matrix `exp([theta]x)`.
pub fn rodrigues(theta: &RotationVector) -> RotationMatrix {
    let v = theta.as_vector();
    let angle = v.norm();
    let k = skew(v);
    let k2 = k * k;
    let m = if angle < 1e-8 {
        Matrix3::identity() + k + k2 * 0.5
    } else {
        let half = 0.5 * angle;
        let a = angle.sin() / angle;
        // 1 - cos(angle) = 2 sin^2(angle / 2), without cancellation
        let b = 2.0 * (half.sin() / angle).powi(2);
        Matrix3::identity() + k * a + k2 * b
    };
    RotationMatrix(m)
}

/// Inverse Rodrigues: the rotation vector of `rot`, with magnitude in `[0, pi]`.
///
/// At exactly pi the axis sign is fixed so that its first nonzero component
/// is positive.
pub fn inv_rodrigues(rot: &RotationMatrix) -> Result<RotationVector, GeometryError> {
    let r = RotationMatrix::new(rot.0)?.0;
    let half_skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let sin_angle = half_skew.norm();
    let cos_angle = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = sin_angle.atan2(cos_angle);

    if angle < SMALL_ANGLE {
        return Ok(RotationVector(half_skew));
    }
    if cos_angle > 0.0 {
        return Ok(RotationVector(half_skew * (angle / sin_angle)));
    }

    // Obtuse angles: recover the axis from the symmetric part, which is
    // well conditioned near pi, and take its sign from the skew part.
    let sym = (r + r.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * cos_angle) / (1.0 - cos_angle);
    let col = (0..3).max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)])).unwrap_or(0);
    let mut axis: Vec3 = outer.column(col).into_owned();
    axis /= axis.norm();
    if sin_angle > PI_SIN_EPS {
        if axis.dot(&half_skew) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().find(|c| c.abs() > PI_SIN_EPS) {
        if *first < 0.0 {
            axis = -axis;
        }
    }
    Ok(RotationVector(axis * angle))
}

/// A rigid motion `p -> R p + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(RotationMatrix::identity(), Vec3::zeros())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.0 * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: RotationMatrix(self.rotation.0 * other.rotation.0),
            translation: self.rotation.0 * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt.0 * self.translation) }
    }
}

/// Free-function form of [`RigidTransform::apply`].
pub fn apply_transform(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// World-to-sensor transform for a target vehicle at pose `(x_wc, theta_wc)`
/// whose sensor is mounted `delta_t` above (or beside) its centroid.
///
/// `R = rodrigues(theta_wc)ᵀ`, `T = -R x_wc - delta_t`.
pub fn world_to_vehicle_transform(x_wc: &Vec3, theta_wc: &RotationVector, delta_t: &Vec3) -> RigidTransform {
    let rotation = rodrigues(theta_wc).transpose();
    let translation = -(rotation.0 * x_wc) - delta_t;
    RigidTransform { rotation, translation }
}

/// Spherical coordinates: `phi` azimuth in `[0, 360)` degrees from +x toward +y,
/// `theta` polar angle in `[0, 180]` degrees from +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    pub rho: f64,
    pub phi: f64,
    pub theta: f64,
}

/// Azimuth of `(x, y)` in degrees, normalized to `[0, 360)`.
pub fn azimuth_degrees(x: f64, y: f64) -> f64 {
    let mut phi = y.atan2(x).to_degrees();
    if phi < 0.0 {
        phi += 360.0;
    }
    if phi >= 360.0 {
        phi = 0.0;
    }
    phi
}

pub fn cartesian_to_spherical(p: &Vec3) -> Result<SphericalPoint, GeometryError> {
    let rho = p.norm();
    if rho.is_nan() || rho < 1e-12 {
        return Err(GeometryError::DegenerateOrigin);
    }
    let horizontal = p.x.hypot(p.y);
    Ok(SphericalPoint { rho, phi: azimuth_degrees(p.x, p.y), theta: horizontal.atan2(p.z).to_degrees() })
}

/// Unit direction for azimuth `phi` and polar angle `theta`, both in degrees.
pub fn direction_from_angles(phi: f64, theta: f64) -> Vec3 {
    let (sp, cp) = phi.to_radians().sin_cos();
    let (st, ct) = theta.to_radians().sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

pub fn spherical_to_cartesian(s: &SphericalPoint) -> Vec3 {
    direction_from_angles(s.phi, s.theta) * s.rho
}
