use nalgebra::{Matrix3, SymmetricEigen};

use super::{LidarError, Ray, SensorSpec};
use crate::geometry::Vec3;

/// Covariance eigenvalue (m²) below which a direction is considered flat.
/// Two such eigenvalues mean the points are collinear or coincident.
pub const COLLINEAR_EIGENVALUE: f64 = 1e-12;

/// Denominators `|normal · direction|` at or below this are treated as parallel.
const PARALLEL_EPS: f64 = 1e-9;

/// The plane `normal · x = offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
    /// Root-mean-square orthogonal distance of the fitted points, meters.
    pub rms_residual: f64,
    pub support: usize,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Total-least-squares plane through `points`.
///
/// The normal is the covariance eigenvector with the smallest eigenvalue,
/// oriented toward the sensor origin.
pub fn fit_plane_tls(points: &[Vec3]) -> Result<Plane, LidarError> {
    fit_plane_iter(points.iter().copied())
}

/// As [`fit_plane_tls`], over any re-iterable source of points.
pub(crate) fn fit_plane_iter<I>(points: I) -> Result<Plane, LidarError>
where
    I: Iterator<Item = Vec3> + Clone,
{
    let (n, sum) = points.clone().fold((0usize, Vec3::zeros()), |(n, s), p| (n + 1, s + p));
    if n < 3 {
        return Err(LidarError::DegenerateGeometry(format!("plane fit needs 3 points, got {n}")));
    }
    let centroid = sum / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;

    let SymmetricEigen { eigenvalues, eigenvectors } = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
    if eigenvalues[order[1]] < COLLINEAR_EIGENVALUE {
        return Err(LidarError::DegenerateGeometry(format!("{n} points are collinear or coincident")));
    }
    let mut normal: Vec3 = eigenvectors.column(order[0]).normalize();
    if normal.dot(&(-centroid)) < 0.0 {
        normal = -normal;
    }
    Ok(Plane { normal, offset: normal.dot(&centroid), rms_residual: eigenvalues[order[0]].max(0.0).sqrt(), support: n })
}

/// Where `ray` meets `plane`, if the hit lies within the sensor's range.
pub fn intersect_ray_plane(ray: &Ray, plane: &Plane, spec: &SensorSpec) -> Option<Vec3> {
    let denom = plane.normal.dot(&ray.direction);
    if denom.abs() <= PARALLEL_EPS {
        return None;
    }
    let t = plane.offset / denom;
    (t >= spec.min_range && t <= spec.max_range).then(|| ray.direction * t)
}
