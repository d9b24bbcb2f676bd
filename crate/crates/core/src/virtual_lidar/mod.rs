//! The virtual spinning LiDAR and the resampler built on it.
//!
//! A sensor with `m` azimuth steps and `k` elevation steps casts `m·k` rays.
//! Each ray owns a narrow frustum; scene points are binned into frustums,
//! a plane is fitted per frustum (non-ground) or once globally (ground), and
//! the ray's sample is its intersection with that plane.

mod bins;
mod plane;
mod synthesis;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{direction_from_angles, Vec3};

pub use bins::{bin_points, nominal_index, FrustumBins, RayBins, SphericalCloud};
pub use plane::{fit_plane_tls, intersect_ray_plane, Plane, COLLINEAR_EIGENVALUE};
pub use synthesis::{synthesize, synthesize_ground, synthesize_non_ground, GroundSynthesis, Synthesis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LidarError {
    #[error("invalid sensor spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
}

fn default_m() -> usize {
    2048
}
fn default_k() -> usize {
    64
}
fn default_min_range() -> f64 {
    0.5
}
fn default_max_range() -> f64 {
    100.0
}
fn default_theta_min() -> f64 {
    88.0
}
fn default_theta_max() -> f64 {
    114.0
}
fn default_expansion() -> f64 {
    2.0
}
fn default_occlusion_window() -> f64 {
    1.0
}

/// Virtual sensor parameters. Angles are degrees, ranges meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    /// Azimuth divisions `m`.
    #[serde(default = "default_m")]
    pub horizontal_divisions: usize,
    /// Elevation divisions `k`.
    #[serde(default = "default_k")]
    pub vertical_divisions: usize,
    #[serde(default = "default_min_range")]
    pub min_range: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    /// Polar angle of the first beam, measured from +z.
    #[serde(default = "default_theta_min")]
    pub theta_min: f64,
    #[serde(default = "default_theta_max")]
    pub theta_max: f64,
    /// Frustum aperture as a multiple of the angular resolution.
    #[serde(default = "default_expansion")]
    pub frustum_expansion: f64,
    /// Only points within this distance (m) of a frustum's nearest point are fitted.
    #[serde(default = "default_occlusion_window")]
    pub occlusion_window: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            horizontal_divisions: default_m(),
            vertical_divisions: default_k(),
            min_range: default_min_range(),
            max_range: default_max_range(),
            theta_min: default_theta_min(),
            theta_max: default_theta_max(),
            frustum_expansion: default_expansion(),
            occlusion_window: default_occlusion_window(),
        }
    }
}

impl SensorSpec {
    pub fn with_resolution(m: usize, k: usize) -> Self {
        Self { horizontal_divisions: m, vertical_divisions: k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LidarError> {
        let bad = |msg: &str| Err(LidarError::InvalidSpec(msg.to_string()));
        let finite = [self.min_range, self.max_range, self.theta_min, self.theta_max, self.frustum_expansion, self.occlusion_window]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return bad("all parameters must be finite");
        }
        if self.horizontal_divisions == 0 || self.vertical_divisions == 0 {
            return bad("horizontal_divisions and vertical_divisions must be at least 1");
        }
        if self.horizontal_divisions.saturating_mul(self.vertical_divisions) > u32::MAX as usize {
            return bad("too many rays");
        }
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return bad("need 0 < min_range < max_range");
        }
        if !(0.0 <= self.theta_min && self.theta_min < self.theta_max && self.theta_max <= 180.0) {
            return bad("need 0 <= theta_min < theta_max <= 180");
        }
        if self.frustum_expansion < 1.0 {
            return bad("frustum_expansion must be >= 1");
        }
        if self.occlusion_window <= 0.0 {
            return bad("occlusion_window must be positive");
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.horizontal_divisions * self.vertical_divisions
    }

    /// Azimuth step, degrees.
    pub fn horizontal_resolution(&self) -> f64 {
        360.0 / self.horizontal_divisions as f64
    }

    /// Elevation step, degrees.
    pub fn vertical_resolution(&self) -> f64 {
        (self.theta_max - self.theta_min) / self.vertical_divisions as f64
    }

    /// Flat index of ray `(i, j)`; rays are ordered by `j`, then `i`.
    pub fn ray_index(&self, i: usize, j: usize) -> usize {
        j * self.horizontal_divisions + i
    }

    pub fn ray_azimuth(&self, i: usize) -> f64 {
        i as f64 / self.horizontal_divisions as f64 * 360.0
    }

    pub fn ray_polar(&self, j: usize) -> f64 {
        self.theta_min + j as f64 / self.vertical_divisions as f64 * (self.theta_max - self.theta_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub i: usize,
    pub j: usize,
    /// Azimuth, degrees.
    pub phi: f64,
    /// Polar angle from +z, degrees.
    pub theta: f64,
    pub direction: Vec3,
}

/// All `m·k` rays, ordered by `(j, i)` so that `rays[spec.ray_index(i, j)]` is ray `(i, j)`.
pub fn build_rays(spec: &SensorSpec) -> Vec<Ray> {
    let (m, k) = (spec.horizontal_divisions, spec.vertical_divisions);
    let mut rays = Vec::with_capacity(m * k);
    for j in 0..k {
        let theta = spec.ray_polar(j);
        for i in 0..m {
            let phi = spec.ray_azimuth(i);
            rays.push(Ray { i, j, phi, theta, direction: direction_from_angles(phi, theta) });
        }
    }
    rays
}
