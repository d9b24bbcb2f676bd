use rayon::prelude::*;

use super::SensorSpec;
use crate::geometry::{cartesian_to_spherical, GeometryError, SphericalPoint, Vec3};
use crate::pointcloud::PointCloud;

const BIN_CHUNK: usize = 4096;

/// Cartesian positions paired with their spherical coordinates.
#[derive(Debug, Clone, Default)]
pub struct SphericalCloud {
    pub positions: Vec<Vec3>,
    pub coords: Vec<SphericalPoint>,
}

impl SphericalCloud {
    pub fn from_cloud(cloud: &PointCloud) -> Result<Self, GeometryError> {
        let coords = cloud.points.par_iter().map(|p| cartesian_to_spherical(&p.position)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { positions: cloud.positions().copied().collect(), coords })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Nominal frustum `(i, j)` of a direction: the nearest ray in azimuth
/// (wrapping at 360°) and in polar angle (clamped to the beam range).
pub fn nominal_index(phi: f64, theta: f64, spec: &SensorSpec) -> (usize, usize) {
    let m = spec.horizontal_divisions as f64;
    let k = spec.vertical_divisions;
    let i = ((m * phi / 360.0).round().rem_euclid(m)) as usize % spec.horizontal_divisions;
    let j = (k as f64 * (theta - spec.theta_min) / (spec.theta_max - spec.theta_min)).round();
    let j = j.clamp(0.0, (k - 1) as f64) as usize;
    (i, j)
}

fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Calls `visit` with the flat index of every frustum containing direction
/// `(phi, theta)`: the nominal one, plus any ray closer than `e/2` steps in
/// both azimuth and polar angle.
pub(crate) fn for_each_frustum(phi: f64, theta: f64, spec: &SensorSpec, mut visit: impl FnMut(usize)) {
    let (ni, nj) = nominal_index(phi, theta, spec);
    let m = spec.horizontal_divisions;
    let k = spec.vertical_divisions;
    let h_res = spec.horizontal_resolution();
    let v_res = spec.vertical_resolution();
    let h_half = 0.5 * spec.frustum_expansion * h_res;
    let v_half = 0.5 * spec.frustum_expansion * v_res;

    let j_lo = ((theta - v_half - spec.theta_min) / v_res).floor().max(0.0) as usize;
    let j_hi = (((theta + v_half - spec.theta_min) / v_res).ceil().max(0.0) as usize).min(k - 1);
    let i_lo = ((phi - h_half) / h_res).floor() as i64;
    let i_hi = ((phi + h_half) / h_res).ceil() as i64;
    let (i_lo, i_hi) = if i_hi - i_lo + 1 >= m as i64 { (0, m as i64 - 1) } else { (i_lo, i_hi) };

    for j in j_lo.min(nj)..=j_hi.max(nj) {
        if j != nj && (spec.ray_polar(j) - theta).abs() >= v_half {
            continue;
        }
        for t in i_lo..=i_hi {
            let i = t.rem_euclid(m as i64) as usize;
            if i != ni && azimuth_gap(spec.ray_azimuth(i), phi) >= h_half {
                continue;
            }
            visit(spec.ray_index(i, j));
        }
    }
}

/// Frustum membership for one class of points, in compressed-row form:
/// the members of ray `r` are `members[offsets[r]..offsets[r + 1]]`,
/// ascending by point index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RayBins {
    offsets: Vec<u32>,
    members: Vec<u32>,
}

impl RayBins {
    pub fn members(&self, ray: usize) -> &[u32] {
        &self.members[self.offsets[ray] as usize..self.offsets[ray + 1] as usize]
    }

    pub fn is_empty_at(&self, ray: usize) -> bool {
        self.offsets[ray] == self.offsets[ray + 1]
    }

    pub fn ray_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total memberships; a point in several frustums counts once per frustum.
    pub fn total_memberships(&self) -> usize {
        self.members.len()
    }
}

/// Bins `points` into the frustums of `spec`.
pub fn bin_points(points: &SphericalCloud, spec: &SensorSpec) -> RayBins {
    let pairs: Vec<(u32, u32)> = points
        .coords
        .par_chunks(BIN_CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            let mut local = Vec::with_capacity(chunk.len() * 4);
            for (n, s) in chunk.iter().enumerate() {
                let idx = (c * BIN_CHUNK + n) as u32;
                for_each_frustum(s.phi, s.theta, spec, |r| local.push((r as u32, idx)));
            }
            local
        })
        .collect();

    // stable counting sort by ray keeps members ordered by point index
    let n_rays = spec.ray_count();
    let mut offsets = vec![0u32; n_rays + 1];
    for &(r, _) in &pairs {
        offsets[r as usize + 1] += 1;
    }
    for r in 0..n_rays {
        offsets[r + 1] += offsets[r];
    }
    let mut cursor = offsets.clone();
    let mut members = vec![0u32; pairs.len()];
    for &(r, p) in &pairs {
        let slot = &mut cursor[r as usize];
        members[*slot as usize] = p;
        *slot += 1;
    }
    RayBins { offsets, members }
}

/// Frustum membership of the non-ground and ground points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrustumBins {
    pub non_ground: RayBins,
    pub ground: RayBins,
}

impl FrustumBins {
    pub fn build(non_ground: &SphericalCloud, ground: &SphericalCloud, spec: &SensorSpec) -> Self {
        let (non_ground, ground) = rayon::join(|| bin_points(non_ground, spec), || bin_points(ground, spec));
        Self { non_ground, ground }
    }
}
