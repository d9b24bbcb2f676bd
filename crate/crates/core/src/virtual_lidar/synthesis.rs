use log::warn;
use rayon::prelude::*;

use super::plane::fit_plane_iter;
use super::{build_rays, fit_plane_tls, intersect_ray_plane, FrustumBins, LidarError, Plane, Ray, SensorSpec, SphericalCloud};
use crate::geometry::Vec3;
use crate::ground_segmentation::SegmentationResult;
use crate::pointcloud::{FrameTag, Point, PointCloud};

/// Intensity written for every synthesized point; no reflectance model is applied.
pub const SYNTHETIC_INTENSITY: f32 = 0.0;

/// Per-ray hit against the local plane of its non-ground frustum, if any.
fn non_ground_hit(ray: &Ray, members: &[u32], cloud: &SphericalCloud, spec: &SensorSpec) -> Option<Vec3> {
    if members.len() < 3 {
        return None;
    }
    let nearest = members.iter().map(|&p| cloud.coords[p as usize].rho).fold(f64::INFINITY, f64::min);
    let cutoff = nearest + spec.occlusion_window;
    let front = members.iter().filter(move |&&p| cloud.coords[p as usize].rho <= cutoff).map(|&p| cloud.positions[p as usize]);
    let plane = fit_plane_iter(front).ok()?;
    intersect_ray_plane(ray, &plane, spec)
}

fn non_ground_hits(cloud: &SphericalCloud, bins: &FrustumBins, rays: &[Ray], spec: &SensorSpec) -> Vec<Option<Vec3>> {
    rays.par_iter().enumerate().map(|(r, ray)| non_ground_hit(ray, bins.non_ground.members(r), cloud, spec)).collect()
}

/// Hits of the rays that keep ground support against the global ground plane.
///
/// A ray is dropped when its frustum holds no ground points; this covers
/// frustums occluded by non-ground objects as well as empty ones.
fn ground_hits(
    ground: &SphericalCloud,
    bins: &FrustumBins,
    rays: &[Ray],
    spec: &SensorSpec,
) -> Result<(Vec<Option<Vec3>>, Plane), LidarError> {
    let plane = fit_plane_tls(&ground.positions)?;
    let hits = rays
        .par_iter()
        .enumerate()
        .map(|(r, ray)| if bins.ground.is_empty_at(r) { None } else { intersect_ray_plane(ray, &plane, spec) })
        .collect();
    Ok((hits, plane))
}

fn collect_cloud<'a>(hits: impl Iterator<Item = &'a Option<Vec3>>, source_id: &str) -> PointCloud {
    let points = hits.flatten().map(|p| Point::new(*p, SYNTHETIC_INTENSITY)).collect();
    PointCloud::new(points, FrameTag::Vehicle, source_id)
}

/// Non-ground samples `V_n`: one per ray whose frustum yields a plane hit, in ray order.
pub fn synthesize_non_ground(non_ground: &SphericalCloud, bins: &FrustumBins, rays: &[Ray], spec: &SensorSpec) -> PointCloud {
    collect_cloud(non_ground_hits(non_ground, bins, rays, spec).iter(), "")
}

#[derive(Debug, Clone)]
pub struct GroundSynthesis {
    pub cloud: PointCloud,
    pub plane: Plane,
}

/// Ground samples `V_g` against a plane fitted to all ground points.
pub fn synthesize_ground(
    ground: &SphericalCloud,
    bins: &FrustumBins,
    rays: &[Ray],
    spec: &SensorSpec,
) -> Result<GroundSynthesis, LidarError> {
    let (hits, plane) = ground_hits(ground, bins, rays, spec)?;
    Ok(GroundSynthesis { cloud: collect_cloud(hits.iter(), ""), plane })
}

/// Output of [`synthesize`].
#[derive(Debug, Clone)]
pub struct Synthesis {
    /// `V`, ordered by ray `(j, i)`.
    pub cloud: PointCloud,
    /// Number of points of `V` taken from non-ground planes.
    pub non_ground_count: usize,
    /// Number of points of `V` taken from the ground plane.
    pub ground_count: usize,
    pub ground_plane: Option<Plane>,
    /// For each point of `cloud`, the flat index of the ray that produced it.
    pub ray_of_point: Vec<u32>,
    /// For each point of `cloud`, whether it came from the ground plane.
    pub from_ground: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Resamples a segmented vehicle-frame cloud through the virtual sensor.
///
/// Every ray emits at most one point. A non-ground hit wins over a ground hit
/// on the same ray.
pub fn synthesize(cloud: &PointCloud, segmentation: &SegmentationResult, spec: &SensorSpec) -> Result<Synthesis, LidarError> {
    spec.validate()?;
    if cloud.frame() != FrameTag::Vehicle {
        return Err(LidarError::InconsistentInput("input cloud must be in the vehicle frame".into()));
    }
    let parts = segmentation.non_ground.len() + segmentation.ground.len();
    if parts != cloud.len() {
        return Err(LidarError::InconsistentInput(format!("segmentation covers {parts} points but the cloud has {}", cloud.len())));
    }
    let to_spherical = |c: &PointCloud| SphericalCloud::from_cloud(c).map_err(|e| LidarError::InconsistentInput(e.to_string()));
    let non_ground = to_spherical(&segmentation.non_ground)?;
    let ground = to_spherical(&segmentation.ground)?;

    let rays = build_rays(spec);
    let bins = FrustumBins::build(&non_ground, &ground, spec);
    let ng_hits = non_ground_hits(&non_ground, &bins, &rays, spec);

    let mut warnings = Vec::new();
    let (g_hits, ground_plane) = match ground_hits(&ground, &bins, &rays, spec) {
        Ok((hits, plane)) => (hits, Some(plane)),
        Err(e) => {
            let msg = format!("{}: no ground plane ({e}); ground samples skipped", cloud.source_id);
            warn!("{msg}");
            warnings.push(msg);
            (vec![None; rays.len()], None)
        }
    };

    let mut points = Vec::new();
    let mut ray_of_point = Vec::new();
    let mut from_ground = Vec::new();
    let (mut non_ground_count, mut ground_count) = (0, 0);
    for (r, (ng, g)) in ng_hits.iter().zip(&g_hits).enumerate() {
        let (hit, is_ground) = match (ng, g) {
            (Some(p), _) => (p, false),
            (None, Some(p)) => (p, true),
            (None, None) => continue,
        };
        if is_ground {
            ground_count += 1;
        } else {
            non_ground_count += 1;
        }
        points.push(Point::new(*hit, SYNTHETIC_INTENSITY));
        ray_of_point.push(r as u32);
        from_ground.push(is_ground);
    }

    Ok(Synthesis {
        cloud: PointCloud::new(points, FrameTag::Vehicle, cloud.source_id.clone()),
        non_ground_count,
        ground_count,
        ground_plane,
        ray_of_point,
        from_ground,
        warnings,
    })
}
