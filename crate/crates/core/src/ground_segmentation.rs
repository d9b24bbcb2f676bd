//! Ground / non-ground partition of a vehicle-frame cloud.
//!
//! [`BaselineSegmenter`] is a zone-based plane fitter in the spirit of the
//! Patchwork family; [`PrecomputedLabels`] wires in the output of an external
//! segmenter through a one-byte-per-point sidecar file.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{azimuth_degrees, Vec3};
use crate::pointcloud::{FrameTag, PointCloud};
use crate::virtual_lidar::fit_plane_tls;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("expected a vehicle frame cloud, got {0}")]
    WrongFrame(FrameTag),
    #[error("input cloud is empty")]
    EmptyInput,
    #[error("sidecar has {labels} labels but the cloud has {points} points")]
    LabelLengthMismatch { labels: usize, points: usize },
    #[error("{path}: byte {offset} is {value}, expected 0 or 1")]
    InvalidSidecarByte { path: PathBuf, offset: usize, value: u8 },
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Two disjoint, order-preserving parts of one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub non_ground: PointCloud,
    pub ground: PointCloud,
}

impl SegmentationResult {
    /// Splits `cloud` by `is_ground`, keeping the original order within each part.
    pub fn from_mask(cloud: &PointCloud, is_ground: &[bool]) -> Self {
        debug_assert_eq!(cloud.len(), is_ground.len());
        let (ground, non_ground): (Vec<_>, Vec<_>) = cloud.points.iter().zip(is_ground).partition(|(_, &g)| g);
        let part = |v: Vec<(&crate::pointcloud::Point, &bool)>| {
            PointCloud::new(v.into_iter().map(|(p, _)| *p).collect(), cloud.frame(), cloud.source_id.clone())
        };
        Self { non_ground: part(non_ground), ground: part(ground) }
    }
}

/// Anything that can label each point of a cloud as ground or not.
pub trait Segmenter: Send + Sync {
    /// One flag per input point, `true` for ground.
    fn ground_mask(&self, cloud: &PointCloud) -> Result<Vec<bool>, SegmentationError>;

    fn segment(&self, cloud: &PointCloud) -> Result<SegmentationResult, SegmentationError> {
        let mask = self.ground_mask(cloud)?;
        if mask.len() != cloud.len() {
            return Err(SegmentationError::LabelLengthMismatch { labels: mask.len(), points: cloud.len() });
        }
        Ok(SegmentationResult::from_mask(cloud, &mask))
    }
}

fn default_cell_size() -> f64 {
    2.0
}
fn default_sector_angle() -> f64 {
    22.5
}
fn default_seed_height_margin() -> f64 {
    0.2
}
fn default_max_plane_distance() -> f64 {
    0.15
}
fn default_max_slope() -> f64 {
    25.0
}
fn default_refinement_iterations() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSegmenterConfig {
    /// Radial extent of a polar grid cell, meters.
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    /// Angular extent of a polar grid cell, degrees.
    #[serde(default = "default_sector_angle")]
    pub sector_angle: f64,
    /// Seeds are the points within this height of a cell's lowest point.
    #[serde(default = "default_seed_height_margin")]
    pub seed_height_margin: f64,
    /// Inlier distance to the cell plane, meters.
    #[serde(default = "default_max_plane_distance")]
    pub max_plane_distance: f64,
    /// Maximum tilt of a ground plane from horizontal, degrees.
    #[serde(default = "default_max_slope")]
    pub max_slope: f64,
    #[serde(default = "default_refinement_iterations")]
    pub refinement_iterations: usize,
    /// Treat an empty input as an error instead of returning two empty parts.
    #[serde(default)]
    pub strict: bool,
}

impl Default for GroundSegmenterConfig {
    fn default() -> Self {
        Self {
            cell_size: default_cell_size(),
            sector_angle: default_sector_angle(),
            seed_height_margin: default_seed_height_margin(),
            max_plane_distance: default_max_plane_distance(),
            max_slope: default_max_slope(),
            refinement_iterations: default_refinement_iterations(),
            strict: false,
        }
    }
}

impl GroundSegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let positive = [self.cell_size, self.sector_angle, self.seed_height_margin, self.max_plane_distance, self.max_slope]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.refinement_iterations == 0 {
            return Err(SegmentationError::InvalidConfig("all parameters must be positive".into()));
        }
        if self.max_slope >= 45.0 {
            return Err(SegmentationError::InvalidConfig("max_slope must be below 45 degrees".into()));
        }
        if self.sector_angle > 360.0 {
            return Err(SegmentationError::InvalidConfig("sector_angle must not exceed 360 degrees".into()));
        }
        Ok(())
    }
}

/// Polar-grid ground segmenter.
///
/// Per cell: seed with the lowest points, fit a plane, re-collect inliers a
/// few rounds, and accept the inliers as ground if the plane is not too steep.
/// Cells with fewer than three points are non-ground.
#[derive(Debug, Clone, Default)]
pub struct BaselineSegmenter {
    pub config: GroundSegmenterConfig,
}

impl BaselineSegmenter {
    pub fn new(config: GroundSegmenterConfig) -> Self {
        Self { config }
    }
}

fn lexicographic(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

fn classify_cell(points: &[Vec3], cfg: &GroundSegmenterConfig) -> Vec<bool> {
    let n = points.len();
    let mut ground = vec![false; n];
    if n < 3 {
        return ground;
    }
    let lowest = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let mut seeds: Vec<Vec3> = points.iter().filter(|p| p.z <= lowest + cfg.seed_height_margin).copied().collect();
    if seeds.len() < 3 {
        let mut by_height = points.to_vec();
        by_height.sort_by(|a, b| a.z.total_cmp(&b.z).then(lexicographic(a, b)));
        seeds = by_height[..3].to_vec();
    }
    let Ok(mut plane) = fit_plane_tls(&seeds) else {
        return ground;
    };
    let inliers = |plane: &crate::virtual_lidar::Plane| -> Vec<Vec3> {
        points.iter().filter(|p| plane.signed_distance(p).abs() <= cfg.max_plane_distance).copied().collect()
    };
    for _ in 0..cfg.refinement_iterations {
        let current = inliers(&plane);
        match fit_plane_tls(&current) {
            Ok(refit) => plane = refit,
            Err(_) => break,
        }
    }
    let tilt = plane.normal.z.abs().clamp(0.0, 1.0).acos().to_degrees();
    if tilt > cfg.max_slope {
        return ground;
    }
    for (g, p) in ground.iter_mut().zip(points) {
        *g = plane.signed_distance(p).abs() <= cfg.max_plane_distance;
    }
    ground
}

impl Segmenter for BaselineSegmenter {
    fn ground_mask(&self, cloud: &PointCloud) -> Result<Vec<bool>, SegmentationError> {
        let cfg = &self.config;
        cfg.validate()?;
        if cloud.frame() != FrameTag::Vehicle {
            return Err(SegmentationError::WrongFrame(cloud.frame()));
        }
        if cloud.is_empty() {
            return if cfg.strict { Err(SegmentationError::EmptyInput) } else { Ok(Vec::new()) };
        }

        let sectors = (360.0 / cfg.sector_angle).ceil() as u64;
        let cell_of = |p: &Vec3| -> u64 {
            let ring = (p.x.hypot(p.y) / cfg.cell_size).floor() as u64;
            let sector = ((azimuth_degrees(p.x, p.y) / cfg.sector_angle).floor() as u64).min(sectors - 1);
            ring * sectors + sector
        };
        // Sorting by cell, then by coordinates, makes each cell's input
        // independent of the order points arrive in.
        let mut order: Vec<(u64, usize)> = cloud.points.par_iter().enumerate().map(|(i, p)| (cell_of(&p.position), i)).collect();
        order.par_sort_unstable_by(|a, b| {
            a.0.cmp(&b.0).then_with(|| lexicographic(&cloud.points[a.1].position, &cloud.points[b.1].position)).then(a.1.cmp(&b.1))
        });
        let cells: Vec<&[(u64, usize)]> = order.chunk_by(|a, b| a.0 == b.0).collect();
        let labels: Vec<Vec<bool>> = cells
            .par_iter()
            .map(|cell| {
                let pts: Vec<Vec3> = cell.iter().map(|&(_, i)| cloud.points[i].position).collect();
                classify_cell(&pts, cfg)
            })
            .collect();

        let mut mask = vec![false; cloud.len()];
        for (cell, flags) in cells.iter().zip(&labels) {
            for (&(_, i), &g) in cell.iter().zip(flags) {
                mask[i] = g;
            }
        }
        Ok(mask)
    }
}

/// Baseline segmentation of `cloud` with `cfg`.
pub fn segment_ground(cloud: &PointCloud, cfg: &GroundSegmenterConfig) -> Result<SegmentationResult, SegmentationError> {
    BaselineSegmenter::new(*cfg).segment(cloud)
}

/// Ground flags supplied from outside, one per point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecomputedLabels {
    flags: Vec<bool>,
}

impl PrecomputedLabels {
    pub fn new(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    /// Reads a sidecar file: one byte per point, `0` non-ground, `1` ground.
    pub fn from_sidecar(path: impl AsRef<Path>) -> Result<Self, SegmentationError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| SegmentationError::Io { path: path.to_path_buf(), source })?;
        let flags = bytes
            .iter()
            .enumerate()
            .map(|(offset, &value)| match value {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(SegmentationError::InvalidSidecarByte { path: path.to_path_buf(), offset, value }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { flags })
    }

    pub fn write_sidecar(flags: &[bool], path: impl AsRef<Path>) -> Result<(), SegmentationError> {
        let path = path.as_ref();
        let bytes: Vec<u8> = flags.iter().map(|&g| g as u8).collect();
        fs::write(path, bytes).map_err(|source| SegmentationError::Io { path: path.to_path_buf(), source })
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// The labels of the points at `indices`, e.g. those surviving range gating.
    pub fn select(&self, indices: &[usize]) -> Result<Self, SegmentationError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.flags.len()) {
            return Err(SegmentationError::LabelLengthMismatch { labels: self.flags.len(), points: bad + 1 });
        }
        Ok(Self { flags: indices.iter().map(|&i| self.flags[i]).collect() })
    }
}

impl Segmenter for PrecomputedLabels {
    fn ground_mask(&self, cloud: &PointCloud) -> Result<Vec<bool>, SegmentationError> {
        if self.flags.len() != cloud.len() {
            return Err(SegmentationError::LabelLengthMismatch { labels: self.flags.len(), points: cloud.len() });
        }
        Ok(self.flags.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vehicle_cloud(pts: Vec<Vec3>) -> PointCloud {
        PointCloud::new(pts.into_iter().map(|p| Point::new(p, 0.0)).collect(), FrameTag::Vehicle, "s")
    }

    /// Ground grid on z = -2 out to 30 m, plus points filling a box floating
    /// 1 m above it. Returns the cloud and the construction labels.
    fn plane_and_box(rng: &mut ChaCha8Rng) -> (PointCloud, Vec<bool>) {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..20_000 {
            let x = rng.gen_range(-30.0..30.0);
            let y = rng.gen_range(-30.0..30.0);
            pts.push(Vec3::new(x, y, -2.0));
            labels.push(true);
        }
        for _ in 0..2_000 {
            let p = Vec3::new(rng.gen_range(8.0..12.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..0.5));
            pts.push(p);
            labels.push(false);
        }
        (vehicle_cloud(pts), labels)
    }

    fn partition_holds(cloud: &PointCloud, seg: &SegmentationResult) {
        assert_eq!(seg.ground.len() + seg.non_ground.len(), cloud.len());
        let mut g = seg.ground.points.iter().peekable();
        let mut n = seg.non_ground.points.iter().peekable();
        for p in &cloud.points {
            if g.peek() == Some(&p) {
                g.next();
            } else {
                assert_eq!(n.next(), Some(p));
            }
        }
        assert!(g.next().is_none() && n.next().is_none());
    }

    #[test]
    fn box_above_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (cloud, truth) = plane_and_box(&mut rng);
        let mask = BaselineSegmenter::default().ground_mask(&cloud).unwrap();
        let ground_total = truth.iter().filter(|&&g| g).count();
        let ground_hit = mask.iter().zip(&truth).filter(|(m, t)| **m && **t).count();
        let box_hit = mask.iter().zip(&truth).filter(|(m, t)| !**m && !**t).count();
        assert!(ground_hit as f64 >= 0.99 * ground_total as f64);
        assert!(box_hit as f64 >= 0.99 * (truth.len() - ground_total) as f64);
        partition_holds(&cloud, &segment_ground(&cloud, &GroundSegmenterConfig::default()).unwrap());
    }

    #[test]
    fn single_plane_has_no_objects() {
        // dense enough that every polar cell holds at least three points
        let pts = (0..160)
            .flat_map(|a| (0..160).map(move |b| Vec3::new(-20.0 + 0.25 * a as f64 + 0.1, -20.0 + 0.25 * b as f64 + 0.1, -1.7)))
            .filter(|p: &Vec3| p.x.hypot(p.y) < 19.0)
            .collect();
        let seg = segment_ground(&vehicle_cloud(pts), &GroundSegmenterConfig::default()).unwrap();
        assert!(seg.non_ground.is_empty(), "{} non-ground", seg.non_ground.len());
    }

    #[test]
    fn steep_cells_are_rejected() {
        // a 40 degree ramp
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let slope = 40f64.to_radians().tan();
        let pts = (0..3000)
            .map(|_| {
                let x = rng.gen_range(5.0..15.0);
                Vec3::new(x, rng.gen_range(-2.0..2.0), -2.0 + slope * (x - 5.0))
            })
            .collect();
        let seg = segment_ground(&vehicle_cloud(pts), &GroundSegmenterConfig::default()).unwrap();
        assert!(seg.ground.is_empty());
    }

    #[test]
    fn sparse_cells_are_non_ground() {
        let cloud = vehicle_cloud(vec![Vec3::new(5.0, 0.1, -2.0), Vec3::new(5.1, 0.2, -2.0)]);
        let seg = segment_ground(&cloud, &GroundSegmenterConfig::default()).unwrap();
        assert_eq!(seg.non_ground.len(), 2);
    }

    #[test]
    fn empty_input() {
        let cloud = PointCloud::empty(FrameTag::Vehicle, "e");
        let seg = segment_ground(&cloud, &GroundSegmenterConfig::default()).unwrap();
        assert!(seg.ground.is_empty() && seg.non_ground.is_empty());
        let strict = GroundSegmenterConfig { strict: true, ..Default::default() };
        assert!(matches!(segment_ground(&cloud, &strict), Err(SegmentationError::EmptyInput)));
        let world = PointCloud::empty(FrameTag::World, "w");
        assert!(matches!(segment_ground(&world, &GroundSegmenterConfig::default()), Err(SegmentationError::WrongFrame(_))));
    }

    #[test]
    fn reordering_gives_same_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (cloud, _) = plane_and_box(&mut rng);
        let mask = BaselineSegmenter::default().ground_mask(&cloud).unwrap();
        let mut perm: Vec<usize> = (0..cloud.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = cloud.select(&perm);
        let shuffled_mask = BaselineSegmenter::default().ground_mask(&shuffled).unwrap();
        for (k, &orig) in perm.iter().enumerate() {
            assert_eq!(shuffled_mask[k], mask[orig]);
        }
    }

    #[test]
    fn precomputed_labels_partition_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ground");
        let cloud = vehicle_cloud((0..6).map(|i| Vec3::new(i as f64 + 1.0, 0.0, -2.0)).collect());
        fs::write(&path, [1u8, 0, 0, 1, 1, 0]).unwrap();
        let labels = PrecomputedLabels::from_sidecar(&path).unwrap();
        let seg = labels.segment(&cloud).unwrap();
        assert_eq!(seg.ground.points, cloud.select(&[0, 3, 4]).points);
        assert_eq!(seg.non_ground.points, cloud.select(&[1, 2, 5]).points);
        partition_holds(&cloud, &seg);

        let short = cloud.select(&[0, 1, 2]);
        assert!(matches!(labels.segment(&short), Err(SegmentationError::LabelLengthMismatch { labels: 6, points: 3 })));
        assert_eq!(labels.select(&[0, 1]).unwrap().flags(), &[true, false]);
        assert!(labels.select(&[6]).is_err());

        fs::write(&path, [0u8, 2]).unwrap();
        assert!(matches!(PrecomputedLabels::from_sidecar(&path), Err(SegmentationError::InvalidSidecarByte { offset: 1, value: 2, .. })));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ground");
        let flags = vec![true, false, false, true];
        PrecomputedLabels::write_sidecar(&flags, &path).unwrap();
        assert_eq!(PrecomputedLabels::from_sidecar(&path).unwrap().flags(), flags.as_slice());
    }

    #[test]
    fn config_validation() {
        GroundSegmenterConfig::default().validate().unwrap();
        assert!(GroundSegmenterConfig { max_slope: 45.0, ..Default::default() }.validate().is_err());
        assert!(GroundSegmenterConfig { cell_size: 0.0, ..Default::default() }.validate().is_err());
    }
}
