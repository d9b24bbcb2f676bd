//! Point clouds, KITTI velodyne I/O and range gating.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{cartesian_to_spherical, RigidTransform, Vec3};
use crate::virtual_lidar::SensorSpec;

/// Bytes per KITTI velodyne record: four little-endian `f32`.
pub const KITTI_RECORD_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: length {len} is not a multiple of 16 bytes")]
    TruncatedRecord { path: PathBuf, len: usize },
    #[error("expected a {expected} frame cloud, got {found}")]
    WrongFrame { expected: FrameTag, found: FrameTag },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

impl CloudError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CloudError::Io { path: path.to_path_buf(), source }
    }
}

/// Coordinate frame a cloud or annotation is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameTag {
    World,
    Vehicle,
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameTag::World => f.write_str("world"),
            FrameTag::Vehicle => f.write_str("vehicle"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vec3,
    pub intensity: f32,
}

impl Point {
    pub fn new(position: Vec3, intensity: f32) -> Self {
        Self { position, intensity }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    frame: FrameTag,
    pub source_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame: FrameTag, source_id: impl Into<String>) -> Self {
        Self { points, frame, source_id: source_id.into() }
    }

    pub fn empty(frame: FrameTag, source_id: impl Into<String>) -> Self {
        Self::new(Vec::new(), frame, source_id)
    }

    pub fn frame(&self) -> FrameTag {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.points.iter().map(|p| &p.position)
    }

    /// Axis-aligned bounds as `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = self.points.first()?.position;
        Some(self.positions().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub(crate) fn require_frame(&self, expected: FrameTag) -> Result<(), CloudError> {
        if self.frame != expected {
            return Err(CloudError::WrongFrame { expected, found: self.frame });
        }
        Ok(())
    }

    /// The sub-cloud at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud { points: indices.iter().map(|&i| self.points[i]).collect(), frame: self.frame, source_id: self.source_id.clone() }
    }
}

/// `f32 -> f64` that keeps NaN payloads; the hardware conversion quiets signaling NaNs.
fn widen(v: f32) -> f64 {
    if v.is_nan() {
        let b = v.to_bits() as u64;
        f64::from_bits(((b & 0x8000_0000) << 32) | 0x7ff0_0000_0000_0000 | ((b & 0x007f_ffff) << 29))
    } else {
        v as f64
    }
}

/// Inverse of [`widen`] for values that came from it.
fn narrow(v: f64) -> f32 {
    if v.is_nan() {
        let b = v.to_bits();
        f32::from_bits((((b >> 32) & 0x8000_0000) | 0x7f80_0000 | ((b >> 29) & 0x007f_ffff)) as u32)
    } else {
        v as f32
    }
}

/// Decodes a KITTI velodyne buffer: `(x, y, z, intensity)` little-endian `f32` records.
pub fn decode_kitti(bytes: &[u8]) -> Option<Vec<Point>> {
    if !bytes.len().is_multiple_of(KITTI_RECORD_BYTES) {
        return None;
    }
    let field = |rec: &[u8], k: usize| f32::from_le_bytes([rec[4 * k], rec[4 * k + 1], rec[4 * k + 2], rec[4 * k + 3]]);
    Some(
        bytes
            .chunks_exact(KITTI_RECORD_BYTES)
            .map(|rec| {
                let p = Vec3::new(widen(field(rec, 0)), widen(field(rec, 1)), widen(field(rec, 2)));
                Point::new(p, field(rec, 3))
            })
            .collect(),
    )
}

pub fn encode_kitti(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * KITTI_RECORD_BYTES);
    for p in points {
        for v in [narrow(p.position.x), narrow(p.position.y), narrow(p.position.z), p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a KITTI velodyne `.bin` file as a world-frame cloud named after the file stem.
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
    read_kitti_bin_as(path, FrameTag::World)
}

pub fn read_kitti_bin_as(path: impl AsRef<Path>, frame: FrameTag) -> Result<PointCloud, CloudError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CloudError::io(path, e))?;
    let points = decode_kitti(&bytes).ok_or_else(|| CloudError::TruncatedRecord { path: path.to_path_buf(), len: bytes.len() })?;
    Ok(PointCloud::new(points, frame, stem(path)))
}

pub fn write_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), CloudError> {
    let path = path.as_ref();
    fs::write(path, encode_kitti(&cloud.points)).map_err(|e| CloudError::io(path, e))
}

/// Reads the ASCII debug format: one `x y z intensity` line per point.
/// Blank lines and lines starting with `#` are ignored.
pub fn read_ascii(path: impl AsRef<Path>, frame: FrameTag) -> Result<PointCloud, CloudError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CloudError::io(path, e))?;
    let mut points = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CloudError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| CloudError::Parse { path: path.to_path_buf(), line: n + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut vals = [0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| parse_err(format!("invalid number {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {f:?}")));
            }
        }
        points.push(Point::new(Vec3::new(vals[0], vals[1], vals[2]), vals[3] as f32));
    }
    Ok(PointCloud::new(points, frame, stem(path)))
}

pub fn write_ascii(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), CloudError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CloudError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &cloud.points {
        writeln!(w, "{} {} {} {}", p.position.x, p.position.y, p.position.z, p.intensity).map_err(|e| CloudError::io(path, e))?;
    }
    w.flush().map_err(|e| CloudError::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Re-expresses a world-frame cloud in the vehicle frame.
pub fn transform_cloud(cloud: &PointCloud, t: &RigidTransform) -> Result<PointCloud, CloudError> {
    cloud.require_frame(FrameTag::World)?;
    let points = cloud.points.par_iter().map(|p| Point::new(t.apply(&p.position), p.intensity)).collect();
    Ok(PointCloud::new(points, FrameTag::Vehicle, cloud.source_id.clone()))
}

/// True if `p` lies inside the sensor's range and vertical field of view (both inclusive).
pub fn within_sensor_envelope(p: &Vec3, spec: &SensorSpec) -> bool {
    match cartesian_to_spherical(p) {
        Ok(s) => s.rho >= spec.min_range && s.rho <= spec.max_range && s.theta >= spec.theta_min && s.theta <= spec.theta_max,
        Err(_) => false,
    }
}

/// Indices of the points kept by [`range_gate`], ascending.
pub fn range_gate_indices(cloud: &PointCloud, spec: &SensorSpec) -> Vec<usize> {
    cloud.points.par_iter().enumerate().filter(|(_, p)| within_sensor_envelope(&p.position, spec)).map(|(i, _)| i).collect()
}

/// Discards points outside the sensing range and vertical FOV. Azimuth is not gated.
pub fn range_gate(cloud: &PointCloud, spec: &SensorSpec) -> Result<PointCloud, CloudError> {
    cloud.require_frame(FrameTag::Vehicle)?;
    Ok(cloud.select(&range_gate_indices(cloud, spec)))
}
