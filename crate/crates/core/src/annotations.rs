//! 3D box annotations, their re-expression in the vehicle frame, and label files.
//!
//! The native label format is line oriented:
//!
//! ```text
//! # object_id category length width height cx cy cz rx ry rz
//! veh_7 Car 4.5 1.8 1.6 12.0 -3.5 0.8 0.0 0.0 1.57
//! ```
//!
//! Rotations are full rotation vectors (radians). A lossy KITTI `label_2`
//! writer keeps only the yaw.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{inv_rodrigues, rodrigues, GeometryError, RigidTransform, RotationVector, Vec3};
use crate::pointcloud::FrameTag;

const HEADER: &str = "# object_id category length width height cx cy cz rx ry rz";

/// Categories treated as vehicles when targets are `all-vehicles` (case-insensitive).
pub const VEHICLE_CATEGORIES: &[&str] = &["car", "van", "truck", "bus", "vehicle"];

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid box {object_id:?}: {message}")]
    InvalidBox { object_id: String, message: String },
    #[error("expected a {expected} frame annotation, got {found}")]
    WrongFrame { expected: FrameTag, found: FrameTag },
    #[error("target {0:?} not found in labels")]
    UnknownTarget(String),
    #[error("target {0:?} appears more than once in labels")]
    DuplicateTarget(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Box extents in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensions {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Dimensions {
    pub fn new(length: f64, width: f64, height: f64) -> Self {
        Self { length, width, height }
    }

    fn is_valid(&self) -> bool {
        [self.length, self.width, self.height].iter().all(|d| d.is_finite() && *d > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxAnnotation {
    pub object_id: String,
    pub category: String,
    pub dimensions: Dimensions,
    pub centroid: Vec3,
    pub rotation: RotationVector,
    frame: FrameTag,
}

impl BoxAnnotation {
    pub fn new(
        object_id: impl Into<String>,
        category: impl Into<String>,
        dimensions: Dimensions,
        centroid: Vec3,
        rotation: RotationVector,
        frame: FrameTag,
    ) -> Result<Self, LabelError> {
        let b = Self { object_id: object_id.into(), category: category.into(), dimensions, centroid, rotation, frame };
        let invalid = |message: &str| LabelError::InvalidBox { object_id: b.object_id.clone(), message: message.into() };
        if !b.dimensions.is_valid() {
            return Err(invalid("dimensions must be finite and strictly positive"));
        }
        if !b.rotation.is_finite() || !b.centroid.iter().all(|c| c.is_finite()) {
            return Err(invalid("pose must be finite"));
        }
        for token in [&b.object_id, &b.category] {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(invalid("object_id and category must be non-empty and free of whitespace"));
            }
        }
        Ok(b)
    }

    pub fn frame(&self) -> FrameTag {
        self.frame
    }

    pub fn is_vehicle(&self) -> bool {
        VEHICLE_CATEGORIES.iter().any(|c| c.eq_ignore_ascii_case(&self.category))
    }

    /// Whether `p` (same frame as the box) lies inside the box.
    pub fn contains(&self, p: &Vec3) -> bool {
        let local = rodrigues(&self.rotation).transpose().rotate(&(p - self.centroid));
        let d = &self.dimensions;
        local.x.abs() <= 0.5 * d.length && local.y.abs() <= 0.5 * d.width && local.z.abs() <= 0.5 * d.height
    }
}

/// Re-expresses a world-frame box in the vehicle frame: the centroid maps
/// through `t`, and the orientation becomes `R · Rodrigues(θ_w)`.
pub fn transform_annotation(b: &BoxAnnotation, t: &RigidTransform) -> Result<BoxAnnotation, LabelError> {
    if b.frame != FrameTag::World {
        return Err(LabelError::WrongFrame { expected: FrameTag::World, found: b.frame });
    }
    let rotation = inv_rodrigues(&(t.rotation * rodrigues(&b.rotation)))?;
    Ok(BoxAnnotation {
        object_id: b.object_id.clone(),
        category: b.category.clone(),
        dimensions: b.dimensions,
        centroid: t.apply(&b.centroid),
        rotation,
        frame: FrameTag::Vehicle,
    })
}

/// Pose `(X_wc, θ_wc)` of the box with the given id.
pub fn select_target(labels: &[BoxAnnotation], object_id: &str) -> Result<(Vec3, RotationVector), LabelError> {
    let mut matches = labels.iter().filter(|b| b.object_id == object_id);
    let found = matches.next().ok_or_else(|| LabelError::UnknownTarget(object_id.to_string()))?;
    if matches.next().is_some() {
        return Err(LabelError::DuplicateTarget(object_id.to_string()));
    }
    Ok((found.centroid, found.rotation))
}

pub fn read_labels(path: impl AsRef<Path>, frame: FrameTag) -> Result<Vec<BoxAnnotation>, LabelError> {
    let path = path.as_ref();
    let io = |source| LabelError::Io { path: path.to_path_buf(), source };
    let file = fs::File::open(path).map_err(io)?;
    let mut boxes = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| LabelError::Parse { path: path.to_path_buf(), line: n + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 11 {
            return Err(parse_err(format!("expected 11 fields, found {}", fields.len())));
        }
        let mut v = [0f64; 9];
        for (slot, text) in v.iter_mut().zip(&fields[2..]) {
            *slot = text.parse().map_err(|_| parse_err(format!("invalid number {text:?}")))?;
        }
        let b = BoxAnnotation::new(
            fields[0],
            fields[1],
            Dimensions::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
            RotationVector::new(v[6], v[7], v[8]),
            frame,
        )
        .map_err(|e| parse_err(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn write_labels(boxes: &[BoxAnnotation], path: impl AsRef<Path>) -> Result<(), LabelError> {
    let path = path.as_ref();
    let io = |source| LabelError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(w, "{HEADER}").map_err(io)?;
    for b in boxes {
        let d = &b.dimensions;
        let r = b.rotation.as_vector();
        write!(w, "{} {}", b.object_id, b.category).map_err(io)?;
        for v in [d.length, d.width, d.height, b.centroid.x, b.centroid.y, b.centroid.z, r.x, r.y, r.z] {
            write!(w, " {v:.16e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// One KITTI `label_2` line for a vehicle-frame box, using the nominal
/// LiDAR-to-camera axis swap (`x_cam = -y`, `y_cam = -z`, `z_cam = x`) and
/// the bottom-center location convention. Roll and pitch are dropped.
pub fn kitti_label_line(b: &BoxAnnotation) -> String {
    let d = &b.dimensions;
    let c = &b.centroid;
    let (x_cam, y_cam, z_cam) = (-c.y, -c.z + 0.5 * d.height, c.x);
    let rotation_y = wrap_angle(-b.rotation.z() - FRAC_PI_2);
    let alpha = wrap_angle(rotation_y - x_cam.atan2(z_cam));
    format!(
        "{} 0.00 0 {:.2} 0.00 0.00 0.00 0.00 {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        b.category, alpha, d.height, d.width, d.length, x_cam, y_cam, z_cam, rotation_y
    )
}

pub fn write_kitti_labels(boxes: &[BoxAnnotation], path: impl AsRef<Path>) -> Result<(), LabelError> {
    let path = path.as_ref();
    let io = |source| LabelError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for b in boxes {
        if b.frame != FrameTag::Vehicle {
            return Err(LabelError::WrongFrame { expected: FrameTag::Vehicle, found: b.frame });
        }
        writeln!(w, "{}", kitti_label_line(b)).map_err(io)?;
    }
    w.flush().map_err(io)
}
