#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rs2v_core::annotations::{write_labels, BoxAnnotation, Dimensions};
use rs2v_core::geometry::{direction_from_angles, inv_rodrigues, rodrigues, RigidTransform, RotationMatrix, RotationVector};
use rs2v_core::ground_segmentation::PrecomputedLabels;
use rs2v_core::pointcloud::{write_kitti_bin, FrameTag, Point, PointCloud};
use rs2v_core::virtual_lidar::SensorSpec;
use rs2v_core::Vec3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// planar scene: ground z = -2, walls at x = 10 and y = -8, sensor at origin

pub const GROUND_Z: f64 = -2.0;
pub const WALL_X: f64 = 10.0;
pub const WALL_Y: f64 = -8.0;
/// wall x = 10 spans |y| <= 6; wall y = -8 spans x in [-6, 4]; both reach z = 4
const WALL_X_SPAN: (f64, f64) = (-6.0, 6.0);
const WALL_Y_SPAN: (f64, f64) = (-6.0, 4.0);
const WALL_TOP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    WallX,
    WallY,
}

impl Surface {
    pub fn residual(self, p: &Vec3) -> f64 {
        match self {
            Surface::Ground => (p.z - GROUND_Z).abs(),
            Surface::WallX => (p.x - WALL_X).abs(),
            Surface::WallY => (p.y - WALL_Y).abs(),
        }
    }
}

/// First surface hit along unit direction `d` from the origin.
pub fn trace(d: &Vec3) -> Option<(f64, Surface)> {
    let mut best: Option<(f64, Surface)> = None;
    let mut offer = |t: f64, s: Surface| {
        if t > 0.0 && best.is_none_or(|(b, _)| t < b) {
            best = Some((t, s));
        }
    };
    if d.x.abs() > 1e-12 {
        let t = WALL_X / d.x;
        let p = d * t;
        if p.y >= WALL_X_SPAN.0 && p.y <= WALL_X_SPAN.1 && p.z >= GROUND_Z && p.z <= WALL_TOP {
            offer(t, Surface::WallX);
        }
    }
    if d.y.abs() > 1e-12 {
        let t = WALL_Y / d.y;
        let p = d * t;
        if p.x >= WALL_Y_SPAN.0 && p.x <= WALL_Y_SPAN.1 && p.z >= GROUND_Z && p.z <= WALL_TOP {
            offer(t, Surface::WallY);
        }
    }
    if d.z < -1e-12 {
        offer(GROUND_Z / d.z, Surface::Ground);
    }
    best
}

/// A dense scan of the planar scene.
pub struct PlanarScan {
    pub cloud: PointCloud,
    pub surface: Vec<Surface>,
}

impl PlanarScan {
    pub fn ground_flags(&self) -> PrecomputedLabels {
        PrecomputedLabels::new(self.surface.iter().map(|&s| s == Surface::Ground).collect())
    }
}

/// Scans the planar scene with `oversample`² beams per virtual ray, jittered
/// inside each beam cell, keeping hits within the sensor range. `noise` is the
/// standard deviation of displacement along the surface normal.
pub fn planar_scan(spec: &SensorSpec, oversample: usize, noise: f64, seed: u64) -> PlanarScan {
    let mut rng = rng(seed);
    let gauss = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    let m = spec.horizontal_divisions * oversample;
    let k = spec.vertical_divisions * oversample;
    let (lo, hi) = (spec.theta_min, spec.theta_max);
    let mut points = Vec::new();
    let mut surface = Vec::new();
    for j in 0..k {
        for i in 0..m {
            let theta = lo + (j as f64 + rng.gen_range(0.05..0.95)) / k as f64 * (hi - lo);
            let phi = (i as f64 + rng.gen_range(0.05..0.95)) / m as f64 * 360.0;
            let d = direction_from_angles(phi, theta);
            let Some((t, s)) = trace(&d) else { continue };
            if t < spec.min_range || t > spec.max_range {
                continue;
            }
            let mut p = d * t;
            if noise > 0.0 {
                let n = gauss.sample(&mut rng);
                match s {
                    Surface::Ground => p.z += n,
                    Surface::WallX => p.x += n,
                    Surface::WallY => p.y += n,
                }
            }
            points.push(Point::new(p, 0.5));
            surface.push(s);
        }
    }
    PlanarScan { cloud: PointCloud::new(points, FrameTag::Vehicle, "planar"), surface }
}

// ---------------------------------------------------------------------------
// plane + boxes scene for the ground segmenter, vehicle frame

pub struct SegmentationScene {
    pub cloud: PointCloud,
    pub is_ground: Vec<bool>,
}

fn footprint_contains(c: &Vec3, yaw: f64, length: f64, width: f64, p: &Vec3, margin: f64) -> bool {
    let (s, co) = yaw.sin_cos();
    let (dx, dy) = (p.x - c.x, p.y - c.y);
    let lx = co * dx + s * dy;
    let ly = -s * dx + co * dy;
    lx.abs() <= 0.5 * length + margin && ly.abs() <= 0.5 * width + margin
}

/// Samples the five visible faces of an upright box (no bottom face) above
/// `clearance` from the ground at `ground_z`.
fn box_surface(rng: &mut ChaCha8Rng, c: Vec3, yaw: f64, dims: (f64, f64, f64), ground_z: f64, clearance: f64, density: f64) -> Vec<Vec3> {
    let (l, w, h) = dims;
    let z0 = ground_z + clearance;
    let z1 = ground_z + h;
    let side_h = z1 - z0;
    let (s, co) = yaw.sin_cos();
    let place = |lx: f64, ly: f64, z: f64| Vec3::new(c.x + co * lx - s * ly, c.y + s * lx + co * ly, z);
    let mut out = Vec::new();
    let count = |area: f64| (area * density).ceil() as usize;
    for _ in 0..count(l * w) {
        out.push(place(rng.gen_range(-0.5..0.5) * l, rng.gen_range(-0.5..0.5) * w, z1));
    }
    for sign in [-1.0, 1.0] {
        for _ in 0..count(l * side_h) {
            out.push(place(rng.gen_range(-0.5..0.5) * l, sign * 0.5 * w, rng.gen_range(z0..z1)));
        }
        for _ in 0..count(w * side_h) {
            out.push(place(sign * 0.5 * l, rng.gen_range(-0.5..0.5) * w, rng.gen_range(z0..z1)));
        }
    }
    out
}

/// Flat ground at `ground_z` with upright boxes 0.5 to 2 m tall.
pub fn segmentation_scene(seed: u64, n_boxes: usize, ground_points: usize, ground_z: f64) -> SegmentationScene {
    let mut rng = rng(seed);
    let mut boxes: Vec<(Vec3, f64, (f64, f64, f64))> = Vec::new();
    while boxes.len() < n_boxes {
        let r = rng.gen_range(8.0..40.0);
        let a = rng.gen_range(0.0..2.0 * PI);
        let c = Vec3::new(r * a.cos(), r * a.sin(), ground_z);
        if boxes.iter().any(|(o, _, _)| (o - c).norm() < 7.0) {
            continue;
        }
        let dims = (rng.gen_range(1.0..5.0), rng.gen_range(0.8..2.5), rng.gen_range(0.5..2.0));
        boxes.push((c, rng.gen_range(0.0..PI), dims));
    }
    let mut points = Vec::new();
    let mut is_ground = Vec::new();
    while is_ground.len() < ground_points {
        let r = 50.0 * rng.gen::<f64>().sqrt();
        let a = rng.gen_range(0.0..2.0 * PI);
        let p = Vec3::new(r * a.cos(), r * a.sin(), ground_z);
        if r < 1.0 || boxes.iter().any(|(c, yaw, d)| footprint_contains(c, *yaw, d.0, d.1, &p, 0.0)) {
            continue;
        }
        points.push(Point::new(p, 0.2));
        is_ground.push(true);
    }
    for (c, yaw, dims) in &boxes {
        for p in box_surface(&mut rng, *c, *yaw, *dims, ground_z, 0.3, 60.0) {
            points.push(Point::new(p, 0.8));
            is_ground.push(false);
        }
    }
    SegmentationScene { cloud: PointCloud::new(points, FrameTag::Vehicle, "boxes"), is_ground }
}

// ---------------------------------------------------------------------------
// roadside frames: world-frame clouds and labels

pub struct RoadsideFrame {
    pub cloud: PointCloud,
    pub labels: Vec<BoxAnnotation>,
    pub is_ground: Vec<bool>,
}

impl RoadsideFrame {
    pub fn vehicle_count(&self) -> usize {
        self.labels.iter().filter(|b| b.is_vehicle()).count()
    }
}

fn rot_z(a: f64) -> RotationMatrix {
    rodrigues(&RotationVector::new(0.0, 0.0, a))
}

/// A roadside frame in a tilted, offset world frame: ground disc of radius 45 m,
/// `n_vehicles` vehicle boxes and one pedestrian box, each with surface points.
pub fn roadside_frame(seed: u64, n_vehicles: usize, ground_points: usize) -> RoadsideFrame {
    let mut rng = rng(seed);
    let world = RigidTransform::new(
        rodrigues(&RotationVector::new(0.03, -0.02, rng.gen_range(-PI..PI))),
        Vec3::new(rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0), rng.gen_range(-5.0..5.0)),
    );
    let categories = ["Car", "Car", "Car", "Van", "Truck", "Bus"];
    type Placed = (Vec3, f64, (f64, f64, f64), String, &'static str);
    let mut placed: Vec<Placed> = Vec::new();
    let mut attempts = 0;
    while placed.len() < n_vehicles + 1 {
        attempts += 1;
        assert!(attempts < 100_000, "fixture placement failed");
        let pedestrian = placed.len() == n_vehicles;
        let r = rng.gen_range(4.0..35.0);
        let a = rng.gen_range(0.0..2.0 * PI);
        let c = Vec3::new(r * a.cos(), r * a.sin(), 0.0);
        if placed.iter().any(|(o, ..)| (o - c).norm() < 7.5) {
            continue;
        }
        let (category, dims) = if pedestrian {
            ("Pedestrian", (0.6, 0.6, 1.7))
        } else {
            match categories[rng.gen_range(0..categories.len())] {
                "Truck" => ("Truck", (rng.gen_range(6.0..7.0), 2.4, rng.gen_range(2.8..3.4))),
                "Bus" => ("Bus", (rng.gen_range(6.5..7.0), 2.5, 3.2)),
                "Van" => ("Van", (5.0, 2.0, 2.1)),
                _ => ("Car", (rng.gen_range(4.0..4.8), rng.gen_range(1.7..1.9), rng.gen_range(1.4..1.6))),
            }
        };
        let id = if pedestrian { "ped_0".to_string() } else { format!("veh_{}", placed.len()) };
        placed.push((c, rng.gen_range(-PI..PI), dims, id, category));
    }

    let mut points = Vec::new();
    let mut is_ground = Vec::new();
    while is_ground.len() < ground_points {
        let r = 45.0 * rng.gen::<f64>().sqrt();
        let a = rng.gen_range(0.0..2.0 * PI);
        let p = Vec3::new(r * a.cos(), r * a.sin(), 0.0);
        if placed.iter().any(|(c, yaw, d, ..)| footprint_contains(c, *yaw, d.0, d.1, &p, 0.0)) {
            continue;
        }
        points.push(p);
        is_ground.push(true);
    }
    let mut labels = Vec::new();
    for (c, yaw, dims, id, category) in &placed {
        for p in box_surface(&mut rng, *c, *yaw, *dims, 0.0, 0.3, 40.0) {
            points.push(p);
            is_ground.push(false);
        }
        let centroid = world.apply(&Vec3::new(c.x, c.y, 0.5 * dims.2));
        let rotation = inv_rodrigues(&(world.rotation * rot_z(*yaw))).unwrap();
        labels.push(
            BoxAnnotation::new(id.clone(), *category, Dimensions::new(dims.0, dims.1, dims.2), centroid, rotation, FrameTag::World)
                .unwrap(),
        );
    }
    let points = points
        .iter()
        .map(|p| {
            // positions pass through f32 on disk; keep the fixture exact under that
            let q = world.apply(p);
            Point::new(Vec3::new(q.x as f32 as f64, q.y as f32 as f64, q.z as f32 as f64), rng.gen_range(0.0..1.0f32))
        })
        .collect();
    RoadsideFrame { cloud: PointCloud::new(points, FrameTag::World, format!("{seed:06}")), labels, is_ground }
}

/// Writes `<id>.bin` and `<id>.txt` (and `<id>.ground` when asked) into `dir`.
pub fn write_roadside_frame(dir: &Path, frame_id: &str, frame: &RoadsideFrame, sidecar: bool) {
    fs::create_dir_all(dir).unwrap();
    write_kitti_bin(&frame.cloud, dir.join(format!("{frame_id}.bin"))).unwrap();
    write_labels(&frame.labels, dir.join(format!("{frame_id}.txt"))).unwrap();
    if sidecar {
        PrecomputedLabels::write_sidecar(&frame.is_ground, dir.join(format!("{frame_id}.ground"))).unwrap();
    }
}

/// Every regular file under `dir` (recursive), as sorted relative paths with contents.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Manifest text with the `duration_ms` column removed.
pub fn manifest_without_timing(path: &Path) -> String {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let skip = headers.iter().position(|h| h == "duration_ms").unwrap();
    let mut out = String::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let fields: Vec<&str> = rec.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, f)| f).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
