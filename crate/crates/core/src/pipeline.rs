//! End-to-end generation: one roadside frame in, one virtual vehicle frame
//! out per selected target vehicle.
//!
//! Batch layout: every `<frame_id>.bin` in the input directory is a
//! world-frame KITTI cloud with labels in `<frame_id>.txt` (next to it, or in
//! the labels directory). Outputs go to
//!
//! ```text
//! <output_dir>/velodyne/<frame_id>_<object_id>.bin
//! <output_dir>/labels/<frame_id>_<object_id>.txt
//! <output_dir>/label_2/<frame_id>_<object_id>.txt   (with emit_kitti_labels)
//! <output_dir>/manifest.csv
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::annotations::{read_labels, select_target, transform_annotation, write_kitti_labels, write_labels, BoxAnnotation, LabelError};
use crate::geometry::{world_to_vehicle_transform, RigidTransform, Vec3};
use crate::ground_segmentation::{BaselineSegmenter, GroundSegmenterConfig, PrecomputedLabels, SegmentationError, Segmenter};
use crate::pointcloud::{range_gate_indices, read_kitti_bin, transform_cloud, write_kitti_bin, CloudError, FrameTag, PointCloud};
use crate::virtual_lidar::{synthesize, LidarError, Plane, SensorSpec};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const ALL_VEHICLES: &str = "all-vehicles";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Lidar(#[from] LidarError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] csv::Error),
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

/// Which boxes become virtual sensor positions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TargetSelection {
    /// Every box whose category is a vehicle category.
    #[default]
    AllVehicles,
    Ids(Vec<String>),
}

impl TargetSelection {
    /// Parses `all-vehicles` or a comma-separated id list.
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        let s = s.trim();
        if s == ALL_VEHICLES {
            return Ok(Self::AllVehicles);
        }
        let ids: Vec<String> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
        if ids.is_empty() {
            return Err(PipelineError::Config("targets must be `all-vehicles` or a non-empty id list".into()));
        }
        Ok(Self::Ids(ids))
    }

    /// Target ids for one frame, sorted and deduplicated.
    pub fn resolve(&self, labels: &[BoxAnnotation]) -> Vec<String> {
        let mut ids: Vec<String> = match self {
            Self::AllVehicles => labels.iter().filter(|b| b.is_vehicle()).map(|b| b.object_id.clone()).collect(),
            Self::Ids(ids) => ids.clone(),
        };
        ids.sort();
        ids.dedup();
        ids
    }
}

impl fmt::Display for TargetSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AllVehicles => f.write_str(ALL_VEHICLES),
            Self::Ids(ids) => f.write_str(&ids.join(",")),
        }
    }
}

impl<'de> Deserialize<'de> for TargetSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(String),
            Many(Vec<String>),
        }
        match Raw::deserialize(d)? {
            Raw::One(s) => TargetSelection::parse(&s).map_err(serde::de::Error::custom),
            Raw::Many(ids) if ids.is_empty() => Err(serde::de::Error::custom("target list is empty")),
            Raw::Many(ids) => Ok(TargetSelection::Ids(ids)),
        }
    }
}

fn default_delta_t() -> [f64; 3] {
    [0.0, 0.0, 1.73]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}
fn default_true() -> bool {
    true
}
fn default_ego_margin() -> f64 {
    0.25
}

/// A generation job. Every field has a default except `input`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    /// A `.bin` frame or a directory of them.
    #[serde(default)]
    pub input: PathBuf,
    /// Label file (single frame) or directory; defaults to the input's directory.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub targets: TargetSelection,
    /// Sensor origin relative to the target's box centroid, meters.
    #[serde(default = "default_delta_t")]
    pub delta_t: [f64; 3],
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub segmenter: GroundSegmenterConfig,
    /// Precomputed ground flags (file, or directory of `<frame_id>.ground`)
    /// replacing the baseline segmenter. Flags index the roadside input cloud.
    #[serde(default)]
    pub ground_sidecar: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_kitti_labels: bool,
    /// Drop roadside points inside the target's own box before resampling.
    #[serde(default = "default_true")]
    pub remove_ego_points: bool,
    /// Growth of the ego box on every side when removing its points, meters.
    #[serde(default = "default_ego_margin")]
    pub ego_margin: f64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            labels: None,
            targets: TargetSelection::AllVehicles,
            delta_t: default_delta_t(),
            sensor: SensorSpec::default(),
            segmenter: GroundSegmenterConfig::default(),
            ground_sidecar: None,
            output_dir: default_output_dir(),
            emit_kitti_labels: false,
            remove_ego_points: true,
            ego_margin: default_ego_margin(),
            threads: 0,
        }
    }
}

impl JobConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Loads a TOML config; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.input);
        resolve(&mut cfg.output_dir);
        cfg.labels.as_mut().map(resolve);
        cfg.ground_sidecar.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn delta_t(&self) -> Vec3 {
        Vec3::from(self.delta_t)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.input.as_os_str().is_empty() {
            return bad("input path is empty".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir is empty".into());
        }
        if self.labels.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            return bad("labels path is empty".into());
        }
        if !self.delta_t.iter().all(|v| v.is_finite()) {
            return bad("delta_t must be finite".into());
        }
        if !(self.ego_margin.is_finite() && self.ego_margin >= 0.0) {
            return bad("ego_margin must be a non-negative number".into());
        }
        self.sensor.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.segmenter.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Where one roadside frame's files live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSource {
    pub frame_id: String,
    pub cloud: PathBuf,
    pub labels: PathBuf,
    pub ground_sidecar: Option<PathBuf>,
}

/// Enumerates input frames in frame-id order.
pub fn discover_frames(cfg: &JobConfig) -> Result<Vec<FrameSource>, PipelineError> {
    let side = |dir_or_file: &Option<PathBuf>, default_dir: &Path, id: &str, ext: &str, single: bool| -> Option<PathBuf> {
        match dir_or_file {
            Some(p) if single && !p.is_dir() => Some(p.clone()),
            Some(p) => Some(p.join(format!("{id}.{ext}"))),
            None => (ext == "txt").then(|| default_dir.join(format!("{id}.{ext}"))),
        }
    };
    let meta = fs::metadata(&cfg.input).map_err(|e| PipelineError::Config(format!("{}: {e}", cfg.input.display())))?;
    let (clouds, single) = if meta.is_dir() {
        if cfg.labels.as_ref().is_some_and(|p| p.is_file()) {
            return Err(PipelineError::Config("labels must be a directory when input is a directory".into()));
        }
        let mut bins = Vec::new();
        for entry in fs::read_dir(&cfg.input).map_err(|e| PipelineError::io(&cfg.input, e))? {
            let path = entry.map_err(|e| PipelineError::io(&cfg.input, e))?.path();
            if path.is_file() && path.extension().is_some_and(|e| e == "bin") {
                bins.push(path);
            }
        }
        (bins, false)
    } else {
        (vec![cfg.input.clone()], true)
    };

    let mut frames: Vec<FrameSource> = clouds
        .into_iter()
        .map(|cloud| {
            let frame_id = cloud.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let dir = cloud.parent().unwrap_or(Path::new("")).to_path_buf();
            FrameSource {
                labels: side(&cfg.labels, &dir, &frame_id, "txt", single).unwrap_or_default(),
                ground_sidecar: side(&cfg.ground_sidecar, &dir, &frame_id, "ground", single),
                frame_id,
                cloud,
            }
        })
        .collect();
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    Ok(frames)
}

/// A loaded roadside frame.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub frame_id: String,
    pub cloud: PointCloud,
    pub labels: Vec<BoxAnnotation>,
    pub ground_flags: Option<PrecomputedLabels>,
}

impl FrameInput {
    pub fn load(src: &FrameSource) -> Result<Self, PipelineError> {
        let mut cloud = read_kitti_bin(&src.cloud)?;
        cloud.source_id = src.frame_id.clone();
        let labels = read_labels(&src.labels, FrameTag::World)?;
        let ground_flags = src.ground_sidecar.as_ref().map(PrecomputedLabels::from_sidecar).transpose()?;
        if let Some(flags) = &ground_flags {
            if flags.flags().len() != cloud.len() {
                return Err(SegmentationError::LabelLengthMismatch { labels: flags.flags().len(), points: cloud.len() }.into());
            }
        }
        Ok(Self { frame_id: src.frame_id.clone(), cloud, labels, ground_flags })
    }
}

/// Point counts of one generated frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameCounts {
    pub p_c: usize,
    pub p_cn: usize,
    pub p_cg: usize,
    pub v_n: usize,
    pub v_g: usize,
    pub v: usize,
}

/// Everything produced for one (frame, target) pair.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame_id: String,
    pub object_id: String,
    pub transform: RigidTransform,
    /// The synthesized vehicle-frame cloud `V`.
    pub cloud: PointCloud,
    /// All other boxes, re-expressed in the vehicle frame.
    pub labels: Vec<BoxAnnotation>,
    /// The target's own box in the vehicle frame.
    pub ego_box: BoxAnnotation,
    pub counts: FrameCounts,
    pub ground_plane: Option<Plane>,
    pub warnings: Vec<String>,
}

impl FrameOutput {
    pub fn stem(&self) -> String {
        output_stem(&self.frame_id, &self.object_id)
    }
}

pub fn output_stem(frame_id: &str, object_id: &str) -> String {
    format!("{frame_id}_{object_id}")
}

/// Generates the virtual frame seen from `target_id`'s sensor.
pub fn generate_frame(cfg: &JobConfig, frame: &FrameInput, target_id: &str) -> Result<FrameOutput, PipelineError> {
    let (x_wc, theta_wc) = select_target(&frame.labels, target_id)?;
    let transform = world_to_vehicle_transform(&x_wc, &theta_wc, &cfg.delta_t());

    let q_c = transform_cloud(&frame.cloud, &transform)?;
    let mut labels = Vec::with_capacity(frame.labels.len());
    let mut ego_box = None;
    for b in &frame.labels {
        let moved = transform_annotation(b, &transform)?;
        if b.object_id == target_id {
            ego_box = Some(moved);
        } else {
            labels.push(moved);
        }
    }
    let ego_box = ego_box.ok_or_else(|| LabelError::UnknownTarget(target_id.to_string()))?;

    // indices into the roadside cloud that survive ego removal and range gating
    let mut kept: Vec<usize> = (0..q_c.len()).collect();
    if cfg.remove_ego_points {
        let mut grown = ego_box.clone();
        let d = &mut grown.dimensions;
        d.length += 2.0 * cfg.ego_margin;
        d.width += 2.0 * cfg.ego_margin;
        d.height += 2.0 * cfg.ego_margin;
        kept.retain(|&i| !grown.contains(&q_c.points[i].position));
    }
    let candidates = q_c.select(&kept);
    let gated = range_gate_indices(&candidates, &cfg.sensor);
    let p_c = candidates.select(&gated);
    let kept: Vec<usize> = gated.iter().map(|&g| kept[g]).collect();

    let segmentation = match &frame.ground_flags {
        Some(flags) => flags.select(&kept)?.segment(&p_c)?,
        None => BaselineSegmenter::new(cfg.segmenter).segment(&p_c)?,
    };
    let synthesis = synthesize(&p_c, &segmentation, &cfg.sensor)?;

    let counts = FrameCounts {
        p_c: p_c.len(),
        p_cn: segmentation.non_ground.len(),
        p_cg: segmentation.ground.len(),
        v_n: synthesis.non_ground_count,
        v_g: synthesis.ground_count,
        v: synthesis.cloud.len(),
    };
    let mut cloud = synthesis.cloud;
    cloud.source_id = output_stem(&frame.frame_id, target_id);
    Ok(FrameOutput {
        frame_id: frame.frame_id.clone(),
        object_id: target_id.to_string(),
        transform,
        cloud,
        labels,
        ego_box,
        counts,
        ground_plane: synthesis.ground_plane,
        warnings: synthesis.warnings,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

/// Writes a frame's cloud and labels under `output_dir`.
pub fn write_frame(cfg: &JobConfig, out: &FrameOutput) -> Result<(), PipelineError> {
    let stem = out.stem();
    let velodyne = cfg.output_dir.join("velodyne");
    let labels = cfg.output_dir.join("labels");
    ensure_dir(&velodyne)?;
    ensure_dir(&labels)?;
    write_kitti_bin(&out.cloud, velodyne.join(format!("{stem}.bin")))?;
    write_labels(&out.labels, labels.join(format!("{stem}.txt")))?;
    if cfg.emit_kitti_labels {
        let kitti = cfg.output_dir.join("label_2");
        ensure_dir(&kitti)?;
        write_kitti_labels(&out.labels, kitti.join(format!("{stem}.txt")))?;
    }
    Ok(())
}

/// One manifest line: a generated frame, or a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub frame_id: String,
    pub object_id: String,
    pub status: String,
    pub p_c: Option<usize>,
    pub p_cn: Option<usize>,
    pub p_cg: Option<usize>,
    pub v_n: Option<usize>,
    pub v_g: Option<usize>,
    pub v: Option<usize>,
    pub ground_nx: Option<f64>,
    pub ground_ny: Option<f64>,
    pub ground_nz: Option<f64>,
    pub ground_offset: Option<f64>,
    pub error: String,
    /// Wall-clock time; the only column that varies between identical runs.
    pub duration_ms: f64,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_FAILED: &str = "failed";
/// `object_id` of rows reporting a frame that could not be loaded at all.
pub const WHOLE_FRAME: &str = "*";

impl ManifestRow {
    pub fn success(out: &FrameOutput, duration_ms: f64) -> Self {
        let c = out.counts;
        let plane = out.ground_plane;
        Self {
            frame_id: out.frame_id.clone(),
            object_id: out.object_id.clone(),
            status: STATUS_OK.into(),
            p_c: Some(c.p_c),
            p_cn: Some(c.p_cn),
            p_cg: Some(c.p_cg),
            v_n: Some(c.v_n),
            v_g: Some(c.v_g),
            v: Some(c.v),
            ground_nx: plane.map(|p| p.normal.x),
            ground_ny: plane.map(|p| p.normal.y),
            ground_nz: plane.map(|p| p.normal.z),
            ground_offset: plane.map(|p| p.offset),
            error: out.warnings.join("; "),
            duration_ms,
        }
    }

    pub fn failure(frame_id: &str, object_id: &str, error: &PipelineError, duration_ms: f64) -> Self {
        Self {
            frame_id: frame_id.into(),
            object_id: object_id.into(),
            status: STATUS_FAILED.into(),
            p_c: None,
            p_cn: None,
            p_cg: None,
            v_n: None,
            v_g: None,
            v: None,
            ground_nx: None,
            ground_ny: None,
            ground_nz: None,
            ground_offset: None,
            error: error.to_string(),
            duration_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameManifest {
    pub rows: Vec<ManifestRow>,
}

impl FrameManifest {
    pub fn successes(&self) -> usize {
        self.rows.iter().filter(|r| r.is_ok()).count()
    }

    pub fn failures(&self) -> usize {
        self.rows.len() - self.successes()
    }

    fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.frame_id.cmp(&b.frame_id).then_with(|| a.object_id.cmp(&b.object_id)));
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        // explicit header so an empty manifest still has one
        w.write_record(MANIFEST_COLUMNS)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| PipelineError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { rows })
    }
}

pub const MANIFEST_COLUMNS: [&str; 15] = [
    "frame_id",
    "object_id",
    "status",
    "p_c",
    "p_cn",
    "p_cg",
    "v_n",
    "v_g",
    "v",
    "ground_nx",
    "ground_ny",
    "ground_nz",
    "ground_offset",
    "error",
    "duration_ms",
];

fn run_target(cfg: &JobConfig, frame: &FrameInput, target: &str) -> ManifestRow {
    let start = Instant::now();
    let result = generate_frame(cfg, frame, target).and_then(|out| write_frame(cfg, &out).map(|_| out));
    let ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(out) => {
            for w in &out.warnings {
                warn!("{}: {w}", out.stem());
            }
            ManifestRow::success(&out, ms)
        }
        Err(e) => {
            warn!("{}/{target}: {e}", frame.frame_id);
            ManifestRow::failure(&frame.frame_id, target, &e, ms)
        }
    }
}

/// Runs every (frame × target) job and writes `manifest.csv`.
///
/// Per-frame and per-target errors become `failed` rows; only an unusable
/// config or an unwritable output directory is returned as an error.
pub fn run_batch(cfg: &JobConfig) -> Result<FrameManifest, PipelineError> {
    cfg.validate()?;
    let frames = discover_frames(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    info!("{} input frame(s) from {}", frames.len(), cfg.input.display());

    let mut manifest = FrameManifest::default();
    for src in &frames {
        let start = Instant::now();
        let frame = match FrameInput::load(src) {
            Ok(f) => f,
            Err(e) => {
                warn!("{}: {e}", src.frame_id);
                let ms = start.elapsed().as_secs_f64() * 1e3;
                manifest.rows.push(ManifestRow::failure(&src.frame_id, WHOLE_FRAME, &e, ms));
                continue;
            }
        };
        let targets = cfg.targets.resolve(&frame.labels);
        let rows: Vec<ManifestRow> = targets.par_iter().map(|t| run_target(cfg, &frame, t)).collect();
        manifest.rows.extend(rows);
    }
    manifest.sort();
    manifest.write_csv(cfg.output_dir.join(MANIFEST_FILE))?;
    info!("{} frame(s) generated, {} failure(s)", manifest.successes(), manifest.failures());
    Ok(manifest)
}
