//! RGB-D frames: on-disk loading and deprojection into world-frame colored
//! point clouds.
//!
//! Depth is kept in meters in memory and as 16-bit integers on disk
//! (`raw * depth_scale`, scale 0.001 by default). A depth of zero or a
//! non-finite value marks an invalid pixel.

use crate::geometry::{CameraIntrinsics, Frame, GeometryError, Pose6D, PoseRecord, Vec3};
use image::{ImageBuffer, Luma, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const DEFAULT_DEPTH_SCALE: f64 = 0.001;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: malformed calibration: {msg}")]
    Calibration { path: PathBuf, msg: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// One camera's color and depth image with its calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub camera: String,
    pub width: u32,
    pub height: u32,
    /// Row-major, 3 bytes per pixel.
    pub rgb: Vec<u8>,
    /// Row-major, meters.
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Camera to world.
    pub extrinsics: Pose6D,
}

impl RgbdFrame {
    pub fn new(
        camera: impl Into<String>,
        rgb: Vec<u8>,
        depth: Vec<f64>,
        intrinsics: CameraIntrinsics,
        extrinsics: Pose6D,
    ) -> Result<Self, IngestError> {
        intrinsics.validate()?;
        let (w, h) = (intrinsics.width, intrinsics.height);
        let n = w as usize * h as usize;
        if rgb.len() != n * 3 {
            return Err(IngestError::Shape(format!("rgb has {} bytes, expected {}x{}x3", rgb.len(), w, h)));
        }
        if depth.len() != n {
            return Err(IngestError::Shape(format!("depth has {} values, expected {}x{}", depth.len(), w, h)));
        }
        if extrinsics.frame != Frame::World || extrinsics.child != Frame::Camera {
            return Err(IngestError::Shape("extrinsics must map camera to world".into()));
        }
        Ok(Self { camera: camera.into(), width: w, height: h, rgb, depth, intrinsics, extrinsics })
    }

    pub fn depth_at(&self, u: u32, v: u32) -> f64 {
        self.depth[(v * self.width + u) as usize]
    }

    pub fn pixel_count(&self) -> usize {
        self.depth.len()
    }
}

pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Meters to the on-disk integer; invalid or negative depths become 0.
pub fn depth_to_raw(d: f64, scale: f64) -> u16 {
    if !is_valid_depth(d) {
        return 0;
    }
    (d / scale).round().clamp(0.0, u16::MAX as f64) as u16
}

pub fn raw_to_depth(raw: u16, scale: f64) -> f64 {
    raw as f64 * scale
}

/// Snap a depth to what survives a write/read cycle at `scale`.
pub fn quantize_depth(d: f64, scale: f64) -> f64 {
    raw_to_depth(depth_to_raw(d, scale), scale)
}

/// Colored points in the world frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vec3, c: [f32; 3]) {
        self.points.push(p);
        self.colors.push(c);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.colors.extend_from_slice(&other.colors);
    }
}

/// Deproject every valid depth pixel and move it into the world frame.
///
/// Output is in row-major pixel order regardless of how rows are scheduled.
pub fn deproject(frame: &RgbdFrame) -> PointCloud {
    let w = frame.width as usize;
    let k = &frame.intrinsics;
    let rows: Vec<(Vec<Vec3>, Vec<[f32; 3]>)> = (0..frame.height as usize)
        .into_par_iter()
        .map(|v| {
            let mut pts = Vec::new();
            let mut cols = Vec::new();
            for u in 0..w {
                let i = v * w + u;
                let d = frame.depth[i];
                if !is_valid_depth(d) {
                    continue;
                }
                let cam = k.deproject(u as f64, v as f64, d);
                pts.push(frame.extrinsics.transform_point(&cam));
                let c = &frame.rgb[3 * i..3 * i + 3];
                cols.push([c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]);
            }
            (pts, cols)
        })
        .collect();
    let mut cloud = PointCloud::default();
    for (p, c) in rows {
        cloud.points.extend(p);
        cloud.colors.extend(c);
    }
    cloud
}

/// `calib_<cam>.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Calibration {
    pub camera: String,
    pub intrinsics: CameraIntrinsics,
    /// Camera to world.
    pub extrinsics: PoseRecord,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
}

fn default_depth_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

impl Calibration {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text)
            .map_err(|e| IngestError::Calibration { path: path.to_path_buf(), msg: e.to_string() })
    }
}

/// The three files making up one camera's frame on disk.
#[derive(Debug, Clone)]
pub struct FramePaths {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub calib: PathBuf,
}

impl FramePaths {
    pub fn in_dir(dir: &Path, camera: &str) -> Self {
        Self {
            rgb: dir.join(format!("rgb_{camera}.png")),
            depth: dir.join(format!("depth_{camera}.png")),
            calib: dir.join(format!("calib_{camera}.json")),
        }
    }
}

/// Load a frame; when `calibration` is `None` it is read from `paths.calib`.
pub fn load_frame(paths: &FramePaths, calibration: Option<&Calibration>) -> Result<RgbdFrame, IngestError> {
    let loaded;
    let calib = match calibration {
        Some(c) => c,
        None => {
            loaded = Calibration::load(&paths.calib)?;
            &loaded
        }
    };
    let rgb = image::open(&paths.rgb)
        .map_err(|source| IngestError::Image { path: paths.rgb.clone(), source })?
        .to_rgb8();
    let depth_img = image::open(&paths.depth)
        .map_err(|source| IngestError::Image { path: paths.depth.clone(), source })?;
    let depth_img = match depth_img {
        image::DynamicImage::ImageLuma16(d) => d,
        other => {
            return Err(IngestError::Shape(format!(
                "{}: depth must be 16-bit grayscale, got {:?}",
                paths.depth.display(),
                other.color()
            )))
        }
    };
    let k = &calib.intrinsics;
    if rgb.dimensions() != (k.width, k.height) || depth_img.dimensions() != (k.width, k.height) {
        return Err(IngestError::Calibration {
            path: paths.calib.clone(),
            msg: format!(
                "image sizes rgb {:?} depth {:?} disagree with intrinsics {}x{}",
                rgb.dimensions(),
                depth_img.dimensions(),
                k.width,
                k.height
            ),
        });
    }
    let depth = depth_img.into_raw().into_iter().map(|r| raw_to_depth(r, calib.depth_scale)).collect();
    let extrinsics = calib.extrinsics.to_pose(Frame::World, Frame::Camera)?;
    RgbdFrame::new(calib.camera.clone(), rgb.into_raw(), depth, *k, extrinsics)
}

/// Write `rgb_<cam>.png`, `depth_<cam>.png` and `calib_<cam>.json` into `dir`.
pub fn save_frame(frame: &RgbdFrame, dir: &Path, depth_scale: f64) -> Result<(), IngestError> {
    let paths = FramePaths::in_dir(dir, &frame.camera);
    let rgb: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(frame.width, frame.height, frame.rgb.clone())
        .ok_or_else(|| IngestError::Shape("rgb buffer size".into()))?;
    rgb.save(&paths.rgb).map_err(|source| IngestError::Image { path: paths.rgb.clone(), source })?;
    let raw: Vec<u16> = frame.depth.iter().map(|&d| depth_to_raw(d, depth_scale)).collect();
    let depth: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(frame.width, frame.height, raw)
        .ok_or_else(|| IngestError::Shape("depth buffer size".into()))?;
    depth.save(&paths.depth).map_err(|source| IngestError::Image { path: paths.depth.clone(), source })?;
    let calib = Calibration {
        camera: frame.camera.clone(),
        intrinsics: frame.intrinsics,
        extrinsics: PoseRecord::from_pose(&frame.extrinsics),
        depth_scale,
    };
    let text = serde_json::to_string_pretty(&calib).expect("calibration serializes");
    fs::write(&paths.calib, text).map_err(io_err(&paths.calib))
}
