//! Client side of the two-stage detect-then-segment pipeline.
//!
//! A [`Detector`] answers "where is the `query` object in this image" either
//! from recorded fixtures (`<fixture_dir>/detections/<image_id>.json`), from
//! an in-memory store, or from the HTTP detector service. Image ids are the
//! hex SHA-256 of the decoded RGB pixel bytes, the same key the service uses
//! for its own fixture store.

pub mod rle;

use crate::geometry::Vec3;
use crate::rgbd::{is_valid_depth, RgbdFrame};
use crate::roles::ObjectPose;
use base64::Engine;
use rle::{Mask, RleMask};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const SCORE_THRESHOLD: f64 = 0.1;
/// Search radius in pixels for a valid depth near the mask centroid.
pub const DEPTH_SEARCH_RADIUS: i64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("no detection for {query:?} above score {threshold}")]
    NoDetection { query: String, threshold: f64 },
    #[error("fixture missing: {0}")]
    FixtureMissing(PathBuf),
    #[error("malformed fixture {path}: {msg}")]
    BadFixture { path: PathBuf, msg: String },
    #[error("detector service unreachable at {endpoint}: {msg}")]
    Unreachable { endpoint: String, msg: String },
    #[error("detector service error: {0}")]
    Service(String),
    #[error("invalid detection: {0}")]
    Invalid(String),
    #[error("detection mask is empty")]
    EmptyMask,
    #[error("no valid depth within {DEPTH_SEARCH_RADIUS} px of ({u:.1}, {v:.1})")]
    NoDepth { u: f64, v: f64 },
}

/// One detected object.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// `(u_min, v_min, u_max, v_max)` in pixels.
    pub bbox: [f64; 4],
    pub mask: Option<Mask>,
    pub score: f64,
    pub query: String,
}

impl Detection {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), DetectError> {
        let [u0, v0, u1, v1] = self.bbox;
        let inside = 0.0 <= u0 && u0 <= u1 && u1 <= width as f64 && 0.0 <= v0 && v0 <= v1 && v1 <= height as f64;
        if !inside {
            return Err(DetectError::Invalid(format!("bbox {:?} outside {width}x{height} image", self.bbox)));
        }
        if let Some(m) = &self.mask {
            if (m.width, m.height) != (width, height) {
                return Err(DetectError::Invalid(format!("mask is {}x{}, image {width}x{height}", m.width, m.height)));
            }
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(DetectError::Invalid(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

/// Detection as it travels over the wire and sits in fixture files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<RleMask>,
}

impl WireDetection {
    pub fn from_detection(d: &Detection) -> Self {
        Self { bbox: d.bbox, score: d.score, mask_rle: d.mask.as_ref().map(rle::encode) }
    }

    fn into_detection(self, query: &str) -> Result<Detection, DetectError> {
        let mask = match self.mask_rle {
            Some(r) => Some(rle::decode(&r).map_err(|e| DetectError::Invalid(e.to_string()))?),
            None => None,
        };
        Ok(Detection { bbox: self.bbox, mask, score: self.score, query: query.to_string() })
    }
}

/// `POST /detect` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    /// Base64 PNG.
    pub image: String,
    pub query: String,
    pub want_mask: bool,
}

/// `POST /detect` response, scores descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
    #[serde(default)]
    pub model_info: Vec<String>,
}

/// Contents of `detections/<image_id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub query: String,
    pub detections: Vec<WireDetection>,
}

/// An RGB image handed to the detector.
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub rgb: &'a [u8],
    pub width: u32,
    pub height: u32,
}

impl<'a> ImageRef<'a> {
    pub fn from_frame(f: &'a RgbdFrame) -> Self {
        Self { rgb: &f.rgb, width: f.width, height: f.height }
    }

    pub fn image_id(&self) -> String {
        hex::encode(Sha256::digest(self.rgb))
    }

    pub fn to_png(&self) -> Vec<u8> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(self.rgb, self.width, self.height, image::ExtendedColorType::Rgb8)
            .expect("rgb buffer matches its dimensions");
        out
    }
}

pub fn fixture_path(fixture_dir: &Path, image_id: &str) -> PathBuf {
    fixture_dir.join("detections").join(format!("{image_id}.json"))
}

pub fn write_fixture(fixture_dir: &Path, image_id: &str, record: &FixtureRecord) -> std::io::Result<()> {
    let path = fixture_path(fixture_dir, image_id);
    std::fs::create_dir_all(path.parent().expect("fixture path has a parent"))?;
    std::fs::write(path, serde_json::to_string(record).expect("fixture serializes"))
}

#[derive(Debug, Clone)]
pub enum Detector {
    Fixture(PathBuf),
    InMemory(HashMap<String, FixtureRecord>),
    Service { endpoint: String, timeout: Duration },
    /// Service first; fixtures when the service cannot be reached.
    WithFallback { primary: Box<Detector>, fixtures: PathBuf },
}

impl Detector {
    pub fn service(endpoint: impl Into<String>) -> Self {
        Detector::Service { endpoint: endpoint.into().trim_end_matches('/').to_string(), timeout: Duration::from_secs(30) }
    }

    /// Top-scoring detection for `query`, if any scores at least [`SCORE_THRESHOLD`].
    pub fn detect(&self, image: &ImageRef<'_>, query: &str) -> Result<Detection, DetectError> {
        let candidates = match self {
            Detector::Fixture(dir) => {
                let path = fixture_path(dir, &image.image_id());
                let text = std::fs::read_to_string(&path).map_err(|_| DetectError::FixtureMissing(path.clone()))?;
                let record: FixtureRecord = serde_json::from_str(&text)
                    .map_err(|e| DetectError::BadFixture { path: path.clone(), msg: e.to_string() })?;
                record.detections
            }
            Detector::InMemory(store) => {
                let id = image.image_id();
                store.get(&id).ok_or_else(|| DetectError::FixtureMissing(PathBuf::from(id)))?.detections.clone()
            }
            Detector::Service { endpoint, timeout } => request_detections(endpoint, *timeout, image, query)?.detections,
            Detector::WithFallback { primary, fixtures } => {
                return match primary.detect(image, query) {
                    Err(DetectError::Unreachable { endpoint, msg }) => {
                        log::warn!("detector at {endpoint} unreachable ({msg}); using fixtures in {}", fixtures.display());
                        Detector::Fixture(fixtures.clone()).detect(image, query)
                    }
                    other => other,
                };
            }
        };
        let best = select_top(candidates, query)?;
        best.validate(image.width, image.height)?;
        Ok(best)
    }
}

fn select_top(candidates: Vec<WireDetection>, query: &str) -> Result<Detection, DetectError> {
    let mut best: Option<WireDetection> = None;
    for c in candidates {
        if c.score < SCORE_THRESHOLD {
            continue;
        }
        if best.as_ref().is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| DetectError::NoDetection { query: query.to_string(), threshold: SCORE_THRESHOLD })?
        .into_detection(query)
}

fn request_detections(endpoint: &str, timeout: Duration, image: &ImageRef<'_>, query: &str) -> Result<DetectResponse, DetectError> {
    let body = DetectRequest {
        image: base64::engine::general_purpose::STANDARD.encode(image.to_png()),
        query: query.to_string(),
        want_mask: true,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
    let url = format!("{endpoint}/detect");
    match agent.post(&url).send_json(&body) {
        Ok(mut resp) => resp
            .body_mut()
            .read_json::<DetectResponse>()
            .map_err(|e| DetectError::Service(format!("bad response body: {e}"))),
        Err(ureq::Error::StatusCode(code)) => Err(DetectError::Service(format!("HTTP {code} from {url}"))),
        Err(e) => Err(DetectError::Unreachable { endpoint: endpoint.to_string(), msg: e.to_string() }),
    }
}

/// Mean mask pixel, or the bbox center when there is no mask.
pub fn mask_centroid(d: &Detection) -> Result<(f64, f64), DetectError> {
    match &d.mask {
        Some(m) => {
            let (mut su, mut sv, mut n) = (0u64, 0u64, 0u64);
            for (u, v) in m.pixels() {
                su += u as u64;
                sv += v as u64;
                n += 1;
            }
            if n == 0 {
                return Err(DetectError::EmptyMask);
            }
            Ok((su as f64 / n as f64, sv as f64 / n as f64))
        }
        None => {
            let [u0, v0, u1, v1] = d.bbox;
            Ok(((u0 + u1) / 2.0, (v0 + v1) / 2.0))
        }
    }
}

/// Valid depth at the pixel nearest `(u, v)`, searching outward up to
/// [`DEPTH_SEARCH_RADIUS`] pixels. Ties go to the first pixel in row-major order.
pub fn depth_near(frame: &RgbdFrame, u: f64, v: f64) -> Option<f64> {
    let (cu, cv) = (u.round() as i64, v.round() as i64);
    let r = DEPTH_SEARCH_RADIUS;
    let mut best: Option<(i64, f64)> = None;
    for dv in -r..=r {
        for du in -r..=r {
            let d2 = du * du + dv * dv;
            if d2 > r * r || best.is_some_and(|(b, _)| d2 >= b) {
                continue;
            }
            let (pu, pv) = (cu + du, cv + dv);
            if pu < 0 || pv < 0 || pu >= frame.width as i64 || pv >= frame.height as i64 {
                continue;
            }
            let d = frame.depth_at(pu as u32, pv as u32);
            if is_valid_depth(d) {
                best = Some((d2, d));
            }
        }
    }
    best.map(|(_, d)| d)
}

/// Principal-axis angle of 2D points in degrees, folded into `[-90, 90)`.
/// Isotropic spreads report 0.
fn principal_axis_deg(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let scale = (sxx + syy).max(f64::MIN_POSITIVE);
    if ((sxx - syy) / scale).abs() < 1e-9 && (sxy / scale).abs() < 1e-9 {
        return 0.0;
    }
    let mut deg = (0.5 * (2.0 * sxy).atan2(sxx - syy)).to_degrees();
    if deg >= 90.0 {
        deg -= 180.0;
    }
    deg
}

/// Object pose in the camera frame of `frame`.
///
/// Position is the centroid pixel deprojected at the (nearest valid) depth.
/// Yaw is the principal axis of the masked points in the camera x-y plane, or
/// 0 / -90 from the bbox aspect when there is no mask. Extent is the bbox
/// deprojected at the centroid depth; its third component is the depth spread
/// of the masked pixels (or the smaller bbox side without a mask).
pub fn object_pose_from_detection(d: &Detection, frame: &RgbdFrame) -> Result<ObjectPose, DetectError> {
    let (u, v) = mask_centroid(d)?;
    let depth = depth_near(frame, u, v).ok_or(DetectError::NoDepth { u, v })?;
    let k = &frame.intrinsics;
    let position = k.deproject(u, v, depth);
    let [u0, v0, u1, v1] = d.bbox;
    let ex = (u1 - u0) / k.fx * depth;
    let ey = (v1 - v0) / k.fy * depth;
    let (yaw_deg, ez) = match &d.mask {
        Some(m) => {
            let mut pts = Vec::new();
            let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for (pu, pv) in m.pixels() {
                let dd = frame.depth_at(pu, pv);
                if is_valid_depth(dd) {
                    let p = k.deproject(pu as f64, pv as f64, dd);
                    pts.push((p.x, p.y));
                    dmin = dmin.min(dd);
                    dmax = dmax.max(dd);
                }
            }
            if pts.is_empty() {
                pts = m.pixels().map(|(pu, pv)| (pu as f64 / k.fx, pv as f64 / k.fy)).collect();
                (principal_axis_deg(&pts), ex.min(ey))
            } else {
                (principal_axis_deg(&pts), dmax - dmin)
            }
        }
        None => (if ex >= ey { 0.0 } else { -90.0 }, ex.min(ey)),
    };
    Ok(ObjectPose { position, yaw_deg, extent: Vec3::new(ex, ey, ez), label: d.query.clone() })
}

/// Detect `query` in `frame` and return the camera-frame pose together with
/// the object's world-frame centroid.
pub fn locate_object(detector: &Detector, frame: &RgbdFrame, query: &str) -> Result<(ObjectPose, Vec3), DetectError> {
    let d = detector.detect(&ImageRef::from_frame(frame), query)?;
    let pose = object_pose_from_detection(&d, frame)?;
    let centroid = frame.extrinsics.transform_point(&pose.position);
    Ok((pose, centroid))
}

/// Fixture record for a ground-truth mask (what a perfect detector would report).
pub fn fixture_from_mask(mask: &Mask, query: &str, score: f64) -> FixtureRecord {
    let detections = match mask.bounds() {
        Some([u0, v0, u1, v1]) => vec![WireDetection {
            bbox: [u0 as f64, v0 as f64, u1 as f64, v1 as f64],
            score,
            mask_rle: Some(rle::encode(mask)),
        }],
        None => Vec::new(),
    };
    FixtureRecord { query: query.to_string(), detections }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Frame, Pose6D};
    use crate::rgbd::deproject;

    fn frame_with_depth(depth: Vec<f64>) -> RgbdFrame {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap();
        let ext = Pose6D::transform(Frame::World, Frame::Camera, Vec3::zeros(), nalgebra::UnitQuaternion::identity());
        RgbdFrame::new("front", vec![0; 128 * 128 * 3], depth, k, ext).unwrap()
    }

    fn mask_with(pixels: &[(u32, u32)], w: u32, h: u32) -> Mask {
        let mut data = vec![false; (w * h) as usize];
        for &(u, v) in pixels {
            data[(v * w + u) as usize] = true;
        }
        Mask::new(w, h, data).unwrap()
    }

    fn det(bbox: [f64; 4], mask: Option<Mask>) -> Detection {
        Detection { bbox, mask, score: 0.9, query: "jar".into() }
    }

    #[test]
    fn centroid_examples() {
        let m = mask_with(&[(0, 0), (0, 1), (1, 0), (1, 1)], 8, 8);
        assert_eq!(mask_centroid(&det([0.0, 0.0, 1.0, 1.0], Some(m))).unwrap(), (0.5, 0.5));
        let m = mask_with(&[(7, 3)], 8, 8);
        assert_eq!(mask_centroid(&det([7.0, 3.0, 7.0, 3.0], Some(m))).unwrap(), (7.0, 3.0));
        assert_eq!(mask_centroid(&det([10.0, 10.0, 30.0, 20.0], None)).unwrap(), (20.0, 15.0));
        let empty = mask_with(&[], 8, 8);
        assert!(matches!(mask_centroid(&det([0.0; 4], Some(empty))), Err(DetectError::EmptyMask)));
    }

    #[test]
    fn pose_at_principal_point() {
        let f = frame_with_depth(vec![1.0; 128 * 128]);
        let m = mask_with(&[(64, 64)], 128, 128);
        let p = object_pose_from_detection(&det([64.0, 64.0, 64.0, 64.0], Some(m)), &f).unwrap();
        assert_eq!(p.position, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn pose_pinhole_arithmetic_and_deproject_agree() {
        let f = frame_with_depth(vec![0.5; 128 * 128]);
        let m = mask_with(&[(84, 64)], 128, 128);
        let p = object_pose_from_detection(&det([84.0, 64.0, 84.0, 64.0], Some(m)), &f).unwrap();
        assert!((p.position - Vec3::new(0.1, 0.0, 0.5)).norm() < 1e-12);
        // same pixel through the cloud path
        let mut depth = vec![0.0; 128 * 128];
        depth[64 * 128 + 84] = 0.5;
        let cloud = deproject(&frame_with_depth(depth));
        assert!((cloud.points[0] - p.position).norm() < 1e-12);
    }

    #[test]
    fn square_mask_has_zero_yaw() {
        let f = frame_with_depth(vec![1.0; 128 * 128]);
        let pixels: Vec<_> = (60..68).flat_map(|u| (60..68).map(move |v| (u, v))).collect();
        let m = mask_with(&pixels, 128, 128);
        let p = object_pose_from_detection(&det([60.0, 60.0, 67.0, 67.0], Some(m)), &f).unwrap();
        assert_eq!(p.yaw_deg, 0.0);
    }

    #[test]
    fn elongated_mask_yaw_follows_long_axis() {
        let f = frame_with_depth(vec![1.0; 128 * 128]);
        // a diagonal streak running +u,+v
        let pixels: Vec<_> = (0..20).flat_map(|i| [(50 + i, 50 + i), (51 + i, 50 + i)]).collect();
        let m = mask_with(&pixels, 128, 128);
        let p = object_pose_from_detection(&det([50.0, 50.0, 70.0, 69.0], Some(m)), &f).unwrap();
        assert!((p.yaw_deg - 45.0).abs() < 3.0, "yaw {}", p.yaw_deg);
        let pixels: Vec<_> = (0..20).flat_map(|i| [(70 - i, 50 + i), (71 - i, 50 + i)]).collect();
        let m = mask_with(&pixels, 128, 128);
        let p = object_pose_from_detection(&det([50.0, 50.0, 71.0, 69.0], Some(m)), &f).unwrap();
        assert!((p.yaw_deg + 45.0).abs() < 3.0, "yaw {}", p.yaw_deg);
    }

    #[test]
    fn depth_hole_falls_back_to_nearest_valid() {
        let mut depth = vec![0.0; 128 * 128];
        depth[64 * 128 + 67] = 0.8;
        depth[64 * 128 + 70] = 0.3;
        let f = frame_with_depth(depth);
        assert_eq!(depth_near(&f, 64.0, 64.0), Some(0.8));
        let p = object_pose_from_detection(&det([60.0, 60.0, 68.0, 68.0], None), &f).unwrap();
        assert!((p.position.z - 0.8).abs() < 1e-12);
        let f = frame_with_depth(vec![0.0; 128 * 128]);
        assert!(matches!(object_pose_from_detection(&det([60.0, 60.0, 68.0, 68.0], None), &f), Err(DetectError::NoDepth { .. })));
    }

    #[test]
    fn bbox_fallback_yaw() {
        let f = frame_with_depth(vec![1.0; 128 * 128]);
        let wide = object_pose_from_detection(&det([10.0, 10.0, 30.0, 20.0], None), &f).unwrap();
        let tall = object_pose_from_detection(&det([10.0, 10.0, 20.0, 30.0], None), &f).unwrap();
        assert_eq!((wide.yaw_deg, tall.yaw_deg), (0.0, -90.0));
        assert!((wide.extent.x - 0.2).abs() < 1e-12 && (wide.extent.y - 0.1).abs() < 1e-12);
    }

    fn store(dets: Vec<WireDetection>, image: &ImageRef<'_>) -> Detector {
        let mut m = HashMap::new();
        m.insert(image.image_id(), FixtureRecord { query: "jar".into(), detections: dets });
        Detector::InMemory(m)
    }

    #[test]
    fn top_one_selection() {
        let rgb = vec![7u8; 4 * 4 * 3];
        let img = ImageRef { rgb: &rgb, width: 4, height: 4 };
        let w = |s: f64| WireDetection { bbox: [0.0, 0.0, 2.0, 2.0], score: s, mask_rle: None };
        let d = store(vec![w(0.4), w(0.9)], &img).detect(&img, "jar").unwrap();
        assert_eq!(d.score, 0.9);
        let e = store(vec![], &img).detect(&img, "jar");
        assert!(matches!(e, Err(DetectError::NoDetection { .. })));
        let e = store(vec![w(0.05)], &img).detect(&img, "jar");
        assert!(matches!(e, Err(DetectError::NoDetection { .. })));
    }

    #[test]
    fn fixture_passthrough_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = vec![1u8; 4 * 4 * 3];
        let img = ImageRef { rgb: &rgb, width: 4, height: 4 };
        let mask = mask_with(&[(1, 1), (2, 1)], 4, 4);
        let rec = fixture_from_mask(&mask, "jar", 0.8);
        write_fixture(dir.path(), &img.image_id(), &rec).unwrap();
        let det = Detector::Fixture(dir.path().to_path_buf());
        let d = det.detect(&img, "jar").unwrap();
        assert_eq!(d.bbox, [1.0, 1.0, 2.0, 1.0]);
        assert_eq!(d.mask.as_ref(), Some(&mask));
        assert_eq!(d.score, 0.8);
        assert_eq!(det.detect(&img, "jar").unwrap(), d);

        let other = vec![2u8; 4 * 4 * 3];
        let img2 = ImageRef { rgb: &other, width: 4, height: 4 };
        assert!(matches!(det.detect(&img2, "jar"), Err(DetectError::FixtureMissing(_))));
    }

    #[test]
    fn out_of_image_bbox_is_invalid() {
        let rgb = vec![7u8; 4 * 4 * 3];
        let img = ImageRef { rgb: &rgb, width: 4, height: 4 };
        let w = WireDetection { bbox: [0.0, 0.0, 9.0, 2.0], score: 0.9, mask_rle: None };
        assert!(matches!(store(vec![w], &img).detect(&img, "jar"), Err(DetectError::Invalid(_))));
    }
}
