//! Ray-cast RGB-D rendering of the toy scene as a set of yawed boxes.

use super::{item_half, GripperState, ToyScene, YawBox};
use crate::action::ArmId;
use crate::detector::rle::Mask;
use crate::geometry::{euler_to_quat, quat_to_euler, CameraIntrinsics, Frame, Pose6D, Vec3};
use crate::rgbd::{quantize_depth, RgbdFrame, DEFAULT_DEPTH_SCALE};
use crate::roles::Task;
use rayon::prelude::*;

pub const FRONT: &str = "front";
pub const LEFT_WRIST: &str = "left_wrist";
pub const RIGHT_WRIST: &str = "right_wrist";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Table,
    Drawer,
    Jar,
    Block,
    Gripper(ArmId),
}

impl Part {
    fn matches_query(self, query: &str) -> bool {
        matches!((self, query), (Part::Drawer, "drawer") | (Part::Jar, "jar") | (Part::Block, "block"))
    }
}

struct Solid {
    bx: YawBox,
    color: [u8; 3],
    part: Part,
}

fn solids(scene: &ToyScene) -> Vec<Solid> {
    let mut out = vec![Solid {
        bx: YawBox { center: Vec3::new(0.5, 0.0, -0.025), half: Vec3::new(0.5, 0.7, 0.025), yaw: 0.0 },
        color: [150, 120, 90],
        part: Part::Table,
    }];
    let task = scene.task();
    if task.is_drawer() {
        let d = scene.drawer();
        let e = scene.extension;
        out.push(Solid { bx: d.cabinet(), color: [60, 90, 160], part: Part::Drawer });
        out.push(Solid { bx: d.tray_floor(e), color: [70, 110, 180], part: Part::Drawer });
        out.push(Solid { bx: d.tray_front(e), color: [70, 110, 180], part: Part::Drawer });
        out.push(Solid { bx: d.handle(e), color: [200, 200, 60], part: Part::Drawer });
    }
    if task == Task::OpenJar {
        let jar = scene.jar();
        out.push(Solid { bx: jar.body(), color: [120, 180, 120], part: Part::Jar });
        out.push(Solid { bx: YawBox { center: scene.lid_center(), half: jar.lid_half, yaw: 0.0 }, color: [200, 60, 60], part: Part::Jar });
    }
    if matches!(task, Task::PutItemInDrawer | Task::HandOverItem) {
        let h = item_half(&scene.params);
        out.push(Solid { bx: YawBox { center: scene.item, half: Vec3::repeat(h), yaw: 0.0 }, color: [220, 120, 30], part: Part::Block });
    }
    for arm in ArmId::BOTH {
        let g = &scene.grippers[arm.index()];
        let yaw = quat_to_euler(&g.pose.orientation)[2].to_radians();
        let shade = if arm == ArmId::Left { 40 } else { 80 };
        out.push(Solid {
            bx: YawBox { center: g.pose.position + Vec3::new(0.0, 0.0, 0.04), half: Vec3::new(0.015, 0.04, 0.03), yaw },
            color: [shade, shade, shade],
            part: Part::Gripper(arm),
        });
    }
    out
}

/// Entry distance along `dir` (not normalized) into `b`, if the ray hits it.
fn hit(b: &YawBox, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let o = b.to_local(origin);
    let d = Vec3::new(c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z);
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > b.half[a] {
                return None;
            }
            continue;
        }
        let ta = (-b.half[a] - o[a]) / d[a];
        let tb = (b.half[a] - o[a]) / d[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 0.0).then_some(t0)
}

/// One rendered camera view plus which part each pixel shows.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub frame: RgbdFrame,
    parts: Vec<Option<Part>>,
}

impl Rendered {
    /// Pixels showing the object a detector query names.
    pub fn mask(&self, query: &str) -> Mask {
        let data = self.parts.iter().map(|p| p.is_some_and(|p| p.matches_query(query))).collect();
        Mask::new(self.frame.width, self.frame.height, data).expect("one part per pixel")
    }
}

/// Overhead camera looking straight down; image x runs along world -x and
/// image y along world +y.
pub fn front_camera() -> (CameraIntrinsics, Pose6D) {
    let k = CameraIntrinsics::new(128.0, 128.0, 64.0, 48.0, 128, 96).expect("valid intrinsics");
    let pose = Pose6D::transform(Frame::World, Frame::Camera, Vec3::new(0.45, 0.0, 1.3), euler_to_quat([0.0, 180.0, 0.0]));
    (k, pose)
}

/// Downward camera riding above a gripper.
pub fn wrist_camera(g: &GripperState) -> (CameraIntrinsics, Pose6D) {
    let k = CameraIntrinsics::new(48.0, 48.0, 32.0, 24.0, 64, 48).expect("valid intrinsics");
    let yaw = quat_to_euler(&g.pose.orientation)[2];
    let pose = Pose6D::transform(
        Frame::World,
        Frame::Camera,
        g.pose.position + Vec3::new(0.0, 0.0, 0.15),
        euler_to_quat([0.0, 0.0, yaw]) * euler_to_quat([0.0, 180.0, 0.0]),
    );
    (k, pose)
}

fn render_view(solids: &[Solid], camera: &str, k: CameraIntrinsics, pose: Pose6D, skip: Option<Part>) -> Rendered {
    let (w, h) = (k.width as usize, k.height as usize);
    let rot = pose.orientation;
    let rows: Vec<Vec<(Option<Part>, [u8; 3], f64)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    // unit z in the camera frame, so the hit distance is the depth
                    let dir_cam = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                    let dir = rot * dir_cam;
                    let mut best: Option<(f64, &Solid)> = None;
                    for s in solids {
                        if Some(s.part) == skip {
                            continue;
                        }
                        if let Some(t) = hit(&s.bx, &pose.position, &dir) {
                            if best.is_none_or(|(bt, _)| t < bt) {
                                best = Some((t, s));
                            }
                        }
                    }
                    match best {
                        Some((t, s)) => (Some(s.part), s.color, quantize_depth(t, DEFAULT_DEPTH_SCALE)),
                        None => (None, [0, 0, 0], 0.0),
                    }
                })
                .collect()
        })
        .collect();
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut parts = Vec::with_capacity(w * h);
    for (part, color, d) in rows.into_iter().flatten() {
        parts.push(part);
        rgb.extend_from_slice(&color);
        depth.push(d);
    }
    let frame = RgbdFrame::new(camera, rgb, depth, k, pose).expect("renderer produces consistent buffers");
    Rendered { frame, parts }
}

/// Front, left-wrist and right-wrist views. Wrist cameras do not see their
/// own gripper.
pub fn render_scene(scene: &ToyScene) -> Vec<Rendered> {
    let s = solids(scene);
    let (k, pose) = front_camera();
    let mut views = vec![render_view(&s, FRONT, k, pose, None)];
    for (arm, name) in [(ArmId::Left, LEFT_WRIST), (ArmId::Right, RIGHT_WRIST)] {
        let (k, pose) = wrist_camera(&scene.grippers[arm.index()]);
        views.push(render_view(&s, name, k, pose, Some(Part::Gripper(arm))));
    }
    views
}
