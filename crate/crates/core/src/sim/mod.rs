//! A kinematic tabletop world for generating demos and running rollouts.
//!
//! World frame: z up, table top at z = 0, left arm base at y = +0.5 and
//! right arm base at y = -0.5. Objects sit around x = 0.45 in front of the
//! arms. Grippers teleport to commanded poses; closing near a graspable part
//! attaches it, opening releases it.

mod plan;
mod render;
mod rollout;

pub use plan::{generate_episode, oracle_plan, GeneratedEpisode, NullPolicy, OraclePolicy, Waypoint};
pub use render::{front_camera, render_scene, wrist_camera, Rendered, FRONT, LEFT_WRIST, RIGHT_WRIST};
pub use rollout::{run_episode, Outcome, RolloutConfig, Termination};

use crate::action::{ArmId, GoalTag, Proprio};
use crate::geometry::{euler_to_quat, quat_to_euler, Frame, Pose6D, Vec3};
use crate::roles::Task;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_GRIPPER_WIDTH: f64 = 0.1;
pub const GRASP_RADIUS: f64 = 0.03;
/// Proximity that counts as stabilizing the drawer top.
pub const STABILIZE_RADIUS: f64 = 0.02;
pub const DRAWER_SUCCESS_EXTENSION: f64 = 0.12;
pub const MAX_EXTENSION: f64 = 0.25;
/// Initial drawer extension for the put-item task.
pub const PUT_ITEM_EXTENSION: f64 = 0.2;
pub const JAR_GRASP_RANGE: (f64, f64) = (0.5, 0.93);
pub const REACH: f64 = 1.2;
pub const MAX_DRAWER_ROTATION: f64 = PI / 8.0;

pub fn arm_base(arm: ArmId) -> Vec3 {
    match arm {
        ArmId::Left => Vec3::new(0.0, 0.5, 0.0),
        ArmId::Right => Vec3::new(0.0, -0.5, 0.0),
    }
}

/// Top-down gripper orientation with yaw snapped to the center of its 5° bin.
pub fn gripper_orientation(yaw_deg: f64) -> nalgebra::UnitQuaternion<f64> {
    let yaw = (yaw_deg / 5.0).floor() * 5.0 + 2.5;
    euler_to_quat([182.5, 2.5, yaw])
}

pub fn home_pose(arm: ArmId) -> Pose6D {
    let y = match arm {
        ArmId::Left => 0.3,
        ArmId::Right => -0.3,
    };
    Pose6D::new(Frame::World, Vec3::new(0.3, y, 0.4), gripper_orientation(0.0))
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("scale {0} outside [0.9, 1.0]")]
    Scale(f64),
    #[error("drawer rotation {0} rad outside ±π/8")]
    Rotation(f64),
}

/// Randomized object placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub task: Task,
    /// Object base center on the table.
    pub position: Vec3,
    /// Drawer rotation; positive turns the front toward the left arm.
    pub rotation: f64,
    pub scale: f64,
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(0.9..=1.0).contains(&self.scale) {
            return Err(SceneError::Scale(self.scale));
        }
        if !(self.rotation.abs() <= MAX_DRAWER_ROTATION) {
            return Err(SceneError::Rotation(self.rotation));
        }
        Ok(())
    }

    /// A placement whose role assignment comes out as `tag`.
    pub fn sample<R: Rng>(task: Task, tag: GoalTag, rng: &mut R) -> Self {
        let sign = match tag {
            GoalTag::LeftActing => 1.0,
            GoalTag::RightActing => -1.0,
        };
        let scale = rng.random_range(0.9..=1.0);
        let x = rng.random_range(0.40..=0.50);
        if task.is_drawer() {
            // keep clear of zero so the facing direction is unambiguous
            let rotation = sign * rng.random_range(PI / 32.0..=MAX_DRAWER_ROTATION);
            let y = rng.random_range(-0.1..=0.1);
            Self { task, position: Vec3::new(x, y, 0.0), rotation, scale }
        } else {
            let y = sign * rng.random_range(0.05..=0.15);
            Self { task, position: Vec3::new(x, y, 0.0), rotation: 0.0, scale }
        }
    }

    /// Tag the placement implies under the role rules.
    pub fn expected_tag(&self) -> GoalTag {
        let left = if self.task.is_drawer() { self.rotation > 0.0 } else { self.position.y > 0.0 };
        if left {
            GoalTag::LeftActing
        } else {
            GoalTag::RightActing
        }
    }
}

/// An oriented box (yaw only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawBox {
    pub center: Vec3,
    pub half: Vec3,
    pub yaw: f64,
}

impl YawBox {
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|a| l[a].abs() <= self.half[a])
    }
}

/// Drawer cabinet dimensions and derived parts.
#[derive(Debug, Clone, Copy)]
pub struct DrawerGeometry {
    pub base: Vec3,
    /// Unit vector out of the drawer front.
    pub facing: Vec3,
    pub yaw: f64,
    pub depth: f64,
    pub width: f64,
    pub height: f64,
    pub tray_depth: f64,
    pub tray_width: f64,
    pub tray_height: f64,
    pub tray_bottom: f64,
}

impl DrawerGeometry {
    pub fn new(p: &SceneParams) -> Self {
        let s = p.scale;
        let yaw = PI - p.rotation;
        let depth = 0.30 * s;
        let height = 0.25 * s;
        Self {
            base: p.position,
            facing: Vec3::new(yaw.cos(), yaw.sin(), 0.0),
            yaw,
            depth,
            width: 0.20 * s,
            height,
            tray_depth: depth - 0.02,
            tray_width: 0.20 * s - 0.04,
            tray_height: 0.07 * s,
            tray_bottom: height - 0.10 * s,
        }
    }

    pub fn cabinet(&self) -> YawBox {
        YawBox {
            center: self.base + Vec3::new(0.0, 0.0, self.height / 2.0),
            half: Vec3::new(self.depth / 2.0, self.width / 2.0, self.height / 2.0),
            yaw: self.yaw,
        }
    }

    pub fn tray_center(&self, extension: f64) -> Vec3 {
        let along = (self.depth - self.tray_depth) / 2.0 + extension;
        self.base + self.facing * along + Vec3::new(0.0, 0.0, self.tray_bottom + self.tray_height / 2.0)
    }

    /// Interior of the top drawer.
    pub fn tray_volume(&self, extension: f64) -> YawBox {
        YawBox {
            center: self.tray_center(extension),
            half: Vec3::new(self.tray_depth / 2.0, self.tray_width / 2.0, self.tray_height / 2.0),
            yaw: self.yaw,
        }
    }

    pub fn tray_floor(&self, extension: f64) -> YawBox {
        let c = self.tray_center(extension);
        YawBox {
            center: Vec3::new(c.x, c.y, self.tray_bottom + 0.005),
            half: Vec3::new(self.tray_depth / 2.0, self.tray_width / 2.0, 0.005),
            yaw: self.yaw,
        }
    }

    pub fn tray_front(&self, extension: f64) -> YawBox {
        let c = self.tray_center(extension) + self.facing * (self.tray_depth / 2.0 - 0.005);
        YawBox { center: c, half: Vec3::new(0.005, self.tray_width / 2.0, self.tray_height / 2.0), yaw: self.yaw }
    }

    pub fn handle(&self, extension: f64) -> YawBox {
        let c = self.tray_center(extension) + self.facing * (self.tray_depth / 2.0 + 0.015);
        YawBox { center: c, half: Vec3::new(0.01, 0.04, 0.01), yaw: self.yaw }
    }

    /// Where a stabilizing gripper rests on the cabinet top.
    pub fn stabilize_point(&self) -> Vec3 {
        self.base + self.facing * (0.2 * self.depth) + Vec3::new(0.0, 0.0, self.height)
    }

    /// Resting place of the put-item block on the back of the cabinet top.
    pub fn item_rest(&self, item_half: f64) -> Vec3 {
        self.base - self.facing * (0.25 * self.depth) + Vec3::new(0.0, 0.0, self.height + item_half)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JarGeometry {
    pub base: Vec3,
    pub body_half: Vec3,
    pub lid_half: Vec3,
}

impl JarGeometry {
    pub fn new(p: &SceneParams) -> Self {
        let s = p.scale;
        Self { base: p.position, body_half: Vec3::new(0.04, 0.04, 0.06) * s, lid_half: Vec3::new(0.0425, 0.0425, 0.015) * s }
    }

    pub fn body(&self) -> YawBox {
        YawBox { center: self.base + Vec3::new(0.0, 0.0, self.body_half.z), half: self.body_half, yaw: 0.0 }
    }

    pub fn lid_rest(&self) -> Vec3 {
        self.base + Vec3::new(0.0, 0.0, 2.0 * self.body_half.z + self.lid_half.z)
    }

    pub fn lid_height(&self) -> f64 {
        2.0 * self.lid_half.z
    }

    /// Within grasping reach of the body's side.
    pub fn at_body(&self, p: &Vec3) -> bool {
        let d = p - self.base;
        (d.x * d.x + d.y * d.y).sqrt() <= GRASP_RADIUS && p.z >= 0.0 && p.z <= 2.0 * self.body_half.z
    }
}

pub fn item_half(p: &SceneParams) -> f64 {
    0.02 * p.scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Held {
    JarBody,
    Lid { offset: Vec3 },
    Tray { grasp: Vec3, extension: f64 },
    Item { offset: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperState {
    pub pose: Pose6D,
    pub open: bool,
    /// Finger opening as a fraction of the maximum width.
    pub amount: f64,
    pub held: Option<Held>,
}

impl GripperState {
    pub fn at_home(arm: ArmId) -> Self {
        Self { pose: home_pose(arm), open: true, amount: 1.0, held: None }
    }

    /// Left and right fingertip positions.
    pub fn fingers(&self) -> [Vec3; 2] {
        let yaw = quat_to_euler(&self.pose.orientation)[2].to_radians();
        let half = self.amount * MAX_GRIPPER_WIDTH / 2.0;
        let lateral = Vec3::new(-yaw.sin(), yaw.cos(), 0.0) * half;
        [self.pose.position + lateral, self.pose.position - lateral]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub params: SceneParams,
    pub grippers: [GripperState; 2],
    pub extension: f64,
    pub lid_offset: Vec3,
    /// Block center (put-item and hand-over tasks).
    pub item: Vec3,
    pub first_picker: Option<ArmId>,
}

impl ToyScene {
    pub fn new(params: SceneParams) -> Result<Self, SceneError> {
        params.validate()?;
        let h = item_half(&params);
        let (extension, item) = match params.task {
            Task::PutItemInDrawer => (PUT_ITEM_EXTENSION, DrawerGeometry::new(&params).item_rest(h)),
            Task::HandOverItem => (0.0, params.position + Vec3::new(0.0, 0.0, h)),
            _ => (0.0, Vec3::zeros()),
        };
        Ok(Self {
            params,
            grippers: [GripperState::at_home(ArmId::Left), GripperState::at_home(ArmId::Right)],
            extension,
            lid_offset: Vec3::zeros(),
            item,
            first_picker: None,
        })
    }

    pub fn task(&self) -> Task {
        self.params.task
    }

    pub fn drawer(&self) -> DrawerGeometry {
        DrawerGeometry::new(&self.params)
    }

    pub fn jar(&self) -> JarGeometry {
        JarGeometry::new(&self.params)
    }

    pub fn lid_center(&self) -> Vec3 {
        self.jar().lid_rest() + self.lid_offset
    }

    pub fn holders(&self) -> Vec<ArmId> {
        ArmId::BOTH.into_iter().filter(|a| matches!(self.grippers[a.index()].held, Some(Held::Item { .. }))).collect()
    }

    /// Proprioception with `timestep` filled in by the caller.
    pub fn proprio(&self, timestep: u32) -> Proprio {
        let [l, r] = &self.grippers;
        let [l0, l1] = l.fingers();
        let [r0, r1] = r.fingers();
        Proprio {
            gripper_open: [l.open, r.open],
            finger_positions: [l0.into(), l1.into(), r0.into(), r1.into()],
            timestep,
        }
    }

    /// Move one gripper. An opening gripper lets go before it moves; a
    /// closing one grasps at its destination.
    pub fn set_arm(&mut self, arm: ArmId, pose: Pose6D, open: bool) {
        let i = arm.index();
        let was_open = self.grippers[i].open;
        if open && !was_open {
            self.release(arm);
        }
        self.grippers[i].pose = pose;
        if let Some(held) = self.grippers[i].held {
            self.carry(held, &pose.position);
        }
        if !open && was_open {
            self.grasp(arm);
        }
        self.grippers[i].open = open;
    }

    fn carry(&mut self, held: Held, p: &Vec3) {
        match held {
            Held::JarBody => {}
            Held::Lid { offset } => self.lid_offset = p + offset - self.jar().lid_rest(),
            Held::Tray { grasp, extension } => {
                let f = self.drawer().facing;
                self.extension = (extension + (p - grasp).dot(&f)).clamp(0.0, MAX_EXTENSION);
            }
            Held::Item { offset } => self.item = p + offset,
        }
    }

    fn grasp(&mut self, arm: ArmId) {
        let p = self.grippers[arm.index()].pose.position;
        let task = self.task();
        let mut held = None;
        let mut width = 0.0;
        match task {
            Task::OpenJar => {
                let jar = self.jar();
                let lid = self.lid_center();
                if (p - lid).norm() <= GRASP_RADIUS {
                    held = Some(Held::Lid { offset: lid - p });
                    width = 2.0 * jar.lid_half.x;
                } else if jar.at_body(&p) {
                    held = Some(Held::JarBody);
                    width = 2.0 * jar.body_half.x;
                }
            }
            Task::OpenDrawer | Task::PutItemInDrawer => {
                let handle = self.drawer().handle(self.extension).center;
                if task == Task::PutItemInDrawer && (p - self.item).norm() <= GRASP_RADIUS {
                    held = Some(Held::Item { offset: self.item - p });
                    width = 2.0 * item_half(&self.params);
                } else if (p - handle).norm() <= GRASP_RADIUS {
                    held = Some(Held::Tray { grasp: p, extension: self.extension });
                    width = 0.02;
                }
            }
            Task::HandOverItem => {
                if (p - self.item).norm() <= GRASP_RADIUS {
                    held = Some(Held::Item { offset: self.item - p });
                    width = 2.0 * item_half(&self.params);
                    self.first_picker.get_or_insert(arm);
                }
            }
        }
        let g = &mut self.grippers[arm.index()];
        g.held = held;
        g.amount = width / MAX_GRIPPER_WIDTH;
    }

    fn release(&mut self, arm: ArmId) {
        let g = &mut self.grippers[arm.index()];
        let held = g.held.take();
        g.amount = 1.0;
        if matches!(held, Some(Held::Item { .. })) && self.holders().is_empty() {
            self.item = self.drop_point(&self.item);
        }
    }

    /// Where a released block comes to rest.
    fn drop_point(&self, p: &Vec3) -> Vec3 {
        let h = item_half(&self.params);
        let mut support = 0.0;
        if self.task().is_drawer() {
            let d = self.drawer();
            let floor = d.tray_floor(self.extension);
            let above = |b: &YawBox| {
                let l = b.to_local(p);
                l.x.abs() <= b.half.x && l.y.abs() <= b.half.y && p.z >= b.center.z
            };
            let cab = d.cabinet();
            if above(&floor) && !above(&cab) {
                support = floor.center.z + floor.half.z;
            } else if above(&cab) {
                support = d.height;
            }
        }
        Vec3::new(p.x, p.y, support + h)
    }
}

/// Whether the scene satisfies the task's success condition.
pub fn check_success(scene: &ToyScene) -> bool {
    let near_top = |s: &ToyScene| {
        let t = s.drawer().stabilize_point();
        s.grippers.iter().any(|g| (g.pose.position - t).norm() <= STABILIZE_RADIUS)
    };
    match scene.task() {
        Task::OpenJar => {
            let jar = scene.jar();
            let firm = scene.grippers.iter().any(|g| {
                !g.open && jar.at_body(&g.pose.position) && g.amount > JAR_GRASP_RANGE.0 && g.amount < JAR_GRASP_RANGE.1
            });
            firm && scene.lid_offset.z >= jar.lid_height()
        }
        Task::OpenDrawer => near_top(scene) && scene.extension >= DRAWER_SUCCESS_EXTENSION,
        Task::PutItemInDrawer => {
            let inside = scene.drawer().tray_volume(scene.extension).contains(&scene.item);
            inside && near_top(scene)
        }
        Task::HandOverItem => match scene.first_picker {
            Some(giver) => scene.holders() == vec![giver.other()],
            None => false,
        },
    }
}
