//! Role assignment from the detected object pose, and crop-size selection.

use crate::action::{GoalTag, LanguageGoal};
use crate::geometry::Vec3;
use crate::voxel::GridSpec;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const MIN_ALPHA: f64 = 0.05;
pub const DEFAULT_PADDING: f64 = 0.05;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("unknown task {0:?} (expected open_drawer, put_item_in_drawer, open_jar or hand_over_item)")]
pub struct UnknownTask(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    OpenDrawer,
    PutItemInDrawer,
    OpenJar,
    HandOverItem,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::OpenDrawer, Task::PutItemInDrawer, Task::OpenJar, Task::HandOverItem];

    pub fn name(self) -> &'static str {
        match self {
            Task::OpenDrawer => "open_drawer",
            Task::PutItemInDrawer => "put_item_in_drawer",
            Task::OpenJar => "open_jar",
            Task::HandOverItem => "hand_over_item",
        }
    }

    pub fn is_drawer(self) -> bool {
        matches!(self, Task::OpenDrawer | Task::PutItemInDrawer)
    }

    /// Detector query naming the object of interest.
    pub fn query(self) -> &'static str {
        match self {
            Task::OpenDrawer | Task::PutItemInDrawer => "drawer",
            Task::OpenJar => "jar",
            Task::HandOverItem => "block",
        }
    }

    pub fn goal(self, tag: GoalTag) -> LanguageGoal {
        let (acting, stabilizing) = match tag {
            GoalTag::LeftActing => ("left", "right"),
            GoalTag::RightActing => ("right", "left"),
        };
        let what = match self {
            Task::OpenDrawer => "open the top drawer",
            Task::PutItemInDrawer => "put the item in the top drawer",
            Task::OpenJar => "unscrew the jar lid",
            Task::HandOverItem => "hand over the block",
        };
        LanguageGoal::new(tag, format!("{what}: {acting} arm acts, {stabilizing} arm stabilizes"))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| UnknownTask(s.to_string()))
    }
}

/// Object pose as recovered from a detection, in the front-camera frame.
///
/// By workspace convention the camera's +y axis points toward the left arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub position: Vec3,
    /// Facing direction in the horizontal plane, degrees in `[-180, 180)`.
    pub yaw_deg: f64,
    /// Bounding dimensions in meters.
    pub extent: Vec3,
    pub label: String,
}

impl ObjectPose {
    pub fn max_extent(&self) -> f64 {
        self.extent.max()
    }
}

/// Drawers facing the left arm (positive yaw) and jars/blocks on the left
/// half (positive y) give the left arm the acting role. Zero goes right.
pub fn assign_goal(obj: &ObjectPose, task: Task) -> LanguageGoal {
    let left = if task.is_drawer() { obj.yaw_deg > 0.0 } else { obj.position.y > 0.0 };
    task.goal(if left { GoalTag::LeftActing } else { GoalTag::RightActing })
}

pub fn alpha_for_task(task: Task) -> f64 {
    match task {
        Task::OpenJar => 0.3,
        Task::OpenDrawer | Task::PutItemInDrawer | Task::HandOverItem => 0.4,
    }
}

/// Crop fraction from the object's largest dimension plus padding on both sides.
pub fn estimate_alpha(obj: &ObjectPose, workspace_span: f64, padding: f64) -> f64 {
    assert!(workspace_span > 0.0, "workspace span must be positive");
    ((obj.max_extent() + 2.0 * padding) / workspace_span).clamp(MIN_ALPHA, 1.0)
}

/// Whether the object's (yaw-rotated) bounding box fits in the crop centered on it.
pub fn validate_alpha(obj: &ObjectPose, alpha: f64, base: &GridSpec) -> bool {
    let (s, c) = obj.yaw_deg.to_radians().sin_cos();
    let footprint = Vec3::new(
        c.abs() * obj.extent.x + s.abs() * obj.extent.y,
        s.abs() * obj.extent.x + c.abs() * obj.extent.y,
        obj.extent.z,
    );
    let crop = base.span * alpha;
    (0..3).all(|a| footprint[a] <= crop[a] + 1e-12)
}

/// How the crop fraction is chosen for an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaMode {
    /// The per-task default.
    #[default]
    Task,
    Fixed { alpha: f64 },
    /// From the detected object's size.
    Estimated { padding: f64 },
}

impl AlphaMode {
    pub fn resolve(&self, task: Task, obj: &ObjectPose, base: &GridSpec) -> f64 {
        match *self {
            AlphaMode::Task => alpha_for_task(task),
            AlphaMode::Fixed { alpha } => alpha,
            AlphaMode::Estimated { padding } => estimate_alpha(obj, base.span.max(), padding),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obj(y: f64, yaw: f64, extent: f64) -> ObjectPose {
        ObjectPose { position: Vec3::new(0.1, y, 1.0), yaw_deg: yaw, extent: Vec3::repeat(extent), label: "x".into() }
    }

    #[test]
    fn facing_and_proximity_rules() {
        assert_eq!(assign_goal(&obj(0.0, 15.0, 0.2), Task::OpenDrawer).tag, GoalTag::LeftActing);
        assert_eq!(assign_goal(&obj(0.0, -15.0, 0.2), Task::OpenDrawer).tag, GoalTag::RightActing);
        assert_eq!(assign_goal(&obj(0.0, 15.0, 0.2), Task::PutItemInDrawer).tag, GoalTag::LeftActing);
        assert_eq!(assign_goal(&obj(-0.2, 0.0, 0.1), Task::OpenJar).tag, GoalTag::RightActing);
        assert_eq!(assign_goal(&obj(0.2, 0.0, 0.1), Task::OpenJar).tag, GoalTag::LeftActing);
        assert_eq!(assign_goal(&obj(0.2, -30.0, 0.1), Task::HandOverItem).tag, GoalTag::LeftActing);
        // ties go to the right arm
        assert_eq!(assign_goal(&obj(0.0, 0.0, 0.1), Task::OpenDrawer).tag, GoalTag::RightActing);
    }

    #[test]
    fn task_alphas() {
        assert_eq!(alpha_for_task(Task::OpenJar), 0.3);
        assert_eq!(alpha_for_task(Task::OpenDrawer), 0.4);
        assert_eq!(alpha_for_task(Task::PutItemInDrawer), 0.4);
        assert_eq!(alpha_for_task(Task::HandOverItem), 0.4);
    }

    #[test]
    fn unknown_task() {
        assert_eq!("open_jar".parse::<Task>(), Ok(Task::OpenJar));
        assert!("stack_cups".parse::<Task>().is_err());
    }

    #[test]
    fn alpha_estimation() {
        let mut o = obj(0.0, 0.0, 0.1);
        o.extent = Vec3::new(0.55, 0.2, 0.3);
        assert!((estimate_alpha(&o, 2.0, 0.05) - 0.325).abs() < 1e-12);
        assert_eq!(estimate_alpha(&obj(0.0, 0.0, 2.5), 2.0, 0.05), 1.0);
        assert_eq!(estimate_alpha(&obj(0.0, 0.0, 0.0), 2.0, 0.0), MIN_ALPHA);
    }

    #[test]
    fn containment() {
        let base = GridSpec::cube(Vec3::zeros(), 2.0, 50).unwrap();
        assert!(validate_alpha(&obj(0.0, 0.0, 0.5), 0.3, &base));
        assert!(!validate_alpha(&obj(0.0, 0.0, 0.7), 0.3, &base));
        assert!(validate_alpha(&obj(0.0, 0.0, 1.2), 1.0, &base));
        // a square footprint turned 45 degrees needs sqrt(2) more room
        assert!(!validate_alpha(&obj(0.0, 45.0, 0.5), 0.3, &base));
    }

    proptest! {
        #[test]
        fn mirror_flips_tag(y in -1.0f64..1.0, yaw in -179.0f64..179.0) {
            prop_assume!(y != 0.0 && yaw != 0.0);
            for task in Task::ALL {
                let a = assign_goal(&obj(y, yaw, 0.1), task);
                let b = assign_goal(&obj(-y, -yaw, 0.1), task);
                prop_assert_eq!(a.tag.flipped(), b.tag);
            }
        }

        #[test]
        fn estimate_is_monotone_and_bounded(e1 in 0.0f64..3.0, e2 in 0.0f64..3.0, p1 in 0.0f64..0.5, p2 in 0.0f64..0.5) {
            let (lo_e, hi_e) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let (lo_p, hi_p) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = estimate_alpha(&obj(0.0, 0.0, lo_e), 2.0, lo_p);
            let b = estimate_alpha(&obj(0.0, 0.0, hi_e), 2.0, lo_p);
            let c = estimate_alpha(&obj(0.0, 0.0, lo_e), 2.0, hi_p);
            prop_assert!(a <= b && a <= c);
            for v in [a, b, c] {
                prop_assert!((MIN_ALPHA..=1.0).contains(&v));
            }
        }
    }
}
