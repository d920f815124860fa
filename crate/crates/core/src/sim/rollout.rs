//! Closed-loop toy episodes: detect once, crop, then query both arms per keyframe.

use super::{arm_base, check_success, render_scene, ToyScene, FRONT, REACH};
use crate::action::{assign_arms, ArmId, LanguageGoal};
use crate::demos::observe;
use crate::detector::{locate_object, Detector};
use crate::policy::{act, Observation, Policy};
use crate::roles::{assign_goal, AlphaMode};
use crate::voxel::{crop_spec, GridSpec};
use serde::Serialize;

#[derive(Debug, Clone, Copy)]
pub struct RolloutConfig {
    pub base: GridSpec,
    pub alpha: AlphaMode,
    pub bin_width: u32,
    pub max_keyframes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Success,
    MaxKeyframes,
    OutOfReach { arm: ArmId },
    Detection { message: String },
    Policy { message: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub success: bool,
    pub keyframes: usize,
    pub termination: Termination,
    /// Goal inferred from the detected pose, when detection worked.
    pub goal: Option<LanguageGoal>,
}

/// Run one episode. The object is detected once on the initial front view
/// and the crop stays fixed; each keyframe re-renders the scene, then the
/// stabilizing arm moves before the acting arm.
pub fn run_episode(
    acting: &dyn Policy,
    stabilizing: &dyn Policy,
    mut scene: ToyScene,
    detector: &Detector,
    cfg: &RolloutConfig,
) -> Outcome {
    let task = scene.task();
    let end = |k: usize, termination: Termination, goal: Option<LanguageGoal>| Outcome {
        success: termination == Termination::Success,
        keyframes: k,
        termination,
        goal,
    };
    let views = render_scene(&scene);
    let front = &views.iter().find(|v| v.frame.camera == FRONT).expect("front view rendered").frame;
    let (pose, centroid) = match locate_object(detector, front, task.query()) {
        Ok(x) => x,
        Err(e) => return end(0, Termination::Detection { message: e.to_string() }, None),
    };
    let goal = assign_goal(&pose, task);
    let alpha = cfg.alpha.resolve(task, &pose, &cfg.base);
    let spec = match crop_spec(&cfg.base, &centroid, alpha) {
        Ok(s) => s,
        Err(e) => return end(0, Termination::Detection { message: e.to_string() }, Some(goal)),
    };
    let (acting_arm, stabilizing_arm) = assign_arms(&goal);

    for k in 0..cfg.max_keyframes {
        let frames: Vec<_> = render_scene(&scene).into_iter().map(|r| r.frame).collect();
        let grid = observe(&frames, &spec);
        let proprio = scene.proprio(k as u32);
        for (arm, policy) in [(stabilizing_arm, stabilizing), (acting_arm, acting)] {
            let obs = Observation { grid: grid.clone(), proprio, goal: goal.clone(), arm_id: arm };
            let world = act(policy, &obs).and_then(|a| Ok(a.to_world(&spec)?));
            let w = match world {
                Ok(w) => w,
                Err(e) => return end(k, Termination::Policy { message: e.to_string() }, Some(goal)),
            };
            if (w.pose.position - arm_base(arm)).norm() > REACH {
                return end(k + 1, Termination::OutOfReach { arm }, Some(goal));
            }
            scene.set_arm(arm, w.pose, w.open);
        }
        if check_success(&scene) {
            return end(k + 1, Termination::Success, Some(goal));
        }
    }
    end(cfg.max_keyframes, Termination::MaxKeyframes, Some(goal))
}
