//! Scripted waypoint plans, demo generation and the scene-aware policies.

use super::{gripper_orientation, render_scene, ToyScene, FRONT, PUT_ITEM_EXTENSION};
use crate::action::{assign_arms, ActionMaps, ArmAction, ArmId, GoalTag, WorldAction, DEFAULT_MARGIN};
use crate::demos::{DemoEpisode, DemoStep};
use crate::detector::{fixture_from_mask, FixtureRecord, ImageRef};
use crate::geometry::{euler_to_bins, Frame, Pose6D, Vec3};
use crate::policy::{Observation, Policy, PolicyError};
use crate::roles::Task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Target for both arms, indexed by [`ArmId::index`].
pub type Waypoint = [WorldAction; 2];

fn target(p: Vec3, yaw_deg: f64, open: bool, collide: bool) -> WorldAction {
    WorldAction { pose: Pose6D::new(Frame::World, p, gripper_orientation(yaw_deg)), open, collide }
}

fn waypoint(acting_arm: ArmId, acting: WorldAction, stabilizing: WorldAction) -> Waypoint {
    let mut w = [acting; 2];
    w[acting_arm.other().index()] = stabilizing;
    w
}

fn up(z: f64) -> Vec3 {
    Vec3::new(0.0, 0.0, z)
}

/// Waypoints that solve the scene with the roles of `tag`.
pub fn oracle_plan(scene: &ToyScene, tag: GoalTag) -> Vec<Waypoint> {
    let (a, s) = assign_arms(&scene.task().goal(tag));
    let wp = |act: WorldAction, stab: WorldAction| waypoint(a, act, stab);
    match scene.task() {
        Task::OpenJar => {
            let jar = scene.jar();
            let body = jar.body().center;
            let lid = jar.lid_rest();
            let hold = target(body, 0.0, false, true);
            vec![
                wp(target(lid + up(0.08), 0.0, true, false), hold),
                wp(target(lid, 0.0, false, true), hold),
                wp(target(lid + up(0.10), 90.0, false, false), hold),
            ]
        }
        Task::OpenDrawer => {
            let d = scene.drawer();
            let yaw = d.facing.y.atan2(d.facing.x).to_degrees();
            let h = d.handle(0.0).center;
            let hold = target(d.stabilize_point(), 0.0, false, true);
            vec![
                wp(target(h + d.facing * 0.06, yaw, true, false), hold),
                wp(target(h, yaw, false, true), hold),
                wp(target(h + d.facing * 0.15, yaw, false, false), hold),
            ]
        }
        Task::PutItemInDrawer => {
            let d = scene.drawer();
            let hold = target(d.stabilize_point(), 0.0, false, true);
            let above_tray = d.tray_center(PUT_ITEM_EXTENSION) + up(0.12);
            vec![
                wp(target(scene.item + up(0.08), 0.0, true, false), hold),
                wp(target(scene.item, 0.0, false, true), hold),
                wp(target(above_tray, 0.0, false, false), hold),
                wp(target(above_tray + up(0.04), 0.0, true, false), hold),
            ]
        }
        Task::HandOverItem => {
            let b = scene.item;
            let side = if s == ArmId::Left { 1.0 } else { -1.0 };
            let hp = Vec3::new(scene.params.position.x, 0.0, 0.22);
            let wait = target(hp + Vec3::new(0.0, side * 0.08, 0.0), 0.0, true, false);
            let take = target(hp, 0.0, false, true);
            let carry = target(hp, 0.0, false, false);
            vec![
                wp(target(b + up(0.08), 0.0, true, false), wait),
                wp(target(b, 0.0, false, true), wait),
                wp(carry, wait),
                wp(carry, take),
                wp(target(hp + Vec3::new(0.0, -side * 0.10, 0.05), 0.0, true, false), take),
            ]
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedEpisode {
    pub episode: DemoEpisode,
    pub plan: Vec<Waypoint>,
    /// Detector fixture for the step-0 front image.
    pub fixture: (String, FixtureRecord),
}

fn record_step(scene: &ToyScene, t: usize, moving: bool, collide: [bool; 2], rng: &mut ChaCha8Rng) -> DemoStep {
    let frames = render_scene(scene).into_iter().map(|r| r.frame).collect();
    let mut joint_velocities = [[0.0; 7]; 2];
    if moving {
        for v in joint_velocities.iter_mut().flatten() {
            let mag: f64 = rng.random_range(0.05..0.3);
            *v = if rng.random_bool(0.5) { mag } else { -mag };
        }
    }
    let actions = [0, 1].map(|i| {
        let g = &scene.grippers[i];
        WorldAction { pose: g.pose, open: g.open, collide: collide[i] }
    });
    DemoStep { frames, proprio: scene.proprio(t as u32), joint_velocities, actions }
}

/// Script one demonstration: for each waypoint a few interpolated motion
/// steps, then `buffer` stationary steps at the target (one if it is the
/// final, gripper-toggling waypoint). Gripper changes land on the first
/// stationary step, stabilizing arm first.
pub fn generate_episode(scene: ToyScene, tag: GoalTag, buffer: usize, seed: u64) -> GeneratedEpisode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = scene.task();
    let plan = oracle_plan(&scene, tag);
    let goal = task.goal(tag);
    let (acting, stabilizing) = assign_arms(&goal);

    let views = render_scene(&scene);
    let front = views.iter().find(|v| v.frame.camera == FRONT).expect("front view rendered");
    let image_id = ImageRef::from_frame(&front.frame).image_id();
    let fixture = (image_id, fixture_from_mask(&front.mask(task.query()), task.query(), 0.99));

    let mut scene = scene;
    let mut steps = vec![record_step(&scene, 0, true, [false; 2], &mut rng)];
    for (i, w) in plan.iter().enumerate() {
        let start = scene.grippers.map(|g| g.pose);
        let motion: usize = rng.random_range(3..=5);
        for j in 1..=motion {
            let frac = j as f64 / (motion + 1) as f64;
            for arm in [stabilizing, acting] {
                let (a, b) = (&start[arm.index()], &w[arm.index()].pose);
                let pose = Pose6D::new(
                    Frame::World,
                    a.position.lerp(&b.position, frac),
                    a.orientation.slerp(&b.orientation, frac),
                );
                let open = scene.grippers[arm.index()].open;
                scene.set_arm(arm, pose, open);
            }
            steps.push(record_step(&scene, steps.len(), true, [false; 2], &mut rng));
        }
        let toggles = ArmId::BOTH.iter().any(|a| scene.grippers[a.index()].open != w[a.index()].open);
        for arm in [stabilizing, acting] {
            scene.set_arm(arm, w[arm.index()].pose, w[arm.index()].open);
        }
        let hold = if i + 1 == plan.len() && toggles { 1 } else { buffer };
        let collide = [w[0].collide, w[1].collide];
        for _ in 0..hold {
            steps.push(record_step(&scene, steps.len(), false, collide, &mut rng));
        }
    }
    let object_position = scene.params.position;
    GeneratedEpisode { episode: DemoEpisode { task, goal, object_position, steps }, plan, fixture }
}

/// Replays a plan by keyframe counter (`proprio.timestep`), holding the last
/// waypoint once the plan runs out.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub plan: Vec<Waypoint>,
    pub bin_width: u32,
}

impl Policy for OraclePolicy {
    fn predict(&self, obs: &Observation) -> Result<ActionMaps, PolicyError> {
        if self.plan.is_empty() {
            return Err(PolicyError::Empty);
        }
        let k = (obs.proprio.timestep as usize).min(self.plan.len() - 1);
        let w = &self.plan[k][obs.arm_id.index()];
        let a = ArmAction::from_world(w, &obs.grid.spec, self.bin_width, obs.arm_id)?;
        Ok(ActionMaps::delta_logits(&a, obs.grid.spec.dims, DEFAULT_MARGIN)?)
    }
}

/// Keeps the gripper where it is (snapped into the grid) with its current
/// open state and the home orientation.
#[derive(Debug, Clone, Copy)]
pub struct NullPolicy {
    pub bin_width: u32,
}

impl Policy for NullPolicy {
    fn predict(&self, obs: &Observation) -> Result<ActionMaps, PolicyError> {
        let i = obs.arm_id.index();
        let f = &obs.proprio.finger_positions;
        let mid = (Vec3::from(f[2 * i]) + Vec3::from(f[2 * i + 1])) / 2.0;
        let spec = &obs.grid.spec;
        let raw = spec.world_to_voxel_unbounded(&mid);
        let trans_voxel = [0, 1, 2].map(|a| raw[a].clamp(0, spec.dims[a] as i64 - 1) as usize);
        let rot_bins = euler_to_bins([182.5, 2.5, 2.5], self.bin_width).map_err(crate::action::ActionError::from)?;
        let a = ArmAction { trans_voxel, rot_bins, open: obs.proprio.gripper_open[i], collide: false, arm_id: obs.arm_id };
        Ok(ActionMaps::delta_logits(&a, spec.dims, DEFAULT_MARGIN)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::{extract_keyframes, DEFAULT_EPS_V};
    use crate::sim::{check_success, SceneParams};

    fn scene(task: Task, tag: GoalTag, seed: u64) -> ToyScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ToyScene::new(SceneParams::sample(task, tag, &mut rng)).unwrap()
    }

    #[test]
    fn plans_solve_their_scenes() {
        for task in Task::ALL {
            for tag in [GoalTag::LeftActing, GoalTag::RightActing] {
                for seed in 0..5 {
                    let mut s = scene(task, tag, seed);
                    let (acting, stab) = assign_arms(&task.goal(tag));
                    let plan = oracle_plan(&s, tag);
                    for (i, w) in plan.iter().enumerate() {
                        assert!(!check_success(&s), "{task} solved early at waypoint {i}");
                        for arm in [stab, acting] {
                            s.set_arm(arm, w[arm.index()].pose, w[arm.index()].open);
                        }
                    }
                    assert!(check_success(&s), "{task} {tag:?} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn keyframes_land_on_waypoints() {
        for task in Task::ALL {
            let g = generate_episode(scene(task, GoalTag::RightActing, 11), GoalTag::RightActing, 4, 5);
            let k = extract_keyframes(&g.episode, DEFAULT_EPS_V, 4).unwrap();
            assert_eq!(k.len(), g.plan.len(), "{task}: {k:?}");
            for (ki, w) in k.iter().zip(&g.plan) {
                let step = &g.episode.steps[*ki];
                for arm in 0..2 {
                    assert_eq!(step.actions[arm].pose, w[arm].pose);
                    assert_eq!(step.actions[arm].open, w[arm].open);
                }
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_episode(scene(Task::OpenJar, GoalTag::LeftActing, 2), GoalTag::LeftActing, 4, 9);
        let b = generate_episode(scene(Task::OpenJar, GoalTag::LeftActing, 2), GoalTag::LeftActing, 4, 9);
        assert_eq!(a.episode, b.episode);
        assert_eq!(a.fixture, b.fixture);
    }
}
