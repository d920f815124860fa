//! On-disk episode layout.
//!
//! ```text
//! episode_<k>/meta.json
//! episode_<k>/steps/<t>/{rgb,depth,calib}_<camera>.{png,png,json}
//! episode_<k>/steps/<t>/{proprio,velocities,actions}.json
//! ```

use super::{DemoEpisode, DemoError, DemoStep};
use crate::action::{LanguageGoal, Proprio, WorldAction};
use crate::geometry::{Frame, PoseRecord, Vec3};
use crate::rgbd::{load_frame, save_frame, FramePaths, DEFAULT_DEPTH_SCALE};
use crate::roles::Task;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    schema_version: u32,
    task: Task,
    goal: LanguageGoal,
    horizon: usize,
    object_position: [f64; 3],
    cameras: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ArmRecord {
    #[serde(flatten)]
    pose: PoseRecord,
    open: bool,
    collide: bool,
}

#[derive(Serialize, Deserialize)]
struct ActionsRecord {
    left: ArmRecord,
    right: ArmRecord,
}

impl ArmRecord {
    fn from_action(a: &WorldAction) -> Self {
        Self { pose: PoseRecord::from_pose(&a.pose), open: a.open, collide: a.collide }
    }

    fn to_action(&self, path: &Path) -> Result<WorldAction, DemoError> {
        let pose = self
            .pose
            .to_pose(Frame::World, Frame::World)
            .map_err(|e| DemoError::Json { path: path.to_path_buf(), msg: e.to_string() })?;
        Ok(WorldAction { pose, open: self.open, collide: self.collide })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DemoError> {
    let text = serde_json::to_string_pretty(value).expect("episode records serialize");
    fs::write(path, text).map_err(|source| DemoError::Io { path: path.to_path_buf(), source })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DemoError> {
    let text = fs::read_to_string(path).map_err(|source| DemoError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| DemoError::Json { path: path.to_path_buf(), msg: e.to_string() })
}

fn step_dir(dir: &Path, t: usize) -> PathBuf {
    dir.join("steps").join(t.to_string())
}

pub fn write_episode(ep: &DemoEpisode, dir: &Path) -> Result<(), DemoError> {
    if ep.steps.is_empty() {
        return Err(DemoError::Empty);
    }
    let cameras: Vec<String> = ep.steps[0].frames.iter().map(|f| f.camera.clone()).collect();
    for (t, step) in ep.steps.iter().enumerate() {
        let names: Vec<&str> = step.frames.iter().map(|f| f.camera.as_str()).collect();
        if names != cameras.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(DemoError::Inconsistent(format!("step {t} cameras {names:?} differ from {cameras:?}")));
        }
    }
    fs::create_dir_all(dir).map_err(|source| DemoError::Io { path: dir.to_path_buf(), source })?;
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        task: ep.task,
        goal: ep.goal.clone(),
        horizon: ep.horizon(),
        object_position: ep.object_position.into(),
        cameras,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    ep.steps.par_iter().enumerate().try_for_each(|(t, step)| {
        let sd = step_dir(dir, t);
        fs::create_dir_all(&sd).map_err(|source| DemoError::Io { path: sd.clone(), source })?;
        for f in &step.frames {
            save_frame(f, &sd, DEFAULT_DEPTH_SCALE)?;
        }
        write_json(&sd.join("proprio.json"), &step.proprio)?;
        write_json(&sd.join("velocities.json"), &step.joint_velocities)?;
        let actions =
            ActionsRecord { left: ArmRecord::from_action(&step.actions[0]), right: ArmRecord::from_action(&step.actions[1]) };
        write_json(&sd.join("actions.json"), &actions)
    })
}

pub fn read_episode(dir: &Path) -> Result<DemoEpisode, DemoError> {
    let meta_path = dir.join("meta.json");
    let raw: serde_json::Value = read_json(&meta_path)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(DemoError::SchemaVersion { path: meta_path, found, expected: SCHEMA_VERSION });
    }
    let meta: Meta =
        serde_json::from_value(raw).map_err(|e| DemoError::Json { path: meta_path.clone(), msg: e.to_string() })?;
    if meta.horizon == 0 {
        return Err(DemoError::Empty);
    }
    let steps = (0..meta.horizon)
        .into_par_iter()
        .map(|t| {
            let sd = step_dir(dir, t);
            let frames = meta
                .cameras
                .iter()
                .map(|cam| load_frame(&FramePaths::in_dir(&sd, cam), None))
                .collect::<Result<Vec<_>, _>>()?;
            let proprio: Proprio = read_json(&sd.join("proprio.json"))?;
            let joint_velocities: [[f64; 7]; 2] = read_json(&sd.join("velocities.json"))?;
            let actions_path = sd.join("actions.json");
            let rec: ActionsRecord = read_json(&actions_path)?;
            let actions = [rec.left.to_action(&actions_path)?, rec.right.to_action(&actions_path)?];
            Ok(DemoStep { frames, proprio, joint_velocities, actions })
        })
        .collect::<Result<Vec<_>, DemoError>>()?;
    Ok(DemoEpisode { task: meta.task, goal: meta.goal, object_position: Vec3::from(meta.object_position), steps })
}

/// `episode_*` subdirectories of `root`, sorted by index, loaded in parallel.
pub fn read_episodes(root: &Path) -> Result<Vec<DemoEpisode>, DemoError> {
    let entries = fs::read_dir(root).map_err(|source| DemoError::Io { path: root.to_path_buf(), source })?;
    let mut dirs: Vec<(u64, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let k = name.strip_prefix("episode_")?.parse().ok()?;
            Some((k, e.path()))
        })
        .collect();
    dirs.sort();
    dirs.par_iter().map(|(_, d)| read_episode(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::GoalTag;
    use crate::geometry::{euler_to_quat, CameraIntrinsics, Pose6D};
    use crate::rgbd::{quantize_depth, RgbdFrame};

    fn frame(seed: u8) -> RgbdFrame {
        let k = CameraIntrinsics::new(20.0, 20.0, 4.0, 3.0, 8, 6).unwrap();
        let rgb = (0..8 * 6 * 3).map(|i| (i as u8).wrapping_mul(seed)).collect();
        let depth = (0..48).map(|i| if i % 7 == 0 { 0.0 } else { quantize_depth(0.3 + i as f64 * 0.0137, 1e-3) }).collect();
        let ext = Pose6D::transform(Frame::World, Frame::Camera, Vec3::new(0.45, 0.0, 1.3), euler_to_quat([180.0, 0.0, 90.0]));
        RgbdFrame::new("front", rgb, depth, k, ext).unwrap()
    }

    pub(crate) fn synthetic_episode() -> DemoEpisode {
        let steps = (0..3)
            .map(|t| DemoStep {
                frames: vec![frame(t as u8 + 3)],
                proprio: Proprio {
                    gripper_open: [t != 1, true],
                    finger_positions: [[0.1 * t as f64, -0.2, 1.0 / 3.0]; 4],
                    timestep: t,
                },
                joint_velocities: [[0.123456789 * t as f64; 7], [-1e-7; 7]],
                actions: [
                    WorldAction {
                        pose: Pose6D::new(Frame::World, Vec3::new(0.4, 0.1, 0.2 + t as f64 / 7.0), euler_to_quat([182.5, 2.5, 47.5])),
                        open: true,
                        collide: false,
                    },
                    WorldAction {
                        pose: Pose6D::new(Frame::World, Vec3::new(0.4, -0.1, 0.3), euler_to_quat([177.5, -2.5, -12.5])),
                        open: t == 2,
                        collide: true,
                    },
                ],
            })
            .collect();
        DemoEpisode {
            task: Task::OpenDrawer,
            goal: Task::OpenDrawer.goal(GoalTag::LeftActing),
            object_position: Vec3::new(0.45, 0.05, 0.1),
            steps,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ep = synthetic_episode();
        write_episode(&ep, &dir.path().join("episode_0")).unwrap();
        let back = read_episode(&dir.path().join("episode_0")).unwrap();
        assert_eq!(back, ep);
    }

    #[test]
    fn schema_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ep = synthetic_episode();
        write_episode(&ep, dir.path()).unwrap();
        let meta = dir.path().join("meta.json");
        let text = fs::read_to_string(&meta).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&meta, text).unwrap();
        assert!(matches!(read_episode(dir.path()), Err(DemoError::SchemaVersion { found: 7, .. })));
    }

    #[test]
    fn missing_step_file() {
        let dir = tempfile::tempdir().unwrap();
        write_episode(&synthetic_episode(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("steps/1/velocities.json")).unwrap();
        assert!(matches!(read_episode(dir.path()), Err(DemoError::Io { .. })));
    }

    #[test]
    fn episodes_load_in_index_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut ep = synthetic_episode();
        for k in [10, 2, 1] {
            ep.object_position.x = k as f64;
            write_episode(&ep, &dir.path().join(format!("episode_{k}"))).unwrap();
        }
        let xs: Vec<f64> = read_episodes(dir.path()).unwrap().iter().map(|e| e.object_position.x).collect();
        assert_eq!(xs, vec![1.0, 2.0, 10.0]);
    }
}
