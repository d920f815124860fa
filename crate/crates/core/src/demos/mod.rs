//! Demonstration episodes, keyframe extraction and training samples.

mod augment;
mod io;

pub use augment::{augment, augment_random, AugmentParams, AugmentRanges, MAX_RESAMPLES, MAX_TRANSLATION, MAX_YAW_DEG};
pub use io::{read_episode, read_episodes, write_episode, SCHEMA_VERSION};

use crate::action::{assign_arms, encode_labels, ArmAction, LabelSet, LanguageGoal, Proprio, WorldAction};
use crate::geometry::Vec3;
use crate::rgbd::{deproject, IngestError, RgbdFrame};
use crate::roles::Task;
use crate::voxel::{crop_spec, voxelize, GridSpec, VoxelError, VoxelGrid};
use std::path::PathBuf;

pub const DEFAULT_EPS_V: f64 = 1e-3;
pub const DEFAULT_BUFFER: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("episode has no steps")]
    Empty,
    #[error("invalid keyframe parameters: {0}")]
    InvalidParams(String),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed {path}: {msg}")]
    Json { path: PathBuf, msg: String },
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("episode inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoStep {
    pub frames: Vec<RgbdFrame>,
    pub proprio: Proprio,
    /// rad/s, left arm then right arm.
    pub joint_velocities: [[f64; 7]; 2],
    /// Indexed by [`crate::action::ArmId::index`].
    pub actions: [WorldAction; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoEpisode {
    pub task: Task,
    pub goal: LanguageGoal,
    /// Object of interest, world frame.
    pub object_position: Vec3,
    pub steps: Vec<DemoStep>,
}

impl DemoEpisode {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn gripper_states(&self) -> Vec<[bool; 2]> {
        self.steps.iter().map(|s| s.proprio.gripper_open).collect()
    }

    pub fn velocities(&self) -> Vec<[[f64; 7]; 2]> {
        self.steps.iter().map(|s| s.joint_velocities).collect()
    }
}

/// One supervised sample: the scene before a keyframe and the actions at it.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub step_index: usize,
    pub acting_label: LabelSet,
    pub stabilizing_label: LabelSet,
    /// Cropped grid.
    pub observation: VoxelGrid,
    pub proprio: Proprio,
    pub goal: LanguageGoal,
}

fn check_params(eps_v: f64, buffer: usize) -> Result<(), DemoError> {
    if buffer == 0 {
        return Err(DemoError::InvalidParams("buffer must be at least 1".into()));
    }
    if !(eps_v > 0.0) {
        return Err(DemoError::InvalidParams(format!("eps_v must be positive, got {eps_v}")));
    }
    Ok(())
}

/// Keyframes from per-step gripper states and joint velocities.
///
/// Step `t` is a keyframe when either gripper changed state since `t - 1`,
/// or every joint has been below `eps_v` for the `buffer` steps ending at
/// `t` and no keyframe fell in the `buffer` steps before `t`. The last step
/// always is one.
pub fn keyframes_from_signals(
    gripper_open: &[[bool; 2]],
    velocities: &[[[f64; 7]; 2]],
    eps_v: f64,
    buffer: usize,
) -> Result<Vec<usize>, DemoError> {
    check_params(eps_v, buffer)?;
    if gripper_open.is_empty() {
        return Err(DemoError::Empty);
    }
    if gripper_open.len() != velocities.len() {
        return Err(DemoError::Inconsistent(format!(
            "{} gripper states vs {} velocity rows",
            gripper_open.len(),
            velocities.len()
        )));
    }
    let n = gripper_open.len();
    let mut out = Vec::new();
    let mut still_run = 0usize;
    let mut last: Option<usize> = None;
    for t in 0..n {
        let still = velocities[t].iter().flatten().all(|v| v.abs() < eps_v);
        still_run = if still { still_run + 1 } else { 0 };
        let toggled = t > 0 && gripper_open[t] != gripper_open[t - 1];
        let refractory = last.is_some_and(|k| t - k <= buffer);
        if toggled || (still_run >= buffer && !refractory) || t == n - 1 {
            out.push(t);
            last = Some(t);
        }
    }
    Ok(out)
}

pub fn extract_keyframes(ep: &DemoEpisode, eps_v: f64, buffer: usize) -> Result<Vec<usize>, DemoError> {
    keyframes_from_signals(&ep.gripper_states(), &ep.velocities(), eps_v, buffer)
}

/// Voxelize all cameras of a step under `spec`.
pub fn observe(frames: &[RgbdFrame], spec: &GridSpec) -> VoxelGrid {
    let clouds: Vec<_> = frames.iter().map(deproject).collect();
    voxelize(&clouds, spec)
}

/// Build one sample per keyframe. The observation and proprioception come
/// from the previous keyframe (step 0 for the first); `proprio.timestep` is
/// the keyframe's ordinal. Samples whose action falls outside the crop are
/// dropped with a warning.
pub fn build_training_samples(
    ep: &DemoEpisode,
    keyframes: &[usize],
    base: &GridSpec,
    centroid: &Vec3,
    alpha: f64,
    bin_width: u32,
) -> Result<Vec<Keyframe>, DemoError> {
    if ep.steps.is_empty() {
        return Err(DemoError::Empty);
    }
    if keyframes.windows(2).any(|w| w[0] >= w[1]) || keyframes.last().is_some_and(|&k| k >= ep.horizon()) {
        return Err(DemoError::Inconsistent(format!("keyframes {keyframes:?} invalid for horizon {}", ep.horizon())));
    }
    let spec = crop_spec(base, centroid, alpha)?;
    let (acting, stabilizing) = assign_arms(&ep.goal);
    let mut samples = Vec::with_capacity(keyframes.len());
    let mut obs_step = 0usize;
    for (ordinal, &k) in keyframes.iter().enumerate() {
        let step = &ep.steps[k];
        let label = |arm: crate::action::ArmId| -> Result<LabelSet, String> {
            let a = ArmAction::from_world(&step.actions[arm.index()], &spec, bin_width, arm).map_err(|e| e.to_string())?;
            encode_labels(&a, &spec).map_err(|e| e.to_string())
        };
        match (label(acting), label(stabilizing)) {
            (Ok(acting_label), Ok(stabilizing_label)) => {
                let src = &ep.steps[obs_step];
                samples.push(Keyframe {
                    step_index: k,
                    acting_label,
                    stabilizing_label,
                    observation: observe(&src.frames, &spec),
                    proprio: Proprio { timestep: ordinal as u32, ..src.proprio },
                    goal: ep.goal.clone(),
                });
            }
            (Err(e), _) | (_, Err(e)) => log::warn!("{} keyframe {k}: sample rejected: {e}", ep.task),
        }
        obs_step = k;
    }
    Ok(samples)
}
