//! Dataset-level steps shared by the command-line tools: scripted dataset
//! generation, training-sample extraction and k-NN model selection.

use crate::action::GoalTag;
use crate::config::{ConfigError, RunConfig};
use crate::demos::{augment_random, build_training_samples, extract_keyframes, read_episodes, write_episode, DemoEpisode, DemoError, Keyframe};
use crate::detector::{locate_object, write_fixture, DetectError, Detector};
use crate::eval::{evaluate_keyframes, EvalError};
use crate::geometry::Vec3;
use crate::policy::{select_checkpoints, KnnModel, PolicyError, Role};
use crate::roles::{alpha_for_task, AlphaMode};
use crate::sim::{generate_episode, SceneError, SceneParams, ToyScene, FRONT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCENES_FILE: &str = "scenes.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error("episode {episode}: {source}")]
    Detect { episode: usize, source: DetectError },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {msg}")]
    Io { path: std::path::PathBuf, msg: String },
}

/// How one dataset episode was set up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub episode: usize,
    pub params: SceneParams,
    pub tag: GoalTag,
    /// Seed of the scripted motion.
    pub motion_seed: u64,
}

/// Crop voxel edge used as the jitter unit.
fn jitter_unit(cfg: &RunConfig) -> f64 {
    let alpha = match cfg.alpha {
        AlphaMode::Fixed { alpha } => alpha,
        _ => alpha_for_task(cfg.task),
    };
    alpha * cfg.grid.span / cfg.grid.dims[0] as f64
}

/// Scene placements for a dataset: even episodes left-acting, odd
/// right-acting. Placements depend only on `(task, seed, index)`; jitter
/// draws from its own stream, so a jittered dataset pairs episode by
/// episode with the unjittered one.
pub fn plan_scenes(cfg: &RunConfig) -> Vec<SceneRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a69_7474_6572);
    let j = cfg.demos.jitter_voxels as i64;
    let unit = jitter_unit(cfg);
    (0..cfg.demos.episodes)
        .map(|k| {
            let tag = if k % 2 == 0 { GoalTag::LeftActing } else { GoalTag::RightActing };
            let mut params = SceneParams::sample(cfg.task, tag, &mut rng);
            if j > 0 {
                let dx = jitter_rng.random_range(-j..=j) as f64 * unit;
                let dy = jitter_rng.random_range(-j..=j) as f64 * unit;
                params.position += Vec3::new(dx, dy, 0.0);
            }
            SceneRecord { episode: k, params, tag, motion_seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64) }
        })
        .collect()
}

/// Generate and write a scripted dataset with its detector fixtures.
pub fn generate_dataset(cfg: &RunConfig, out: &Path) -> Result<Vec<SceneRecord>, PipelineError> {
    let scenes = plan_scenes(cfg);
    let io = |e: std::io::Error| PipelineError::Io { path: out.to_path_buf(), msg: e.to_string() };
    std::fs::create_dir_all(out).map_err(io)?;
    scenes.par_iter().try_for_each(|s| -> Result<(), PipelineError> {
        let g = generate_episode(ToyScene::new(s.params)?, s.tag, cfg.keyframes.buffer, s.motion_seed);
        write_episode(&g.episode, &out.join(format!("episode_{}", s.episode)))?;
        write_fixture(out, &g.fixture.0, &g.fixture.1).map_err(io)?;
        Ok(())
    })?;
    let json = serde_json::to_string_pretty(&scenes).expect("scene records serialize");
    std::fs::write(out.join(SCENES_FILE), json).map_err(io)?;
    Ok(scenes)
}

pub fn read_scenes(dir: &Path) -> Result<Vec<SceneRecord>, PipelineError> {
    let path = dir.join(SCENES_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io { path: path.clone(), msg: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Io { path, msg: e.to_string() })
}

/// Training samples of one episode, cropped around the object detected in
/// the first front image.
pub fn episode_samples(ep: &DemoEpisode, index: usize, detector: &Detector, cfg: &RunConfig) -> Result<Vec<Keyframe>, PipelineError> {
    let base = cfg.grid.base_spec()?;
    let first = ep.steps.first().ok_or(DemoError::Empty)?;
    let front = first
        .frames
        .iter()
        .find(|f| f.camera == FRONT)
        .ok_or_else(|| DemoError::Inconsistent(format!("episode {index} has no {FRONT} camera")))?;
    let (pose, centroid) =
        locate_object(detector, front, ep.task.query()).map_err(|source| PipelineError::Detect { episode: index, source })?;
    let alpha = cfg.alpha.resolve(ep.task, &pose, &base);
    let keyframes = extract_keyframes(ep, cfg.keyframes.eps_v, cfg.keyframes.buffer)?;
    Ok(build_training_samples(ep, &keyframes, &base, &centroid, alpha, cfg.grid.bin_width)?)
}

/// Samples for every episode under `dir`, grouped by episode.
pub fn load_samples(dir: &Path, detector: &Detector, cfg: &RunConfig) -> Result<Vec<Vec<Keyframe>>, PipelineError> {
    let episodes = read_episodes(dir)?;
    if episodes.is_empty() {
        return Err(DemoError::Empty.into());
    }
    episodes.par_iter().enumerate().map(|(i, ep)| episode_samples(ep, i, detector, cfg)).collect()
}

/// Augmented copies of the training samples, used to score candidates.
pub fn validation_set(train: &[Keyframe], cfg: &RunConfig) -> Vec<Keyframe> {
    let copies = cfg.augment.copies.max(1);
    let seed = cfg.seed;
    (0..train.len() * copies)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            augment_random(&train[i / copies], &cfg.augment.ranges, s)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub acting_factor: usize,
    pub stabilizing_factor: usize,
    pub evaluations: usize,
    pub n_train: usize,
    pub n_validation: usize,
}

/// Fit one acting and one stabilizing model per downsample factor and keep
/// the pair chosen by the two-phase search on the validation set.
pub fn fit_models(train: &[Keyframe], cfg: &RunConfig) -> Result<(KnnModel, KnnModel, Selection), PipelineError> {
    let fit = |role| -> Result<Vec<KnnModel>, PolicyError> {
        cfg.knn.factors.par_iter().map(|&f| KnnModel::fit(train, role, f, cfg.knn.weights)).collect()
    };
    let acting = fit(Role::Acting)?;
    let stabilizing = fit(Role::Stabilizing)?;
    let val = validation_set(train, cfg);
    let mut evaluations = 0;
    let mut failure = None;
    let (ia, is) = select_checkpoints(&acting, &stabilizing, |a, s| {
        evaluations += 1;
        match evaluate_keyframes(a, s, &val) {
            Ok(m) => m.score(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let selection = Selection {
        acting_factor: acting[ia].factor,
        stabilizing_factor: stabilizing[is].factor,
        evaluations,
        n_train: train.len(),
        n_validation: val.len(),
    };
    let mut acting = acting;
    let mut stabilizing = stabilizing;
    Ok((acting.swap_remove(ia), stabilizing.swap_remove(is), selection))
}
