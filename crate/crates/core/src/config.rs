//! Run configuration shared by every command, read from TOML.

use crate::demos::{AugmentRanges, DEFAULT_BUFFER, DEFAULT_EPS_V};
use crate::geometry::{bins_per_axis, Vec3};
use crate::policy::KnnWeights;
use crate::roles::{AlphaMode, Task};
use crate::sim::RolloutConfig;
use crate::voxel::GridSpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Min corner of the base workspace, world frame.
    pub origin: [f64; 3],
    /// Edge length of the cubic base workspace, meters.
    pub span: f64,
    pub dims: [usize; 3],
    /// Rotation bin width, degrees.
    pub bin_width: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { origin: [-0.5, -1.0, -0.5], span: 2.0, dims: [50; 3], bin_width: 5 }
    }
}

impl GridConfig {
    pub fn base_spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(Vec3::from(self.origin), Vec3::repeat(self.span), self.dims).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeConfig {
    pub eps_v: f64,
    pub buffer: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self { eps_v: DEFAULT_EPS_V, buffer: DEFAULT_BUFFER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(flatten)]
    pub ranges: AugmentRanges,
    /// Augmented copies per training sample used as validation data by `fit`.
    pub copies: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { ranges: AugmentRanges::default(), copies: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub episodes: usize,
    /// Shift every scene by a random whole number of crop voxels in
    /// `[-jitter_voxels, jitter_voxels]` along x and y.
    pub jitter_voxels: u32,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { episodes: 20, jitter_voxels: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    /// Candidate downsample factors; each must divide every grid dimension.
    pub factors: Vec<usize>,
    pub weights: KnnWeights,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { factors: vec![10, 5, 2, 1], weights: KnnWeights::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    Fixture,
    Service,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub mode: DetectorMode,
    pub endpoint: Option<String>,
    /// Defaults to the dataset directory.
    pub fixture_dir: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { mode: DetectorMode::Fixture, endpoint: None, fixture_dir: None, timeout_secs: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Knn,
    Oracle,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    /// Scenes taken from the dataset, in order; 0 means all of them.
    pub episodes: usize,
    pub max_keyframes: usize,
    pub policy: PolicyKind,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self { episodes: 0, max_keyframes: 10, policy: PolicyKind::Knn }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Training dataset (written by `gen-demos`, read by `fit`).
    pub data: PathBuf,
    /// Dataset scored by `evaluate` and replayed by `rollout`.
    pub eval_data: PathBuf,
    pub model: PathBuf,
    /// Report directory; `gen-demos` writes its dataset here when set
    /// from the command line.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/train"),
            eval_data: PathBuf::from("data/train"),
            model: PathBuf::from("model"),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub grid: GridConfig,
    pub alpha: AlphaMode,
    pub keyframes: KeyframeConfig,
    pub augment: AugmentConfig,
    pub demos: DemoConfig,
    pub knn: KnnConfig,
    pub detector: DetectorConfig,
    pub rollout: RolloutSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::OpenDrawer,
            seed: 0,
            grid: GridConfig::default(),
            alpha: AlphaMode::Task,
            keyframes: KeyframeConfig::default(),
            augment: AugmentConfig::default(),
            demos: DemoConfig::default(),
            knn: KnnConfig::default(),
            detector: DetectorConfig::default(),
            rollout: RolloutSection::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let base = self.grid.base_spec()?;
        bins_per_axis(self.grid.bin_width).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.alpha {
            AlphaMode::Fixed { alpha } if !(alpha > 0.0 && alpha <= 1.0) => return bad(format!("alpha {alpha} outside (0, 1]")),
            AlphaMode::Estimated { padding } if !(padding >= 0.0 && padding.is_finite()) => {
                return bad(format!("alpha padding {padding} must be non-negative"))
            }
            _ => {}
        }
        if !(self.keyframes.eps_v > 0.0) || self.keyframes.buffer == 0 {
            return bad(format!("keyframe eps_v {} and buffer {} must be positive", self.keyframes.eps_v, self.keyframes.buffer));
        }
        self.augment.ranges.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.demos.episodes == 0 {
            return bad("demos.episodes must be at least 1".into());
        }
        if self.knn.factors.is_empty() {
            return bad("knn.factors is empty".into());
        }
        if let Some(f) = self.knn.factors.iter().find(|&&f| f == 0 || base.dims.iter().any(|d| d % f != 0)) {
            return bad(format!("downsample factor {f} does not divide grid dims {:?}", base.dims));
        }
        let w = &self.knn.weights;
        if ![w.grid, w.proprio, w.goal].iter().all(|x| x.is_finite() && *x >= 0.0) {
            return bad(format!("knn weights {w:?} must be finite and non-negative"));
        }
        if self.rollout.max_keyframes == 0 {
            return bad("rollout.max_keyframes must be at least 1".into());
        }
        if self.detector.timeout_secs == 0 {
            return bad("detector.timeout_secs must be positive".into());
        }
        Ok(())
    }

    pub fn rollout_config(&self) -> Result<RolloutConfig, ConfigError> {
        Ok(RolloutConfig {
            base: self.grid.base_spec()?,
            alpha: self.alpha,
            bin_width: self.grid.bin_width,
            max_keyframes: self.rollout.max_keyframes,
        })
    }
}
