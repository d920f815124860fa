//! Policy interface and the nearest-neighbor baseline.

mod knn;
mod select;

pub use knn::{knn_features, KnnEntry, KnnModel, KnnWeights, Role};
pub use select::select_checkpoints;

use crate::action::{decode_action, softmax_maps, ActionError, ActionMaps, ArmAction, ArmId, LanguageGoal, Proprio, DEFAULT_MARGIN};
use crate::voxel::VoxelGrid;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("no training samples")]
    Empty,
    #[error("grid shape mismatch: {0}")]
    Shape(String),
    #[error("feature dimension {got}, model expects {expected}")]
    Dim { expected: usize, got: usize },
    #[error("empty candidate list")]
    NoCandidates,
    #[error("model io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Action(#[from] ActionError),
}

/// What a policy sees at one keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Cropped grid.
    pub grid: VoxelGrid,
    pub proprio: Proprio,
    pub goal: LanguageGoal,
    pub arm_id: ArmId,
}

/// Maps an observation to raw (pre-softmax) action maps shaped like the grid.
pub trait Policy: Sync {
    fn predict(&self, obs: &Observation) -> Result<ActionMaps, PolicyError>;
}

impl<F> Policy for F
where
    F: Fn(&Observation) -> Result<ActionMaps, PolicyError> + Sync,
{
    fn predict(&self, obs: &Observation) -> Result<ActionMaps, PolicyError> {
        self(obs)
    }
}

/// Predict, normalize and decode.
pub fn act(policy: &dyn Policy, obs: &Observation) -> Result<ArmAction, PolicyError> {
    let raw = policy.predict(obs)?;
    if raw.dims != obs.grid.spec.dims {
        return Err(PolicyError::Shape(format!("policy emitted {:?} maps for a {:?} grid", raw.dims, obs.grid.spec.dims)));
    }
    Ok(decode_action(&softmax_maps(&raw)?))
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct DeltaPolicy {
    pub action: ArmAction,
    pub margin: f64,
}

impl DeltaPolicy {
    pub fn new(action: ArmAction) -> Self {
        Self { action, margin: DEFAULT_MARGIN }
    }
}

impl Policy for DeltaPolicy {
    fn predict(&self, obs: &Observation) -> Result<ActionMaps, PolicyError> {
        Ok(ActionMaps::delta_logits(&self.action, obs.grid.spec.dims, self.margin)?)
    }
}

/// All-zero logits.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub bin_width: u32,
}

impl Policy for UniformPolicy {
    fn predict(&self, obs: &Observation) -> Result<ActionMaps, PolicyError> {
        Ok(ActionMaps::zeros(obs.grid.spec.dims, self.bin_width)?)
    }
}
