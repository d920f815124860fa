//! The discretized two-arm action space.
//!
//! Each arm predicts five value maps: a translation map over every voxel of
//! the (cropped) grid, three per-axis rotation maps over `360 / R` bins, and
//! two-way maps for gripper open, collision avoidance and arm ID. Training
//! targets are one-hot [`LabelSet`]s and the per-arm loss is the unweighted
//! sum of the five cross-entropies.

use crate::geometry::{bins_per_axis, bins_to_euler, euler_to_bins, euler_to_quat, quat_to_euler, EulerBins, Frame, GeometryError, Pose6D};
use crate::voxel::GridSpec;
use serde::{Deserialize, Serialize};
use std::ops::Deref;

/// Lower bound applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;
/// Default gap between the label logit and every other logit in a delta map.
pub const DEFAULT_MARGIN: f64 = 10.0;
const SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ActionError {
    #[error("non-finite value in {0} map")]
    NonFinite(&'static str),
    #[error("{0} map does not sum to one")]
    NotNormalized(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("action component out of range: {0}")]
    OutOfRange(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Physical arm identity: 0 = left, 1 = right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmId {
    Left,
    Right,
}

impl ArmId {
    pub const BOTH: [ArmId; 2] = [ArmId::Left, ArmId::Right];

    pub fn index(self) -> usize {
        match self {
            ArmId::Left => 0,
            ArmId::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ArmId::Left),
            1 => Some(ArmId::Right),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            ArmId::Left => ArmId::Right,
            ArmId::Right => ArmId::Left,
        }
    }
}

/// One arm's action in discretized form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArmAction {
    pub trans_voxel: [usize; 3],
    pub rot_bins: EulerBins,
    pub open: bool,
    pub collide: bool,
    pub arm_id: ArmId,
}

/// One arm's action as a continuous world-frame gripper pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldAction {
    pub pose: Pose6D,
    pub open: bool,
    pub collide: bool,
}

impl ArmAction {
    /// Discretize a world-frame action under `spec` with `bin_width`-degree bins.
    pub fn from_world(w: &WorldAction, spec: &GridSpec, bin_width: u32, arm_id: ArmId) -> Result<Self, ActionError> {
        let trans_voxel = spec
            .world_to_voxel(&w.pose.position)
            .ok_or_else(|| ActionError::OutOfRange(format!("position {:?} outside grid", w.pose.position.as_slice())))?;
        let rot_bins = euler_to_bins(quat_to_euler(&w.pose.orientation), bin_width)?;
        Ok(Self { trans_voxel, rot_bins, open: w.open, collide: w.collide, arm_id })
    }

    /// Voxel center and bin-center orientation.
    pub fn to_world(&self, spec: &GridSpec) -> Result<WorldAction, ActionError> {
        let position = spec
            .voxel_to_world(self.trans_voxel)
            .map_err(|e| ActionError::OutOfRange(e.to_string()))?;
        let orientation = euler_to_quat(bins_to_euler(&self.rot_bins));
        Ok(WorldAction { pose: Pose6D::new(Frame::World, position, orientation), open: self.open, collide: self.collide })
    }
}

/// Unnormalized (or normalized) maps for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMaps {
    pub dims: [usize; 3],
    pub bin_width: u32,
    /// Flattened x-major over `dims`.
    pub trans: Vec<f64>,
    pub rot: [Vec<f64>; 3],
    pub open: [f64; 2],
    pub collide: [f64; 2],
    pub id: [f64; 2],
}

impl ActionMaps {
    pub fn zeros(dims: [usize; 3], bin_width: u32) -> Result<Self, ActionError> {
        let n = bins_per_axis(bin_width)?;
        Ok(Self {
            dims,
            bin_width,
            trans: vec![0.0; dims.iter().product()],
            rot: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            open: [0.0; 2],
            collide: [0.0; 2],
            id: [0.0; 2],
        })
    }

    /// Logits that are `margin` at each component of `a` and zero elsewhere.
    pub fn delta_logits(a: &ArmAction, dims: [usize; 3], margin: f64) -> Result<Self, ActionError> {
        let mut m = Self::zeros(dims, a.rot_bins.width)?;
        let spec_like = LinearIndex(dims);
        if a.trans_voxel.iter().zip(dims).any(|(&i, d)| i >= d) {
            return Err(ActionError::OutOfRange(format!("voxel {:?} outside {:?}", a.trans_voxel, dims)));
        }
        m.trans[spec_like.of(a.trans_voxel)] = margin;
        for axis in 0..3 {
            m.rot[axis][a.rot_bins.bins[axis]] = margin;
        }
        m.open[a.open as usize] = margin;
        m.collide[a.collide as usize] = margin;
        m.id[a.arm_id.index()] = margin;
        Ok(m)
    }

    pub fn bins_per_axis(&self) -> usize {
        self.rot[0].len()
    }

    fn check_shape(&self) -> Result<(), ActionError> {
        let n: usize = self.dims.iter().product();
        if self.trans.len() != n {
            return Err(ActionError::Shape(format!("translation map has {} entries for dims {:?}", self.trans.len(), self.dims)));
        }
        let bins = bins_per_axis(self.bin_width)?;
        if self.rot.iter().any(|r| r.len() != bins) {
            return Err(ActionError::Shape(format!("rotation maps must have {bins} bins")));
        }
        Ok(())
    }

    fn components(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("translation", &self.trans),
            ("rotation x", &self.rot[0]),
            ("rotation y", &self.rot[1]),
            ("rotation z", &self.rot[2]),
            ("open", &self.open),
            ("collide", &self.collide),
            ("arm id", &self.id),
        ]
    }
}

struct LinearIndex([usize; 3]);

impl LinearIndex {
    fn of(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.0[1] + idx[1]) * self.0[2] + idx[2]
    }

    fn unravel(&self, linear: usize) -> [usize; 3] {
        let z = linear % self.0[2];
        let rest = linear / self.0[2];
        [rest / self.0[1], rest % self.0[1], z]
    }
}

/// Softmax-normalized maps; every component sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMaps(ActionMaps);

impl ValueMaps {
    /// Wrap maps that are already probabilities.
    pub fn new(maps: ActionMaps) -> Result<Self, ActionError> {
        maps.check_shape()?;
        for (name, values) in maps.components() {
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ActionError::NonFinite(name));
            }
            if (values.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE {
                return Err(ActionError::NotNormalized(name));
            }
        }
        Ok(Self(maps))
    }

    pub fn into_inner(self) -> ActionMaps {
        self.0
    }
}

impl Deref for ValueMaps {
    type Target = ActionMaps;

    fn deref(&self) -> &ActionMaps {
        &self.0
    }
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax2(v: [f64; 2]) -> [f64; 2] {
    let s = softmax(&v);
    [s[0], s[1]]
}

pub fn softmax_maps(raw: &ActionMaps) -> Result<ValueMaps, ActionError> {
    raw.check_shape()?;
    for (name, values) in raw.components() {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ActionError::NonFinite(name));
        }
    }
    Ok(ValueMaps(ActionMaps {
        dims: raw.dims,
        bin_width: raw.bin_width,
        trans: softmax(&raw.trans),
        rot: [softmax(&raw.rot[0]), softmax(&raw.rot[1]), softmax(&raw.rot[2])],
        open: softmax2(raw.open),
        collide: softmax2(raw.collide),
        id: softmax2(raw.id),
    }))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn decode_action(maps: &ValueMaps) -> ArmAction {
    let trans_voxel = LinearIndex(maps.dims).unravel(argmax(&maps.trans));
    let bins = [argmax(&maps.rot[0]), argmax(&maps.rot[1]), argmax(&maps.rot[2])];
    ArmAction {
        trans_voxel,
        rot_bins: EulerBins { bins, width: maps.bin_width },
        open: argmax(&maps.open) == 1,
        collide: argmax(&maps.collide) == 1,
        arm_id: if argmax(&maps.id) == 0 { ArmId::Left } else { ArmId::Right },
    }
}

/// One-hot training targets for one arm, stored by their hot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub dims: [usize; 3],
    pub bin_width: u32,
    pub trans: [usize; 3],
    pub rot: [usize; 3],
    pub open: usize,
    pub collide: usize,
    pub id: usize,
}

impl LabelSet {
    pub fn y_trans(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.dims.iter().product()];
        y[LinearIndex(self.dims).of(self.trans)] = 1.0;
        y
    }

    pub fn y_rot(&self) -> [Vec<f64>; 3] {
        let n = 360 / self.bin_width as usize;
        [0, 1, 2].map(|axis| {
            let mut y = vec![0.0; n];
            y[self.rot[axis]] = 1.0;
            y
        })
    }

    pub fn y_open(&self) -> [f64; 2] {
        one_hot2(self.open)
    }

    pub fn y_collide(&self) -> [f64; 2] {
        one_hot2(self.collide)
    }

    pub fn y_id(&self) -> [f64; 2] {
        one_hot2(self.id)
    }

    pub fn to_action(&self) -> ArmAction {
        ArmAction {
            trans_voxel: self.trans,
            rot_bins: EulerBins { bins: self.rot, width: self.bin_width },
            open: self.open == 1,
            collide: self.collide == 1,
            arm_id: ArmId::from_index(self.id).unwrap_or(ArmId::Left),
        }
    }

    pub fn arm_id(&self) -> ArmId {
        ArmId::from_index(self.id).unwrap_or(ArmId::Left)
    }
}

fn one_hot2(i: usize) -> [f64; 2] {
    let mut y = [0.0; 2];
    y[i] = 1.0;
    y
}

pub fn encode_labels(a: &ArmAction, spec: &GridSpec) -> Result<LabelSet, ActionError> {
    if a.trans_voxel.iter().zip(spec.dims).any(|(&i, d)| i >= d) {
        return Err(ActionError::OutOfRange(format!("voxel {:?} outside grid {:?}", a.trans_voxel, spec.dims)));
    }
    let bins = EulerBins::new(a.rot_bins.bins, a.rot_bins.width)?;
    Ok(LabelSet {
        dims: spec.dims,
        bin_width: bins.width,
        trans: a.trans_voxel,
        rot: bins.bins,
        open: a.open as usize,
        collide: a.collide as usize,
        id: a.arm_id.index(),
    })
}

fn nll(p: f64) -> f64 {
    -p.max(LOG_CLAMP).ln()
}

/// Sum of the five cross-entropy terms (rotation summed over its three axes).
pub fn arm_loss(maps: &ValueMaps, labels: &LabelSet) -> Result<f64, ActionError> {
    if maps.dims != labels.dims || maps.bin_width != labels.bin_width {
        return Err(ActionError::Shape(format!(
            "maps {:?}/R={} vs labels {:?}/R={}",
            maps.dims, maps.bin_width, labels.dims, labels.bin_width
        )));
    }
    let trans = nll(maps.trans[LinearIndex(maps.dims).of(labels.trans)]);
    let rot: f64 = (0..3).map(|a| nll(maps.rot[a][labels.rot[a]])).sum();
    Ok(trans + rot + nll(maps.open[labels.open]) + nll(maps.collide[labels.collide]) + nll(maps.id[labels.id]))
}

pub fn total_loss(acting: f64, stabilizing: f64) -> f64 {
    acting + stabilizing
}

/// Proprioception for both arms: 15 scalars once flattened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proprio {
    /// Left, right.
    pub gripper_open: [bool; 2],
    /// Left arm left finger, left arm right finger, right arm left finger,
    /// right arm right finger; meters.
    pub finger_positions: [[f64; 3]; 4],
    pub timestep: u32,
}

impl Proprio {
    pub const LEN: usize = 15;

    pub fn to_features(&self) -> [f64; Self::LEN] {
        let mut f = [0.0; Self::LEN];
        f[0] = self.gripper_open[0] as u8 as f64;
        f[1] = self.gripper_open[1] as u8 as f64;
        for (i, p) in self.finger_positions.iter().enumerate() {
            f[2 + 3 * i..5 + 3 * i].copy_from_slice(p);
        }
        f[14] = self.timestep as f64;
        f
    }
}

/// Which arm acts under a language goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalTag {
    /// Left arm acts, right arm stabilizes.
    #[serde(rename = "l_as")]
    LeftActing,
    /// Right arm acts, left arm stabilizes.
    #[serde(rename = "l_sa")]
    RightActing,
}

impl GoalTag {
    pub fn flipped(self) -> Self {
        match self {
            GoalTag::LeftActing => GoalTag::RightActing,
            GoalTag::RightActing => GoalTag::LeftActing,
        }
    }

    pub fn index(self) -> usize {
        match self {
            GoalTag::LeftActing => 0,
            GoalTag::RightActing => 1,
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        one_hot2(self.index())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageGoal {
    pub tag: GoalTag,
    pub text: String,
}

impl LanguageGoal {
    pub fn new(tag: GoalTag, text: impl Into<String>) -> Self {
        Self { tag, text: text.into() }
    }
}

/// `(acting, stabilizing)` arms for a goal.
pub fn assign_arms(goal: &LanguageGoal) -> (ArmId, ArmId) {
    match goal.tag {
        GoalTag::LeftActing => (ArmId::Left, ArmId::Right),
        GoalTag::RightActing => (ArmId::Right, ArmId::Left),
    }
}
