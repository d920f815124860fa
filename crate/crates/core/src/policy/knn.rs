use super::{Observation, Policy, PolicyError};
use crate::action::{ActionMaps, ArmAction, ArmId, LabelSet, LanguageGoal, Proprio, DEFAULT_MARGIN};
use crate::demos::Keyframe;
use crate::geometry::EulerBins;
use crate::voxel::{downsample, VoxelGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const FORMAT: &str = "voxact-knn v1";
const ACTION_WORDS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Acting,
    Stabilizing,
}

impl Role {
    pub fn label(self, k: &Keyframe) -> &LabelSet {
        match self {
            Role::Acting => &k.acting_label,
            Role::Stabilizing => &k.stabilizing_label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnWeights {
    pub grid: f64,
    pub proprio: f64,
    pub goal: f64,
}

impl Default for KnnWeights {
    fn default() -> Self {
        Self { grid: 1.0, proprio: 1.0, goal: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnEntry {
    pub features: Vec<f64>,
    pub action: ArmAction,
    /// Index of the training sample this entry came from.
    pub source: usize,
}

/// `w_grid * occupancy(downsampled) ++ w_proprio * proprio ++ w_goal * goal`.
///
/// Occupancy is each coarse voxel's share of all points in the grid, so the
/// grid block stays on the same scale as the goal one-hot however many
/// points the cameras return.
pub fn knn_features(
    grid: &VoxelGrid,
    proprio: &Proprio,
    goal: &LanguageGoal,
    factor: usize,
    w: &KnnWeights,
) -> Result<Vec<f64>, PolicyError> {
    let coarse = downsample(grid, factor).map_err(|e| PolicyError::Shape(e.to_string()))?;
    let mut f = Vec::with_capacity(coarse.occupancy.len() + Proprio::LEN + 2);
    let total = coarse.total_occupancy().max(1) as f64;
    f.extend(coarse.occupancy.iter().map(|&c| w.grid * c as f64 / total));
    f.extend(proprio.to_features().iter().map(|p| w.proprio * p));
    f.extend(goal.tag.one_hot().iter().map(|g| w.goal * g));
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub dims: [usize; 3],
    pub factor: usize,
    pub weights: KnnWeights,
    pub bin_width: u32,
    pub entries: Vec<KnnEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    dims: [usize; 3],
    factor: usize,
    weights: KnnWeights,
    bin_width: u32,
    feature_dim: usize,
    sources: Vec<usize>,
}

impl KnnModel {
    /// One entry per sample, storing the label of `role`.
    pub fn fit(samples: &[Keyframe], role: Role, factor: usize, weights: KnnWeights) -> Result<Self, PolicyError> {
        let first = samples.first().ok_or(PolicyError::Empty)?;
        let dims = first.observation.spec.dims;
        let bin_width = first.acting_label.bin_width;
        let mut entries = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.observation.spec.dims != dims {
                return Err(PolicyError::Shape(format!("sample {i} grid {:?}, first sample {:?}", s.observation.spec.dims, dims)));
            }
            let label = role.label(s);
            if label.bin_width != bin_width {
                return Err(PolicyError::Shape(format!("sample {i} uses R={}, first sample R={bin_width}", label.bin_width)));
            }
            let features = knn_features(&s.observation, &s.proprio, &s.goal, factor, &weights)?;
            entries.push(KnnEntry { features, action: label.to_action(), source: i });
        }
        Ok(Self { dims, factor, weights, bin_width, entries })
    }

    pub fn feature_dim(&self) -> usize {
        self.dims.iter().map(|d| d / self.factor).product::<usize>() + Proprio::LEN + 2
    }

    /// Index of the closest entry; ties go to the lowest index.
    pub fn nearest(&self, features: &[f64]) -> Result<usize, PolicyError> {
        if features.len() != self.feature_dim() {
            return Err(PolicyError::Dim { expected: self.feature_dim(), got: features.len() });
        }
        if self.entries.is_empty() {
            return Err(PolicyError::Empty);
        }
        let dists: Vec<f64> = self
            .entries
            .par_iter()
            .map(|e| e.features.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let mut best = 0;
        for (i, d) in dists.iter().enumerate().skip(1) {
            if *d < dists[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn retrieve(&self, obs: &Observation) -> Result<&KnnEntry, PolicyError> {
        if obs.grid.spec.dims != self.dims {
            return Err(PolicyError::Shape(format!("observation grid {:?}, model {:?}", obs.grid.spec.dims, self.dims)));
        }
        let f = knn_features(&obs.grid, &obs.proprio, &obs.goal, self.factor, &self.weights)?;
        Ok(&self.entries[self.nearest(&f)?])
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), PolicyError> {
        let header = Header {
            format: FORMAT.into(),
            dims: self.dims,
            factor: self.factor,
            weights: self.weights,
            bin_width: self.bin_width,
            feature_dim: self.feature_dim(),
            sources: self.entries.iter().map(|e| e.source).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.entries.len() * header.feature_dim * 8);
        for e in &self.entries {
            for v in &e.features {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for e in &self.entries {
            for w in encode_action(&e.action) {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, PolicyError> {
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(PolicyError::Format(format!("header length {len} is implausible")));
        }
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| PolicyError::Format(e.to_string()))?;
        if h.format != FORMAT {
            return Err(PolicyError::Format(format!("unknown format {:?}", h.format)));
        }
        let n = h.sources.len();
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        let want = n * h.feature_dim * 8 + n * ACTION_WORDS * 4;
        if rest.len() != want {
            return Err(PolicyError::Format(format!("payload is {} bytes, expected {want}", rest.len())));
        }
        let (feat_bytes, act_bytes) = rest.split_at(n * h.feature_dim * 8);
        let floats: Vec<f64> = feat_bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let words: Vec<u32> = act_bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        let mut entries = Vec::with_capacity(n);
        for (i, &source) in h.sources.iter().enumerate() {
            let features = floats[i * h.feature_dim..(i + 1) * h.feature_dim].to_vec();
            let action = decode_action_words(&words[i * ACTION_WORDS..(i + 1) * ACTION_WORDS], h.bin_width)?;
            entries.push(KnnEntry { features, action, source });
        }
        let model = Self { dims: h.dims, factor: h.factor, weights: h.weights, bin_width: h.bin_width, entries };
        if model.feature_dim() != h.feature_dim {
            return Err(PolicyError::Format(format!("feature_dim {} inconsistent with dims/factor", h.feature_dim)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn encode_action(a: &ArmAction) -> [u32; ACTION_WORDS] {
    let t = a.trans_voxel.map(|i| i as u32);
    let r = a.rot_bins.bins.map(|i| i as u32);
    [t[0], t[1], t[2], r[0], r[1], r[2], a.open as u32, a.collide as u32, a.arm_id.index() as u32]
}

fn decode_action_words(w: &[u32], bin_width: u32) -> Result<ArmAction, PolicyError> {
    let bool_of = |v: u32| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(PolicyError::Format(format!("flag value {v}"))),
    };
    Ok(ArmAction {
        trans_voxel: [w[0] as usize, w[1] as usize, w[2] as usize],
        rot_bins: EulerBins::new([w[3] as usize, w[4] as usize, w[5] as usize], bin_width)
            .map_err(|e| PolicyError::Format(e.to_string()))?,
        open: bool_of(w[6])?,
        collide: bool_of(w[7])?,
        arm_id: ArmId::from_index(w[8] as usize).ok_or_else(|| PolicyError::Format(format!("arm id {}", w[8])))?,
    })
}

impl Policy for KnnModel {
    fn predict(&self, obs: &Observation) -> Result<ActionMaps, PolicyError> {
        let e = self.retrieve(obs)?;
        Ok(ActionMaps::delta_logits(&e.action, self.dims, DEFAULT_MARGIN)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::GoalTag;
    use crate::geometry::Vec3;
    use crate::policy::act;
    use crate::roles::Task;
    use crate::voxel::GridSpec;

    fn keyframe(occupied: &[[usize; 3]], trans: [usize; 3], tag: GoalTag, t: u32) -> Keyframe {
        let spec = GridSpec::cube(Vec3::zeros(), 1.0, 10).unwrap();
        let mut g = VoxelGrid::empty(spec);
        for &idx in occupied {
            g.occupancy[spec.linear_index(idx)] += 4;
        }
        let label = LabelSet { dims: spec.dims, bin_width: 5, trans, rot: [36, 1, 70], open: 0, collide: 1, id: 0 };
        Keyframe {
            step_index: t as usize,
            acting_label: label,
            stabilizing_label: LabelSet { trans: [trans[0], 9 - trans[1], trans[2]], id: 1, open: 1, ..label },
            observation: g,
            proprio: Proprio { gripper_open: [true, false], finger_positions: [[0.1; 3]; 4], timestep: t },
            goal: Task::OpenDrawer.goal(tag),
        }
    }

    fn obs_of(k: &Keyframe, arm: ArmId) -> Observation {
        Observation { grid: k.observation.clone(), proprio: k.proprio, goal: k.goal.clone(), arm_id: arm }
    }

    fn dataset() -> Vec<Keyframe> {
        vec![
            keyframe(&[[2, 2, 2], [2, 3, 2]], [2, 2, 3], GoalTag::LeftActing, 0),
            keyframe(&[[2, 2, 2], [2, 3, 2]], [2, 2, 7], GoalTag::LeftActing, 1),
            keyframe(&[[7, 7, 2]], [7, 7, 3], GoalTag::RightActing, 0),
            keyframe(&[[5, 1, 1], [5, 2, 1], [6, 2, 1]], [5, 2, 2], GoalTag::LeftActing, 0),
        ]
    }

    #[test]
    fn fit_shapes() {
        let d = dataset();
        let m = KnnModel::fit(&d[..1], Role::Acting, 1, KnnWeights::default()).unwrap();
        assert_eq!(m.entries.len(), 1);
        let m = KnnModel::fit(&d, Role::Acting, 2, KnnWeights::default()).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.feature_dim(), 125 + 15 + 2);
        assert!(m.entries.iter().all(|e| e.features.len() == 142));
        assert!(matches!(KnnModel::fit(&[], Role::Acting, 1, KnnWeights::default()), Err(PolicyError::Empty)));
        assert!(matches!(KnnModel::fit(&d, Role::Acting, 3, KnnWeights::default()), Err(PolicyError::Shape(_))));
    }

    #[test]
    fn self_retrieval() {
        let d = dataset();
        for role in [Role::Acting, Role::Stabilizing] {
            let m = KnnModel::fit(&d, role, 1, KnnWeights::default()).unwrap();
            for k in &d {
                assert_eq!(act(&m, &obs_of(k, ArmId::Left)).unwrap(), role.label(k).to_action());
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_entry() {
        let mut d = dataset();
        d[1] = keyframe(&[[2, 2, 2], [2, 3, 2]], [4, 4, 4], GoalTag::LeftActing, 0);
        let m = KnnModel::fit(&d, Role::Acting, 1, KnnWeights::default()).unwrap();
        // entries 0 and 1 have identical features
        assert_eq!(m.retrieve(&obs_of(&d[1], ArmId::Left)).unwrap().source, 0);
        // a query exactly between two entries
        let q = m.entries[0].features.iter().zip(&m.entries[3].features).map(|(a, b)| (a + b) / 2.0).collect::<Vec<_>>();
        assert_eq!(m.nearest(&q).unwrap(), 0);
    }

    #[test]
    fn shifted_duplicate_is_within_one_voxel() {
        let d = dataset();
        let m = KnnModel::fit(&d, Role::Acting, 1, KnnWeights::default()).unwrap();
        let shifted = keyframe(&[[6, 1, 1], [6, 2, 1], [7, 2, 1]], [6, 2, 2], GoalTag::LeftActing, 0);
        let a = act(&m, &obs_of(&shifted, ArmId::Left)).unwrap();
        let err: i64 = (0..3).map(|i| (a.trans_voxel[i] as i64 - shifted.acting_label.trans[i] as i64).abs()).max().unwrap();
        assert!(err <= 1);
    }

    #[test]
    fn persistence_round_trip() {
        let d = dataset();
        let m = KnnModel::fit(&d, Role::Stabilizing, 2, KnnWeights { grid: 0.5, proprio: 2.0, goal: 7.0 }).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let back = KnnModel::read(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert!(matches!(KnnModel::read(&buf[..buf.len() - 1]), Err(PolicyError::Format(_))));
    }

    #[test]
    fn dim_mismatch() {
        let m = KnnModel::fit(&dataset(), Role::Acting, 1, KnnWeights::default()).unwrap();
        assert!(matches!(m.nearest(&[0.0; 3]), Err(PolicyError::Dim { .. })));
    }
}
