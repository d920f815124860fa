//! Rigid augmentation snapped to the voxel and rotation-bin lattice.

use super::{DemoError, Keyframe};
use crate::action::LabelSet;
use crate::geometry::{EulerBins, Vec3};
use crate::voxel::GridSpec;
use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-axis translation bound, meters.
pub const MAX_TRANSLATION: f64 = 0.125;
pub const MAX_YAW_DEG: f64 = 45.0;
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub translation: Vec3,
    pub yaw_deg: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self { translation: Vec3::zeros(), yaw_deg: 0.0 }
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        let t_ok = self.translation.iter().all(|t| t.is_finite() && t.abs() <= MAX_TRANSLATION);
        if !t_ok || !(self.yaw_deg.abs() <= MAX_YAW_DEG) {
            return Err(DemoError::InvalidParams(format!(
                "augmentation t={:?} yaw={} outside ±{MAX_TRANSLATION} m / ±{MAX_YAW_DEG}°",
                self.translation.as_slice(),
                self.yaw_deg
            )));
        }
        Ok(())
    }
}

/// The snapped rigid map `p -> Rz(yaw) (p - c) + c + t`, `c` the grid center.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SnappedTransform {
    pub spec: GridSpec,
    pub shift_voxels: [i64; 3],
    pub yaw_steps: i64,
    pub bin_width: u32,
}

impl SnappedTransform {
    pub fn new(spec: GridSpec, params: &AugmentParams, bin_width: u32) -> Self {
        let size = spec.voxel_size();
        let shift_voxels = [0, 1, 2].map(|a| (params.translation[a] / size[a]).round() as i64);
        let yaw_steps = (params.yaw_deg / bin_width as f64).round() as i64;
        Self { spec, shift_voxels, yaw_steps, bin_width }
    }

    pub fn translation(&self) -> Vec3 {
        let size = self.spec.voxel_size();
        Vec3::new(
            self.shift_voxels[0] as f64 * size.x,
            self.shift_voxels[1] as f64 * size.y,
            self.shift_voxels[2] as f64 * size.z,
        )
    }

    pub fn yaw_deg(&self) -> f64 {
        (self.yaw_steps * self.bin_width as i64) as f64
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let c = self.spec.center();
        Rotation3::from_axis_angle(&Vec3::z_axis(), self.yaw_deg().to_radians()) * (p - c) + c + self.translation()
    }

    pub fn map_voxel(&self, idx: [usize; 3]) -> Option<[usize; 3]> {
        if self.yaw_steps == 0 {
            // pure lattice shift, no floating point involved
            let moved = [0, 1, 2].map(|a| idx[a] as i64 + self.shift_voxels[a]);
            return self.spec.contains_index(moved).then(|| moved.map(|i| i as usize));
        }
        let p = self.spec.voxel_to_world(idx).ok()?;
        self.spec.world_to_voxel(&self.apply(&p))
    }

    fn map_label(&self, l: &LabelSet) -> Option<LabelSet> {
        let trans = self.map_voxel(l.trans)?;
        let rot = EulerBins::new(l.rot, l.bin_width).ok()?.rotated(2, self.yaw_steps).bins;
        Some(LabelSet { trans, rot, ..*l })
    }
}

/// Apply a snapped rigid transform to the grid contents, both labels and the
/// finger positions. `Ok(None)` when a label would leave the grid.
pub fn augment(sample: &Keyframe, params: &AugmentParams) -> Result<Option<Keyframe>, DemoError> {
    params.validate()?;
    let spec = sample.observation.spec;
    let tf = SnappedTransform::new(spec, params, sample.acting_label.bin_width);
    let (Some(acting_label), Some(stabilizing_label)) =
        (tf.map_label(&sample.acting_label), tf.map_label(&sample.stabilizing_label))
    else {
        return Ok(None);
    };
    let observation = sample.observation.forward_map(|idx| tf.map_voxel(idx));
    let mut proprio = sample.proprio;
    for f in proprio.finger_positions.iter_mut() {
        *f = tf.apply(&Vec3::from(*f)).into();
    }
    Ok(Some(Keyframe {
        step_index: sample.step_index,
        acting_label,
        stabilizing_label,
        observation,
        proprio,
        goal: sample.goal.clone(),
    }))
}

/// Sampling bounds for [`augment_random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_translation: f64,
    pub max_yaw_deg: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { max_translation: MAX_TRANSLATION, max_yaw_deg: MAX_YAW_DEG }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<(), DemoError> {
        AugmentParams { translation: Vec3::repeat(self.max_translation), yaw_deg: self.max_yaw_deg }.validate()?;
        if self.max_translation < 0.0 || self.max_yaw_deg < 0.0 {
            return Err(DemoError::InvalidParams("augmentation bounds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Draw up to [`MAX_RESAMPLES`] transforms within `ranges`; the first that
/// keeps both labels in the grid wins, otherwise the sample comes back
/// unchanged.
pub fn augment_random(sample: &Keyframe, ranges: &AugmentRanges, seed: u64) -> Keyframe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, y) = (ranges.max_translation, ranges.max_yaw_deg);
    for _ in 0..MAX_RESAMPLES {
        let params = AugmentParams {
            translation: Vec3::from_fn(|_, _| rng.random_range(-t..=t)),
            yaw_deg: rng.random_range(-y..=y),
        };
        if let Ok(Some(k)) = augment(sample, &params) {
            return k;
        }
    }
    sample.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{GoalTag, Proprio};
    use crate::roles::Task;
    use crate::voxel::VoxelGrid;

    fn sample(spec: GridSpec, trans: [usize; 3]) -> Keyframe {
        let mut observation = VoxelGrid::empty(spec);
        for (idx, n) in [([10, 10, 10], 3), ([11, 10, 10], 1), ([30, 20, 5], 2)] {
            let i = spec.linear_index(idx);
            observation.occupancy[i] = n;
            observation.color[i] = [0.5, 0.25, 1.0];
        }
        let label = LabelSet { dims: spec.dims, bin_width: 5, trans, rot: [36, 0, 71], open: 1, collide: 0, id: 0 };
        Keyframe {
            step_index: 3,
            acting_label: label,
            stabilizing_label: LabelSet { trans: [20, 20, 20], id: 1, ..label },
            observation,
            proprio: Proprio { gripper_open: [true, false], finger_positions: [[0.1, 0.2, 0.3]; 4], timestep: 1 },
            goal: Task::OpenDrawer.goal(GoalTag::LeftActing),
        }
    }

    fn base() -> GridSpec {
        GridSpec::cube(Vec3::repeat(-1.0), 2.0, 50).unwrap()
    }

    #[test]
    fn identity_is_noop() {
        let s = sample(base(), [25, 25, 25]);
        assert_eq!(augment(&s, &AugmentParams::identity()).unwrap().unwrap(), s);
    }

    #[test]
    fn one_voxel_shift() {
        let s = sample(base(), [25, 25, 25]);
        let p = AugmentParams { translation: Vec3::new(0.04, 0.0, 0.0), yaw_deg: 0.0 };
        let a = augment(&s, &p).unwrap().unwrap();
        assert_eq!(a.acting_label.trans, [26, 25, 25]);
        assert_eq!(a.observation.occupancy_at([11, 10, 10]), 3);
        assert_eq!(a.observation.occupancy_at([12, 10, 10]), 1);
        assert_eq!(a.observation.occupancy_at([10, 10, 10]), 0);
        assert_eq!(a.observation.total_occupancy(), s.observation.total_occupancy());
        assert!((a.proprio.finger_positions[0][0] - 0.14).abs() < 1e-12);
    }

    #[test]
    fn five_degree_yaw_bumps_yaw_bin() {
        let s = sample(base(), [25, 25, 25]);
        let p = AugmentParams { translation: Vec3::zeros(), yaw_deg: 5.0 };
        let a = augment(&s, &p).unwrap().unwrap();
        assert_eq!(a.acting_label.rot, [36, 0, 0]);
        assert_eq!(a.stabilizing_label.rot, [36, 0, 0]);
        // a voxel rotates about the vertical center axis
        let c = base().center();
        let src = base().voxel_to_world([30, 20, 5]).unwrap() - c;
        let (sn, cs) = 5f64.to_radians().sin_cos();
        let rotated = Vec3::new(cs * src.x - sn * src.y, sn * src.x + cs * src.y, src.z) + c;
        let dst = base().world_to_voxel(&rotated).unwrap();
        assert_eq!(a.observation.occupancy_at(dst), 2);
    }

    #[test]
    fn label_leaving_grid() {
        let s = sample(base(), [49, 25, 25]);
        let p = AugmentParams { translation: Vec3::new(0.04, 0.0, 0.0), yaw_deg: 0.0 };
        assert!(augment(&s, &p).unwrap().is_none());
    }

    #[test]
    fn out_of_range_params() {
        let s = sample(base(), [25, 25, 25]);
        let p = AugmentParams { translation: Vec3::new(0.2, 0.0, 0.0), yaw_deg: 0.0 };
        assert!(matches!(augment(&s, &p), Err(DemoError::InvalidParams(_))));
        let p = AugmentParams { translation: Vec3::zeros(), yaw_deg: 50.0 };
        assert!(matches!(augment(&s, &p), Err(DemoError::InvalidParams(_))));
    }

    #[test]
    fn random_is_seeded_and_falls_back() {
        let s = sample(base(), [25, 25, 25]);
        assert_eq!(augment_random(&s, &AugmentRanges::default(), 9), augment_random(&s, &AugmentRanges::default(), 9));
        // millimeter voxels with labels in opposite corners: any draw pushes one out
        let fine = GridSpec::cube(Vec3::zeros(), 0.05, 50).unwrap();
        let mut t = sample(fine, [0, 0, 0]);
        t.stabilizing_label.trans = [49, 49, 49];
        let r = augment_random(&t, &AugmentRanges::default(), 1);
        assert_eq!(r, t);
    }
}
