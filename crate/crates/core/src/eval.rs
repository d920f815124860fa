//! Keyframe-prediction metrics for a policy pair.

use crate::action::{assign_arms, ArmAction, ArmId, LabelSet};
use crate::demos::Keyframe;
use crate::policy::{act, Observation, Policy, PolicyError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    Empty,
    #[error("sample {index}: {source}")]
    Policy { index: usize, source: PolicyError },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Comparison of one decoded prediction with its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: usize,
    pub arm: ArmId,
    pub acting: bool,
    pub trans_error: f64,
    pub rot_error_x: usize,
    pub rot_error_y: usize,
    pub rot_error_z: usize,
    pub open_ok: bool,
    pub collide_ok: bool,
    pub id_ok: bool,
}

impl SampleRecord {
    fn compare(sample: usize, acting: bool, pred: &ArmAction, label: &LabelSet) -> Self {
        let sq: usize = (0..3).map(|a| pred.trans_voxel[a].abs_diff(label.trans[a]).pow(2)).sum();
        let n = 360 / label.bin_width as usize;
        let rot = [0, 1, 2].map(|a| circular_bin_distance(pred.rot_bins.bins[a], label.rot[a], n));
        Self {
            sample,
            arm: label.arm_id(),
            acting,
            trans_error: (sq as f64).sqrt(),
            rot_error_x: rot[0],
            rot_error_y: rot[1],
            rot_error_z: rot[2],
            open_ok: pred.open == (label.open == 1),
            collide_ok: pred.collide == (label.collide == 1),
            id_ok: pred.arm_id.index() == label.id,
        }
    }

    fn exact(&self) -> bool {
        self.trans_error == 0.0
            && self.rot_error_x == 0
            && self.rot_error_y == 0
            && self.rot_error_z == 0
            && self.open_ok
            && self.collide_ok
            && self.id_ok
    }
}

pub fn circular_bin_distance(a: usize, b: usize, bins: usize) -> usize {
    let d = a.abs_diff(b) % bins;
    d.min(bins - d)
}

/// Aggregates over both arms of every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_samples: usize,
    /// Euclidean distance in voxel indices.
    pub trans_error_mean: f64,
    pub trans_error_max: f64,
    /// Mean circular bin distance per Euler axis.
    pub rot_bin_error: [f64; 3],
    pub open_acc: f64,
    pub collide_acc: f64,
    pub id_acc: f64,
    /// Fraction of predictions matching every component.
    pub exact_acc: f64,
}

impl EvalMetrics {
    /// Scalar used for checkpoint selection (higher is better).
    pub fn score(&self) -> f64 {
        self.exact_acc - 1e-3 * self.trans_error_mean
    }

    /// Order-independent: float sums run over sorted values.
    pub fn from_records(records: &[SampleRecord]) -> Result<Self, EvalError> {
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = records.len() as f64;
        let mut trans: Vec<f64> = records.iter().map(|r| r.trans_error).collect();
        trans.sort_by(f64::total_cmp);
        let rot_sum = |f: fn(&SampleRecord) -> usize| records.iter().map(f).sum::<usize>() as f64 / n;
        let frac = |f: fn(&SampleRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
        let mut samples: Vec<usize> = records.iter().map(|r| r.sample).collect();
        samples.sort_unstable();
        samples.dedup();
        Ok(Self {
            n_samples: samples.len(),
            trans_error_mean: trans.iter().sum::<f64>() / n,
            trans_error_max: *trans.last().expect("non-empty"),
            rot_bin_error: [rot_sum(|r| r.rot_error_x), rot_sum(|r| r.rot_error_y), rot_sum(|r| r.rot_error_z)],
            open_acc: frac(|r| r.open_ok),
            collide_acc: frac(|r| r.collide_ok),
            id_acc: frac(|r| r.id_ok),
            exact_acc: frac(SampleRecord::exact),
        })
    }
}

/// Predict both arms of every sample, routing by the goal's role assignment.
pub fn evaluate_records(acting: &dyn Policy, stabilizing: &dyn Policy, data: &[Keyframe]) -> Result<Vec<SampleRecord>, EvalError> {
    if data.is_empty() {
        return Err(EvalError::Empty);
    }
    let per_sample: Vec<Result<[SampleRecord; 2], EvalError>> = data
        .par_iter()
        .enumerate()
        .map(|(index, kf)| {
            let (a_arm, s_arm) = assign_arms(&kf.goal);
            let run = |policy: &dyn Policy, arm, is_acting, label: &LabelSet| -> Result<SampleRecord, EvalError> {
                let obs = Observation { grid: kf.observation.clone(), proprio: kf.proprio, goal: kf.goal.clone(), arm_id: arm };
                let pred = act(policy, &obs).map_err(|source| EvalError::Policy { index, source })?;
                Ok(SampleRecord::compare(index, is_acting, &pred, label))
            };
            Ok([run(acting, a_arm, true, &kf.acting_label)?, run(stabilizing, s_arm, false, &kf.stabilizing_label)?])
        })
        .collect();
    let mut out = Vec::with_capacity(2 * data.len());
    for r in per_sample {
        out.extend(r?);
    }
    Ok(out)
}

pub fn evaluate_keyframes(acting: &dyn Policy, stabilizing: &dyn Policy, data: &[Keyframe]) -> Result<EvalMetrics, EvalError> {
    EvalMetrics::from_records(&evaluate_records(acting, stabilizing, data)?)
}

pub fn write_csv<W: Write>(records: &[SampleRecord], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
