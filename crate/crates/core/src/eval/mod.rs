//! Per-sample completion and pose errors, ratio-under-threshold curves and
//! their CSV reports.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Dataset, Sample};
use crate::geometry::{heading_error, transform_cloud, translation_error, Frame, GeometryError, PlanarPose, PointCloud};
use crate::losses::{chamfer, LossError};
use crate::networks::{forward, Arch, ModelParams, NetError};
use crate::training::{model_input, Checkpoint, Protocol, Stage};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split is empty")]
    EmptySplit,
    #[error("completion is in the {} frame, ground truth is compared in the {} frame", got.as_str(), expected.as_str())]
    FrameMismatch { expected: Frame, got: Frame },
    #[error("non-finite metric for model {model_id} view {view_id}")]
    NonFinite { model_id: u32, view_id: u32 },
    #[error("{0}")]
    InvalidThresholds(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pose and completion predicted for one sample.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub pose: PlanarPose<f64>,
    /// Expected in the Sensor frame.
    pub completion: PointCloud<f64>,
}

/// Anything that predicts a pose and a completion from a sample's scan.
pub trait Estimator: Sync {
    fn estimate(&self, sample: &Sample) -> Result<Estimate, EvalError>;
}

/// A trained network. Inputs are resampled exactly as during training.
pub struct ModelEstimator<'a> {
    pub params: &'a ModelParams<f32>,
    /// Seed the input resampling was keyed with.
    pub input_seed: u64,
}

impl<'a> ModelEstimator<'a> {
    pub fn from_checkpoint(ck: &'a Checkpoint<f32>) -> Self {
        Self {
            params: &ck.params,
            input_seed: ck.train.seed,
        }
    }
}

impl Estimator for ModelEstimator<'_> {
    fn estimate(&self, sample: &Sample) -> Result<Estimate, EvalError> {
        let input = model_input(
            &sample.partial,
            &self.params.config,
            self.input_seed,
            sample.model_id,
            sample.view_id,
        )?;
        let (pose, completion) = forward(&input.cast::<f32>(), self.params)?;
        Ok(Estimate {
            pose: pose.cast(),
            completion: completion.cast(),
        })
    }
}

/// Name used in report file names: the protocol that produced a checkpoint.
pub fn protocol_of<T>(ck: &Checkpoint<T>) -> Protocol {
    match ck.params.arch {
        Arch::Baseline => Protocol::Baseline,
        Arch::SharedEncoder if ck.history.iter().any(|r| r.stage == Stage::Joint) => Protocol::JointSE,
        Arch::SharedEncoder => Protocol::SharedEncoder,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub model_id: u32,
    pub view_id: u32,
    /// Chamfer distance in meters.
    pub cd: f64,
    /// Degrees.
    pub heading_err: f64,
    /// Planar meters.
    pub trans_err: f64,
}

/// Errors of one estimate against its sample. Both clouds are compared in
/// the Sensor frame.
pub fn score(sample: &Sample, est: &Estimate) -> Result<EvalRecord, EvalError> {
    if est.completion.frame() != Frame::Sensor {
        return Err(EvalError::FrameMismatch {
            expected: Frame::Sensor,
            got: est.completion.frame(),
        });
    }
    let gt = transform_cloud(&sample.complete, &sample.gt_pose)?.with_frame(Frame::Sensor);
    let rec = EvalRecord {
        model_id: sample.model_id,
        view_id: sample.view_id,
        cd: chamfer(&est.completion, &gt)?,
        heading_err: heading_error(est.pose.yaw(), sample.gt_pose.yaw()),
        trans_err: translation_error(&est.pose, &sample.gt_pose),
    };
    if ![rec.cd, rec.heading_err, rec.trans_err].iter().all(|v| v.is_finite()) {
        return Err(EvalError::NonFinite {
            model_id: rec.model_id,
            view_id: rec.view_id,
        });
    }
    Ok(rec)
}

/// One record per sample, sorted by (model_id, view_id).
pub fn evaluate_with<E: Estimator>(estimator: &E, split: &Dataset) -> Result<Vec<EvalRecord>, EvalError> {
    if split.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let mut records = split
        .samples
        .par_iter()
        .map(|s| score(s, &estimator.estimate(s)?))
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by_key(|r| (r.model_id, r.view_id));
    Ok(records)
}

pub fn evaluate(ck: &Checkpoint<f32>, split: &Dataset) -> Result<Vec<EvalRecord>, EvalError> {
    evaluate_with(&ModelEstimator::from_checkpoint(ck), split)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    /// Fraction of errors at or below each threshold.
    pub ratios: Vec<f64>,
}

pub fn threshold_curve(errors: &[f64], thresholds: &[f64]) -> Result<ThresholdCurve, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::InvalidThresholds("no errors to summarize".into()));
    }
    if thresholds.iter().any(|t| t.is_nan()) || thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(EvalError::InvalidThresholds("thresholds must be ascending".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let ratios = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    Ok(ThresholdCurve {
        thresholds: thresholds.to_vec(),
        ratios,
    })
}

/// `0, step, 2·step, …, max`.
pub fn grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

pub fn default_cd_grid() -> Vec<f64> {
    grid(2.0, 0.05)
}

pub fn default_heading_grid() -> Vec<f64> {
    grid(90.0, 1.0)
}

pub fn default_translation_grid() -> Vec<f64> {
    grid(2.0, 0.05)
}

/// Metric name and curve, in report order.
pub fn default_curves(records: &[EvalRecord]) -> Result<Vec<(&'static str, ThresholdCurve)>, EvalError> {
    let col = |f: fn(&EvalRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    Ok(vec![
        ("cd", threshold_curve(&col(|r| r.cd), &default_cd_grid())?),
        (
            "heading_err",
            threshold_curve(&col(|r| r.heading_err), &default_heading_grid())?,
        ),
        (
            "trans_err",
            threshold_curve(&col(|r| r.trans_err), &default_translation_grid())?,
        ),
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean_cd: f64,
    pub mean_heading_err: f64,
    pub mean_trans_err: f64,
}

pub fn summarize(records: &[EvalRecord]) -> Summary {
    let n = records.len().max(1) as f64;
    let mean = |f: fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Summary {
        count: records.len(),
        mean_cd: mean(|r| r.cd),
        mean_heading_err: mean(|r| r.heading_err),
        mean_trans_err: mean(|r| r.trans_err),
    }
}

pub fn write_records_csv<W: Write>(w: W, records: &[EvalRecord]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model_id", "view_id", "cd", "heading_err", "trans_err"])?;
    for r in records {
        out.write_record([
            r.model_id.to_string(),
            r.view_id.to_string(),
            r.cd.to_string(),
            r.heading_err.to_string(),
            r.trans_err.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_curves_csv<W: Write>(w: W, curves: &[(&str, ThresholdCurve)]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "threshold", "ratio"])?;
    for (metric, c) in curves {
        for (t, r) in c.thresholds.iter().zip(&c.ratios) {
            out.write_record([metric.to_string(), t.to_string(), r.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn records_file_name(p: Protocol) -> String {
    format!("eval-{}.csv", p.as_str())
}

pub fn curves_file_name(p: Protocol) -> String {
    format!("curves-{}.csv", p.as_str())
}

#[cfg(test)]
mod tests;
