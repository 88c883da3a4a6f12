//! Staged optimization of the network parameters: shape training,
//! frozen-encoder pose training, joint fine-tuning and the baseline's two
//! branches. Includes validation-based selection, checkpoints and the
//! training log.

mod checkpoint;

pub use checkpoint::{Checkpoint, StageRecord, CHECKPOINT_VERSION};

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{AdamState, AutodiffError, Tape, Tensor, Var};
use crate::dataset::{canonicalize, keyed_rng, resample_to, sample_seed, Dataset, DatasetError, STREAM_BATCH};
use crate::geometry::{transform_cloud, GeometryError, PlanarPose, PointCloud};
use crate::kv::{KvError, KvMap};
use crate::losses::{chamfer_tape, joint_loss_tape, pose_loss_tape, LossError};
use crate::networks::{
    decode_pose_tape, decode_shape_tape, encode_tape, Arch, Bound, ModelParams, NetConfig, NetError, POSE_DECODER, POSE_ENCODER,
    SHAPE_DECODER, SHAPE_ENCODER, SHARED_ENCODER, S_CD, S_P,
};
use crate::scalar::Real;

/// Samples evaluated on one tape. Fixed so that gradient summation order,
/// and hence every result, is independent of the worker count.
const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Encoder and shape decoder on Chamfer distance; pose decoder frozen.
    Shape,
    /// Pose decoder on pose loss; encoder and shape decoder frozen.
    PoseFrozen,
    /// Everything, including the uncertainty weights, on the joint loss.
    Joint,
    /// Baseline pose encoder and pose decoder on pose loss.
    BaselinePose,
    /// Baseline shape encoder and decoder on Chamfer distance in the
    /// Canonical frame.
    BaselineShape,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Shape,
        Stage::PoseFrozen,
        Stage::Joint,
        Stage::BaselinePose,
        Stage::BaselineShape,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Shape => "shape",
            Stage::PoseFrozen => "pose_frozen",
            Stage::Joint => "joint",
            Stage::BaselinePose => "baseline_pose",
            Stage::BaselineShape => "baseline_shape",
        }
    }

    pub fn arch(self) -> Arch {
        match self {
            Stage::Shape | Stage::PoseFrozen | Stage::Joint => Arch::SharedEncoder,
            Stage::BaselinePose | Stage::BaselineShape => Arch::Baseline,
        }
    }

    /// Whether the parameter `name` is optimized in this stage.
    pub fn trains(self, name: &str) -> bool {
        let under = |prefix: &str| name.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('.'));
        match self {
            Stage::Shape => under(SHARED_ENCODER) || under(SHAPE_DECODER),
            Stage::PoseFrozen => under(POSE_DECODER),
            Stage::Joint => true,
            Stage::BaselinePose => under(POSE_ENCODER) || under(POSE_DECODER),
            Stage::BaselineShape => under(SHAPE_ENCODER) || under(SHAPE_DECODER),
        }
    }

    fn index(self) -> u64 {
        Stage::ALL.iter().position(|&s| s == self).expect("listed") as u64
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

/// Complete training recipes for the three compared models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Baseline,
    SharedEncoder,
    /// The shared-encoder recipe followed by joint fine-tuning.
    JointSE,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Baseline, Protocol::SharedEncoder, Protocol::JointSE];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::SharedEncoder => "shared",
            Protocol::JointSE => "joint",
        }
    }

    pub fn arch(self) -> Arch {
        match self {
            Protocol::Baseline => Arch::Baseline,
            Protocol::SharedEncoder | Protocol::JointSE => Arch::SharedEncoder,
        }
    }

    pub fn stages(self) -> &'static [Stage] {
        match self {
            Protocol::Baseline => &[Stage::BaselinePose, Stage::BaselineShape],
            Protocol::SharedEncoder => &[Stage::Shape, Stage::PoseFrozen],
            Protocol::JointSE => &[Stage::Shape, Stage::PoseFrozen, Stage::Joint],
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown protocol '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Epoch budget of every stage.
    pub epochs: usize,
    /// Initialization, batch order and input resampling.
    pub seed: u64,
    /// Ends a stage once its epoch training loss has fallen by this fraction
    /// of the first step's loss. Off by default.
    pub target_reduction: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 200,
            seed: 0,
            target_reduction: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::InvalidArgument("batch_size and epochs must be at least 1".into()));
        }
        if let Some(r) = self.target_reduction {
            if !(r > 0.0 && r <= 1.0) {
                return Err(TrainError::InvalidArgument(format!(
                    "target_reduction must be in (0, 1], got {r}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("lr", self.lr);
        m.set("batch_size", self.batch_size);
        m.set("epochs", self.epochs);
        m.set("seed", self.seed);
        if let Some(r) = self.target_reduction {
            m.set("target_reduction", r);
        }
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, KvError> {
        let d = Self::default();
        Ok(Self {
            lr: m.get("lr")?.unwrap_or(d.lr),
            batch_size: m.get("batch_size")?.unwrap_or(d.batch_size),
            epochs: m.get("epochs")?.unwrap_or(d.epochs),
            seed: m.get("seed")?.unwrap_or(d.seed),
            target_reduction: m.get("target_reduction")?,
        })
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("stage {stage:?} needs a {expected:?} model, got {got:?}")]
    WrongArch { stage: Stage, expected: Arch, got: Arch },
    #[error("non-finite loss or gradient in stage {} at step {step}, samples (model, view) {samples:?}", stage.as_str())]
    NonFinite {
        stage: Stage,
        step: u64,
        samples: Vec<(u32, u32)>,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TrainError {
    fn is_non_finite(&self) -> bool {
        let nf = |e: &AutodiffError| matches!(e, AutodiffError::NonFinite { .. });
        match self {
            TrainError::Autodiff(e) | TrainError::Net(NetError::Autodiff(e)) | TrainError::Loss(LossError::Autodiff(e)) => nf(e),
            _ => false,
        }
    }
}

/// One sample converted into the tensors the stage losses consume.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub model_id: u32,
    pub view_id: u32,
    /// Resampled partial, Sensor frame, `input_points×3`.
    pub input: Tensor<T>,
    /// The same points canonicalized with the ground-truth pose.
    pub canonical_input: Tensor<T>,
    /// Ground-truth complete cloud posed into the Sensor frame.
    pub complete_sensor: Tensor<T>,
    pub complete_canonical: Tensor<T>,
    pub gt_pose: PlanarPose<T>,
}

/// Network input for a scan: exactly `cfg.input_points` points drawn with a
/// seed derived from (`seed`, model, view).
pub fn model_input(
    partial: &PointCloud<f64>,
    cfg: &NetConfig,
    seed: u64,
    model_id: u32,
    view_id: u32,
) -> Result<PointCloud<f64>, GeometryError> {
    resample_to(partial, cfg.input_points, sample_seed(seed, model_id, view_id))
}

pub fn prepare<T: Real>(dataset: &Dataset, cfg: &NetConfig, seed: u64) -> Result<Vec<Prepared<T>>, TrainError> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let input = model_input(&s.partial, cfg, seed, s.model_id, s.view_id)?;
            let canonical = canonicalize(&input, &s.gt_pose)?;
            let complete_sensor = transform_cloud(&s.complete, &s.gt_pose)?;
            Ok(Prepared {
                model_id: s.model_id,
                view_id: s.view_id,
                input: input.to_tensor(),
                canonical_input: canonical.to_tensor(),
                complete_sensor: complete_sensor.to_tensor(),
                complete_canonical: s.complete.to_tensor(),
                gt_pose: s.gt_pose.cast(),
            })
        })
        .collect()
}

/// The loss a stage minimizes, recorded for one sample.
pub fn stage_loss_tape<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    cfg: &NetConfig,
    stage: Stage,
    s: &Prepared<T>,
) -> Result<Var, TrainError> {
    let shape_loss = |prefix: &str, input: &Tensor<T>, gt: &Tensor<T>| -> Result<Var, TrainError> {
        let code = encode_tape(tape, p, prefix, tape.constant(input.clone())?)?;
        let shape = decode_shape_tape(tape, p, cfg, code)?;
        Ok(chamfer_tape(tape, shape.fine, gt)?)
    };
    let pose_loss = |prefix: &str| -> Result<Var, TrainError> {
        let code = encode_tape(tape, p, prefix, tape.constant(s.input.clone())?)?;
        let raw = decode_pose_tape(tape, p, code)?;
        Ok(pose_loss_tape(tape, raw, &s.gt_pose, &s.complete_canonical)?)
    };
    match stage {
        Stage::Shape => shape_loss(SHARED_ENCODER, &s.input, &s.complete_sensor),
        Stage::PoseFrozen => pose_loss(SHARED_ENCODER),
        Stage::BaselinePose => pose_loss(POSE_ENCODER),
        Stage::BaselineShape => shape_loss(SHAPE_ENCODER, &s.canonical_input, &s.complete_canonical),
        Stage::Joint => {
            let code = encode_tape(tape, p, SHARED_ENCODER, tape.constant(s.input.clone())?)?;
            let shape = decode_shape_tape(tape, p, cfg, code)?;
            let raw = decode_pose_tape(tape, p, code)?;
            let cd = chamfer_tape(tape, shape.fine, &s.complete_sensor)?;
            let pl = pose_loss_tape(tape, raw, &s.gt_pose, &s.complete_canonical)?;
            Ok(joint_loss_tape(tape, cd, pl, p.get(S_CD)?, p.get(S_P)?)?)
        }
    }
}

fn check_stage<T>(stage: Stage, model: &ModelParams<T>) -> Result<(), TrainError> {
    if model.arch != stage.arch() {
        return Err(TrainError::WrongArch {
            stage,
            expected: stage.arch(),
            got: model.arch,
        });
    }
    Ok(())
}

/// Mean stage loss over `samples`, evaluated without recording.
pub fn stage_loss<T: Real>(model: &ModelParams<T>, stage: Stage, samples: &[Prepared<T>]) -> Result<f64, TrainError> {
    check_stage(stage, model)?;
    if samples.is_empty() {
        return Err(TrainError::InvalidArgument("no samples to evaluate".into()));
    }
    let sums = samples
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<f64, TrainError> {
            let tape = Tape::no_grad();
            let p = model.bind(&tape, |_| false)?;
            let mut total = 0.0;
            for s in chunk {
                let loss = stage_loss_tape(&tape, &p, &model.config, stage, s)?;
                total += tape.item(loss)?.as_f64();
            }
            Ok(total)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sums.into_iter().sum::<f64>() / samples.len() as f64)
}

/// Loss and per-parameter gradient; frozen parameters get `None`.
type LossGrad<T> = (f64, Vec<Option<Tensor<T>>>);

/// Mean loss and mean gradient of one batch. Frozen parameters get `None`.
fn batch_gradient<T: Real>(model: &ModelParams<T>, stage: Stage, batch: &[&Prepared<T>]) -> Result<LossGrad<T>, TrainError> {
    let inv = T::one() / T::of(batch.len() as f64);
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<LossGrad<T>, TrainError> {
            let tape = Tape::new();
            let p = model.bind(&tape, |n| stage.trains(n))?;
            let mut losses = Vec::with_capacity(chunk.len());
            for s in chunk {
                losses.push(stage_loss_tape(&tape, &p, &model.config, stage, s)?);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            let value = tape.item(total)?.as_f64();
            let scaled = tape.scale(total, inv)?;
            let mut grads = tape.backward(scaled)?;
            Ok((value, p.vars().iter().map(|&v| grads.take(v)).collect()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut loss = 0.0;
    let mut sum: Vec<Option<Tensor<T>>> = Vec::new();
    for (value, grads) in parts {
        loss += value;
        if sum.is_empty() {
            sum = grads;
            continue;
        }
        for (acc, g) in sum.iter_mut().zip(grads) {
            if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                acc.add_assign(&g);
            }
        }
    }
    Ok((loss / batch.len() as f64, sum))
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub val_loss: f64,
    pub s_cd: f64,
    pub s_p: f64,
    pub wall_ms: u128,
}

pub const LOG_HEADER: [&str; 7] = ["epoch", "stage", "train_loss", "val_loss", "s_cd", "s_p", "wall_ms"];

pub fn write_log_csv<W: Write>(w: W, rows: &[LogRow]) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LOG_HEADER)?;
    for r in rows {
        out.write_record([
            r.epoch.to_string(),
            r.stage.as_str().to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.s_cd.to_string(),
            r.s_p.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Outcome of one stage. The model passed to [`train_stage`] holds the
/// parameters of `best_epoch` afterwards.
#[derive(Clone, Debug)]
pub struct StageReport<T> {
    pub stage: Stage,
    /// Batch-mean training loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub log: Vec<LogRow>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Optimizer state at the best epoch.
    pub adam: AdamState<T>,
}

impl<T> StageReport<T> {
    pub fn record(&self) -> StageRecord {
        StageRecord {
            stage: self.stage,
            epoch: self.best_epoch,
            val_loss: self.best_val,
        }
    }
}

/// Optimizes the stage's trainable parameters with Adam (fresh state) for
/// up to `cfg.epochs` epochs. Batches are drawn from a shuffle keyed by
/// (seed, stage, epoch); a final partial batch is dropped. After each epoch
/// the validation loss is computed and the best parameters kept.
pub fn train_stage<T: Real>(
    stage: Stage,
    model: &mut ModelParams<T>,
    train: &[Prepared<T>],
    val: &[Prepared<T>],
    cfg: &TrainConfig,
) -> Result<StageReport<T>, TrainError> {
    cfg.validate()?;
    check_stage(stage, model)?;
    if val.is_empty() {
        return Err(TrainError::InvalidArgument("validation split is empty".into()));
    }
    if train.len() < cfg.batch_size {
        return Err(TrainError::InvalidArgument(format!(
            "training split has {} samples, fewer than one batch of {}",
            train.len(),
            cfg.batch_size
        )));
    }

    let mut adam = AdamState::new(model.tensors(), cfg.lr);
    let mut step_losses = Vec::new();
    let mut log = Vec::new();
    // (epoch, val loss, params, optimizer state) of the best epoch so far
    type Snapshot<T> = (usize, f64, Vec<Tensor<T>>, AdamState<T>);
    let mut best: Option<Snapshot<T>> = None;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut keyed_rng(cfg.seed, STREAM_BATCH, stage.index(), epoch as u64));
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for ids in order.chunks_exact(cfg.batch_size) {
            let batch: Vec<&Prepared<T>> = ids.iter().map(|&i| &train[i]).collect();
            let step = adam.step + 1;
            let non_finite = || TrainError::NonFinite {
                stage,
                step,
                samples: batch.iter().map(|s| (s.model_id, s.view_id)).collect(),
            };
            let (loss, grads) = match batch_gradient(model, stage, &batch) {
                Err(e) if e.is_non_finite() => return Err(non_finite()),
                other => other?,
            };
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(non_finite());
            }
            adam.step(model.tensors_mut(), &grads)?;
            step_losses.push(loss);
            epoch_loss += loss;
            steps += 1;
        }
        let train_loss = epoch_loss / steps as f64;
        let val_loss = stage_loss(model, stage, val)?;
        let (s_cd, s_p) = model.uncertainty();
        log.push(LogRow {
            epoch,
            stage,
            train_loss,
            val_loss,
            s_cd: s_cd.as_f64(),
            s_p: s_p.as_f64(),
            wall_ms: start.elapsed().as_millis(),
        });
        log::info!("{} epoch {epoch}: train {train_loss:.6} val {val_loss:.6}", stage.as_str());
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.tensors().to_vec(), adam.clone()));
        }
        if let Some(r) = cfg.target_reduction {
            let initial = step_losses[0];
            if train_loss <= initial - r * initial.abs() {
                break;
            }
        }
    }

    let (best_epoch, best_val, tensors, adam) = best.expect("at least one epoch ran");
    model.tensors_mut().clone_from_slice(&tensors);
    Ok(StageReport {
        stage,
        step_losses,
        log,
        best_epoch,
        best_val,
        adam,
    })
}

/// Fresh initialization followed by every stage of `protocol`, each
/// starting from the previous stage's best parameters.
pub fn run_protocol<T: Real>(
    protocol: Protocol,
    train: &[Prepared<T>],
    val: &[Prepared<T>],
    net: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint<T>, Vec<StageReport<T>>), TrainError> {
    net.validate()?;
    cfg.validate()?;
    let mut model = ModelParams::init(protocol.arch(), net.clone(), cfg.seed);
    let mut reports: Vec<StageReport<T>> = Vec::new();
    for &stage in protocol.stages() {
        reports.push(train_stage(stage, &mut model, train, val, cfg)?);
    }
    let last = reports.last().expect("every protocol has stages");
    let checkpoint = Checkpoint {
        adam: last.adam.clone(),
        params: model,
        history: reports.iter().map(StageReport::record).collect(),
        train: cfg.clone(),
    };
    Ok((checkpoint, reports))
}
