//! Training triples of (partial scan, complete surface sampling, pose),
//! their generation from procedural vehicles, model-level splits and
//! on-disk storage.

mod store;

pub use store::{
    read_dataset_dir, read_split, write_dataset_dir, write_split, DatasetManifest, ManifestEntry, Split, FORMAT_VERSION,
};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{transform_cloud, Frame, GeometryError, PlanarPose, PointCloud};
use crate::kv::{KvError, KvMap};
use crate::simulator::{
    gen_vehicle_mesh, scan, uniform_surface_sample, ScenePlacement, SensorConfig, SimulatorError, VehicleClass, VehicleSpec,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("no usable samples were generated")]
    NoUsableSamples,
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error("model {0} appears in both train and validation splits")]
    SplitLeak(u32),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training triple. Values are kept in f64; files store f32.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Scan in the Sensor frame.
    pub partial: PointCloud<f64>,
    /// Exterior surface sampling in the Canonical frame.
    pub complete: PointCloud<f64>,
    /// Canonical → Sensor pose of the vehicle.
    pub gt_pose: PlanarPose<f64>,
    pub model_id: u32,
    pub view_id: u32,
}

impl Sample {
    /// Every value rounded through f32, as it would be after a save/load.
    pub fn quantized(&self) -> Sample {
        let q = |c: &PointCloud<f64>| c.cast::<f32>().cast::<f64>();
        Sample {
            partial: q(&self.partial),
            complete: q(&self.complete),
            gt_pose: self.gt_pose.cast::<f32>().cast::<f64>(),
            model_id: self.model_id,
            view_id: self.view_id,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct model ids in ascending order.
    pub fn model_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.model_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub models: usize,
    pub views_per_model: usize,
    /// Points in every complete cloud.
    pub n_complete: usize,
    /// Scans with fewer points are redrawn.
    pub min_points: usize,
    /// Placements tried per view before the view is skipped.
    pub max_attempts: usize,
    pub min_range: f64,
    pub max_range: f64,
    pub sensor: SensorConfig,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            models: 8,
            views_per_model: 16,
            n_complete: 1024,
            min_points: 16,
            max_attempts: 8,
            min_range: 5.0,
            max_range: 35.0,
            sensor: SensorConfig::default(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.models == 0 || self.views_per_model == 0 {
            return Err(DatasetError::InvalidArgument("models and views must be at least 1".into()));
        }
        if self.n_complete == 0 || self.max_attempts == 0 {
            return Err(DatasetError::InvalidArgument(
                "n_complete and max_attempts must be at least 1".into(),
            ));
        }
        if !(self.min_range > 0.0 && self.min_range <= self.max_range) {
            return Err(DatasetError::InvalidArgument(format!(
                "bad placement range [{}, {}]",
                self.min_range, self.max_range
            )));
        }
        self.sensor.validate()?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("models", self.models);
        m.set("views_per_model", self.views_per_model);
        m.set("n_complete", self.n_complete);
        m.set("min_points", self.min_points);
        m.set("max_attempts", self.max_attempts);
        m.set("min_range", self.min_range);
        m.set("max_range", self.max_range);
        m.set("seed", self.seed);
        m.extend_prefixed("sensor.", &self.sensor.to_kv());
        m
    }

    /// Absent keys keep their defaults.
    pub fn from_kv(m: &KvMap) -> Result<Self, DatasetError> {
        let d = Self::default();
        let cfg = Self {
            models: m.get("models")?.unwrap_or(d.models),
            views_per_model: m.get("views_per_model")?.unwrap_or(d.views_per_model),
            n_complete: m.get("n_complete")?.unwrap_or(d.n_complete),
            min_points: m.get("min_points")?.unwrap_or(d.min_points),
            max_attempts: m.get("max_attempts")?.unwrap_or(d.max_attempts),
            min_range: m.get("min_range")?.unwrap_or(d.min_range),
            max_range: m.get("max_range")?.unwrap_or(d.max_range),
            sensor: SensorConfig::from_kv(&m.section("sensor."))?,
            seed: m.get("seed")?.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

const STREAM_VEHICLE: u64 = 1;
const STREAM_SURFACE: u64 = 2;
const STREAM_VIEW: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_RESAMPLE: u64 = 5;
const STREAM_SAMPLE: u64 = 6;
pub(crate) const STREAM_BATCH: u64 = 7;

/// Independent generator keyed by (seed, purpose, a, b).
pub(crate) fn keyed_rng(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, stream, a, b]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed for per-sample randomness (e.g. input resampling) under a run seed.
pub fn sample_seed(seed: u64, model_id: u32, view_id: u32) -> u64 {
    keyed_rng(seed, STREAM_SAMPLE, model_id as u64, view_id as u64).random()
}

/// Vehicle specification of a model; classes cycle through every type.
pub fn model_spec(seed: u64, model_id: u32) -> VehicleSpec {
    let class = VehicleClass::ALL[model_id as usize % VehicleClass::ALL.len()];
    let spec_seed = keyed_rng(seed, STREAM_VEHICLE, model_id as u64, 0).random();
    VehicleSpec::sample(class, spec_seed)
}

fn generate_model(cfg: &GenConfig, model_id: u32) -> Result<Vec<Sample>, DatasetError> {
    let mesh = gen_vehicle_mesh(&model_spec(cfg.seed, model_id))?;
    let surface_seed = keyed_rng(cfg.seed, STREAM_SURFACE, model_id as u64, 0).random();
    let complete = uniform_surface_sample(&mesh, cfg.n_complete, surface_seed)?;
    let mut out = Vec::with_capacity(cfg.views_per_model);
    for view_id in 0..cfg.views_per_model as u32 {
        let mut rng = keyed_rng(cfg.seed, STREAM_VIEW, model_id as u64, view_id as u64);
        let mut accepted = None;
        for _ in 0..cfg.max_attempts {
            let placement = ScenePlacement::random(&mut rng, cfg.min_range, cfg.max_range, cfg.sensor.height);
            let partial = scan(&mesh, &placement, &cfg.sensor)?;
            if partial.len() >= cfg.min_points.max(1) {
                accepted = Some((partial, placement.pose));
                break;
            }
        }
        match accepted {
            Some((partial, gt_pose)) => out.push(Sample {
                partial,
                complete: complete.clone(),
                gt_pose,
                model_id,
                view_id,
            }),
            None => log::warn!(
                "model {model_id} view {view_id}: no scan with {} points after {} placements, skipped",
                cfg.min_points,
                cfg.max_attempts
            ),
        }
    }
    Ok(out)
}

/// Generates `models × views_per_model` samples, skipping views whose scans
/// stay below `min_points`. Models are processed in parallel; the result is
/// a deterministic function of the configuration.
pub fn generate(cfg: &GenConfig) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let per_model = (0..cfg.models as u32)
        .into_par_iter()
        .map(|m| generate_model(cfg, m))
        .collect::<Result<Vec<_>, _>>()?;
    let samples: Vec<Sample> = per_model.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(DatasetError::NoUsableSamples);
    }
    Ok(Dataset::new(samples))
}

/// Model ids held out for validation: a seeded shuffle of the distinct ids,
/// first `holdout_models` taken, returned sorted.
pub fn holdout_ids(dataset: &Dataset, holdout_models: usize, seed: u64) -> Result<Vec<u32>, DatasetError> {
    let mut ids = dataset.model_ids();
    if holdout_models > 0 && holdout_models >= ids.len() {
        return Err(DatasetError::InvalidArgument(format!(
            "cannot hold out {holdout_models} of {} models",
            ids.len()
        )));
    }
    ids.shuffle(&mut keyed_rng(seed, STREAM_SPLIT, 0, 0));
    let mut held: Vec<u32> = ids.into_iter().take(holdout_models).collect();
    held.sort_unstable();
    Ok(held)
}

/// Splits by model: validation receives every sample of the held-out models.
pub fn split(dataset: &Dataset, holdout_models: usize, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    let held = holdout_ids(dataset, holdout_models, seed)?;
    let (val, train): (Vec<Sample>, Vec<Sample>) = dataset
        .samples
        .iter()
        .cloned()
        .partition(|s| held.binary_search(&s.model_id).is_ok());
    Ok((Dataset::new(train), Dataset::new(val)))
}

/// Fails if any model id occurs in both splits.
pub fn check_no_leak(train: &Dataset, val: &Dataset) -> Result<(), DatasetError> {
    let train_ids = train.model_ids();
    match val.model_ids().into_iter().find(|id| train_ids.binary_search(id).is_ok()) {
        Some(id) => Err(DatasetError::SplitLeak(id)),
        None => Ok(()),
    }
}

/// Brings a Sensor-frame scan into the vehicle's Canonical frame.
pub fn canonicalize(partial: &PointCloud<f64>, pose: &PlanarPose<f64>) -> Result<PointCloud<f64>, GeometryError> {
    Ok(transform_cloud(partial, &pose.inverse())?.with_frame(Frame::Canonical))
}

/// Exactly `n` points: a subsample without replacement when the cloud is
/// large enough, otherwise draws with replacement.
pub fn resample_to<T: crate::scalar::Real>(cloud: &PointCloud<T>, n: usize, seed: u64) -> Result<PointCloud<T>, GeometryError> {
    cloud.ensure_non_empty()?;
    let mut rng = keyed_rng(seed, STREAM_RESAMPLE, cloud.len() as u64, n as u64);
    let pts = cloud.points();
    let picked = if pts.len() >= n {
        index::sample(&mut rng, pts.len(), n).into_iter().map(|i| pts[i]).collect()
    } else {
        (0..n).map(|_| pts[rng.random_range(0..pts.len())]).collect()
    };
    PointCloud::new(picked, cloud.frame())
}
