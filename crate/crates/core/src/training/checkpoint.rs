//! `.lsck` checkpoints.
//!
//! Layout, little-endian: `LSCK`, u32 version, u32 length and UTF-8 bytes of
//! a key=value config block, u32 tensor count, then per tensor u32 name
//! length, name, u32 rank, u32 dims and f32 values. The Adam first and
//! second moments follow as f32 values in parameter order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Stage, TrainConfig, TrainError};
use crate::autodiff::{AdamState, Tensor};
use crate::fsutil::write_atomic;
use crate::kv::{join_list, KvMap};
use crate::networks::{Arch, ModelParams, NetConfig};
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LSCK";
/// Largest name or config block accepted when reading.
const MAX_TEXT: u32 = 1 << 20;

/// Best epoch and validation loss of one completed stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    /// Completed stages in training order.
    pub history: Vec<StageRecord>,
    pub train: TrainConfig,
}

fn format_err(msg: impl Into<String>) -> TrainError {
    TrainError::Format(msg.into())
}

impl<T: Real> Checkpoint<T> {
    pub fn stages(&self) -> Vec<Stage> {
        self.history.iter().map(|r| r.stage).collect()
    }

    fn config_text(&self) -> String {
        let mut m = KvMap::new();
        m.set("arch", self.params.arch.as_str());
        m.extend_prefixed("net", &self.params.config.to_kv());
        m.extend_prefixed("train", &self.train.to_kv());
        m.set("adam.lr", self.adam.lr);
        m.set("adam.beta1", self.adam.beta1);
        m.set("adam.beta2", self.adam.beta2);
        m.set("adam.eps", self.adam.eps);
        m.set("adam.step", self.adam.step);
        let names: Vec<&str> = self.history.iter().map(|r| r.stage.as_str()).collect();
        m.set("stages", join_list(&names));
        for (i, r) in self.history.iter().enumerate() {
            m.set(&format!("stage.{i}.epoch"), r.epoch);
            m.set(&format!("stage.{i}.val_loss"), r.val_loss);
        }
        m.to_text()
    }

    /// Serializes with every value stored as f32.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        let text = self.config_text();
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(CHECKPOINT_VERSION)?;
        w.write_u32::<LE>(text.len() as u32)?;
        w.write_all(text.as_bytes())?;
        let tensors = self.params.tensors();
        w.write_u32::<LE>(tensors.len() as u32)?;
        let values = |w: &mut W, t: &Tensor<T>| -> std::io::Result<()> {
            t.data().iter().try_for_each(|v| w.write_f32::<LE>(v.as_f64() as f32))
        };
        for (name, t) in self.params.names().iter().zip(tensors) {
            w.write_u32::<LE>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LE>(t.shape().len() as u32)?;
            for &d in t.shape() {
                w.write_u32::<LE>(d as u32)?;
            }
            values(&mut w, t)?;
        }
        for m in self.adam.first_moment.iter().chain(&self.adam.second_moment) {
            values(&mut w, m)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// Writes through a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TrainError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = r.read_u32::<LE>()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let text = read_text(&mut r)?;
        let kv = KvMap::parse(&text)?;
        let arch: Arch = kv.require::<String>("arch")?.parse().map_err(format_err)?;
        let net = NetConfig::from_kv(&kv.section("net"))?;
        let train = TrainConfig::from_kv(&kv.section("train"))?;

        let count = r.read_u32::<LE>()? as usize;
        let mut named = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = read_text(&mut r)?;
            let rank = r.read_u32::<LE>()? as usize;
            if rank > 2 {
                return Err(format_err(format!("tensor '{name}' has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.read_u32::<LE>().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let t = read_values(&mut r, &shape)?;
            named.push((name, t));
        }
        let params = ModelParams::from_parts(arch, net, named)?;
        let read_moments = |r: &mut R| -> Result<Vec<Tensor<T>>, TrainError> {
            params.tensors().iter().map(|p| read_values(r, p.shape())).collect()
        };
        let first_moment = read_moments(&mut r)?;
        let second_moment = read_moments(&mut r)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(format_err(format!("{} trailing bytes", rest.len())));
        }
        let adam = AdamState {
            lr: kv.require("adam.lr")?,
            beta1: kv.require("adam.beta1")?,
            beta2: kv.require("adam.beta2")?,
            eps: kv.require("adam.eps")?,
            step: kv.require("adam.step")?,
            first_moment,
            second_moment,
        };
        let stages: Vec<String> = kv.get_list("stages")?.unwrap_or_default();
        let history = stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(StageRecord {
                    stage: s.parse().map_err(format_err)?,
                    epoch: kv.require(&format!("stage.{i}.epoch"))?,
                    val_loss: kv.require(&format!("stage.{i}.val_loss"))?,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Self {
            params,
            adam,
            history,
            train,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_text<R: Read>(r: &mut R) -> Result<String, TrainError> {
    let len = r.read_u32::<LE>()?;
    if len > MAX_TEXT {
        return Err(format_err(format!("text block of {len} bytes")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| format_err("text block is not UTF-8"))
}

fn read_values<T: Real, R: Read>(r: &mut R, shape: &[usize]) -> Result<Tensor<T>, TrainError> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| r.read_f32::<LE>().map(|v| T::of(v as f64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::new(shape.to_vec(), data)?)
}
