//! `.lsds` split files and the plain-text manifest.
//!
//! Split layout, little-endian: `LSDS`, u32 version, u32 sample count, then
//! per sample u32 model_id, u32 view_id, u32 partial length, u32 complete
//! length, f32 yaw/tx/ty/tz, partial xyz floats, complete xyz floats.

use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{check_no_leak, Dataset, DatasetError, GenConfig, Sample};
use crate::fsutil::write_atomic;
use crate::geometry::{Frame, PlanarPose, Point3, PointCloud};
use crate::kv::{join_list, KvMap};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LSDS";
const HEADER_BYTES: u64 = 12;

pub const TRAIN_FILE: &str = "train.lsds";
pub const VAL_FILE: &str = "val.lsds";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub model_id: u32,
    pub view_id: u32,
    pub split: Split,
    /// Byte offset of the record inside its split file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub gen: GenConfig,
    pub holdout_models: usize,
    pub split_seed: u64,
    pub val_models: Vec<u32>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("format_version", self.format_version);
        m.set("holdout_models", self.holdout_models);
        m.set("split_seed", self.split_seed);
        m.set("val_models", join_list(&self.val_models));
        m.extend_prefixed("gen.", &self.gen.to_kv());
        m.set("samples", self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            m.set(
                &format!("sample.{i}"),
                format!("{},{},{},{}", e.model_id, e.view_id, e.split.as_str(), e.offset),
            );
        }
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, DatasetError> {
        let format_version = m.require("format_version")?;
        if format_version != FORMAT_VERSION {
            return Err(DatasetError::Format(format!("unsupported manifest version {format_version}")));
        }
        let count: usize = m.require("samples")?;
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let key = format!("sample.{i}");
            let raw: String = m.require(&key)?;
            let bad = || DatasetError::Format(format!("{key}: '{raw}'"));
            let parts: Vec<&str> = raw.split(',').collect();
            let [model, view, split, offset] = parts[..] else {
                return Err(bad());
            };
            entries.push(ManifestEntry {
                model_id: model.parse().map_err(|_| bad())?,
                view_id: view.parse().map_err(|_| bad())?,
                split: match split {
                    "train" => Split::Train,
                    "val" => Split::Val,
                    _ => return Err(bad()),
                },
                offset: offset.parse().map_err(|_| bad())?,
            });
        }
        Ok(Self {
            format_version,
            gen: GenConfig::from_kv(&m.section("gen."))?,
            holdout_models: m.require("holdout_models")?,
            split_seed: m.require("split_seed")?,
            val_models: m.get_list("val_models")?.unwrap_or_default(),
            entries,
        })
    }
}

fn write_cloud<W: Write>(w: &mut W, cloud: &PointCloud<f64>) -> std::io::Result<()> {
    for p in cloud.points() {
        w.write_f32::<LE>(p.x as f32)?;
        w.write_f32::<LE>(p.y as f32)?;
        w.write_f32::<LE>(p.z as f32)?;
    }
    Ok(())
}

fn record_bytes(s: &Sample) -> u64 {
    16 + 16 + 12 * (s.partial.len() + s.complete.len()) as u64
}

/// Writes one split and returns each record's byte offset.
pub fn write_split<W: Write>(mut w: W, dataset: &Dataset) -> Result<Vec<u64>, DatasetError> {
    let count = u32::try_from(dataset.len()).map_err(|_| DatasetError::InvalidArgument("too many samples".into()))?;
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u32::<LE>(count)?;
    let mut offsets = Vec::with_capacity(dataset.len());
    let mut offset = HEADER_BYTES;
    for s in &dataset.samples {
        offsets.push(offset);
        offset += record_bytes(s);
        w.write_u32::<LE>(s.model_id)?;
        w.write_u32::<LE>(s.view_id)?;
        w.write_u32::<LE>(s.partial.len() as u32)?;
        w.write_u32::<LE>(s.complete.len() as u32)?;
        for v in [s.gt_pose.yaw(), s.gt_pose.tx, s.gt_pose.ty, s.gt_pose.tz] {
            w.write_f32::<LE>(v as f32)?;
        }
        write_cloud(&mut w, &s.partial)?;
        write_cloud(&mut w, &s.complete)?;
    }
    w.flush()?;
    Ok(offsets)
}

fn read_cloud<R: Read>(r: &mut R, n: usize, frame: Frame) -> Result<PointCloud<f64>, DatasetError> {
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let x = r.read_f32::<LE>()? as f64;
        let y = r.read_f32::<LE>()? as f64;
        let z = r.read_f32::<LE>()? as f64;
        pts.push(Point3::new(x, y, z));
    }
    Ok(PointCloud::new(pts, frame)?)
}

pub fn read_split<R: Read>(r: R) -> Result<Dataset, DatasetError> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DatasetError::Format("bad magic".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::Format(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LE>()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let model_id = r.read_u32::<LE>()?;
        let view_id = r.read_u32::<LE>()?;
        let np = r.read_u32::<LE>()? as usize;
        let nc = r.read_u32::<LE>()? as usize;
        let mut pose = [0f64; 4];
        for v in &mut pose {
            *v = r.read_f32::<LE>()? as f64;
        }
        samples.push(Sample {
            gt_pose: PlanarPose::new(pose[0], pose[1], pose[2], pose[3]),
            partial: read_cloud(&mut r, np, Frame::Sensor)?,
            complete: read_cloud(&mut r, nc, Frame::Canonical)?,
            model_id,
            view_id,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DatasetError::Format("trailing bytes".into()));
    }
    Ok(Dataset::new(samples))
}

/// Writes `train.lsds`, `val.lsds` and `manifest.txt` into `dir`.
pub fn write_dataset_dir(
    dir: &Path,
    gen: &GenConfig,
    holdout_models: usize,
    split_seed: u64,
    train: &Dataset,
    val: &Dataset,
) -> Result<DatasetManifest, DatasetError> {
    check_no_leak(train, val)?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(train.len() + val.len());
    let mut files = Vec::new();
    for (split, data, name) in [(Split::Train, train, TRAIN_FILE), (Split::Val, val, VAL_FILE)] {
        let mut bytes = Vec::new();
        let offsets = write_split(&mut bytes, data)?;
        entries.extend(data.samples.iter().zip(offsets).map(|(s, offset)| ManifestEntry {
            model_id: s.model_id,
            view_id: s.view_id,
            split,
            offset,
        }));
        files.push((name, bytes));
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        gen: gen.clone(),
        holdout_models,
        split_seed,
        val_models: val.model_ids(),
        entries,
    };
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &bytes)?;
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_kv().to_text().as_bytes())?;
    Ok(manifest)
}

/// Loads both splits and checks them against the manifest.
pub fn read_dataset_dir(dir: &Path) -> Result<(Dataset, Dataset, DatasetManifest), DatasetError> {
    let manifest = DatasetManifest::from_kv(&KvMap::parse(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)?;
    let train = read_split(fs::File::open(dir.join(TRAIN_FILE))?)?;
    let val = read_split(fs::File::open(dir.join(VAL_FILE))?)?;
    check_no_leak(&train, &val)?;
    let listed: Vec<(u32, u32, Split)> = manifest.entries.iter().map(|e| (e.model_id, e.view_id, e.split)).collect();
    let found: Vec<(u32, u32, Split)> = train
        .samples
        .iter()
        .map(|s| (s.model_id, s.view_id, Split::Train))
        .chain(val.samples.iter().map(|s| (s.model_id, s.view_id, Split::Val)))
        .collect();
    if listed != found {
        return Err(DatasetError::Format("manifest does not match split files".into()));
    }
    Ok((train, val, manifest))
}

#[cfg(test)]
mod tests {
    use super::super::{generate, split};
    use super::*;

    fn small() -> (GenConfig, Dataset) {
        let cfg = GenConfig {
            models: 3,
            views_per_model: 3,
            n_complete: 32,
            seed: 5,
            ..GenConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        (cfg, ds)
    }

    #[test]
    fn split_file_round_trip_at_f32_precision() {
        let (_, ds) = small();
        let mut bytes = Vec::new();
        let offsets = write_split(&mut bytes, &ds).unwrap();
        let back = read_split(bytes.as_slice()).unwrap();
        let expected = Dataset::new(ds.samples.iter().map(Sample::quantized).collect());
        assert_eq!(back, expected);
        // offsets point at each record's model id
        for (s, &o) in ds.samples.iter().zip(&offsets) {
            let o = o as usize;
            assert_eq!(u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()), s.model_id);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let (_, ds) = small();
        let mut bytes = Vec::new();
        write_split(&mut bytes, &ds).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_split(bad.as_slice()), Err(DatasetError::Format(_))));
        assert!(read_split(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_split(long.as_slice()).is_err());
    }

    #[test]
    fn directory_round_trip_is_byte_stable() {
        let (cfg, ds) = small();
        let (train, val) = split(&ds, 1, 2).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let manifest = write_dataset_dir(a.path(), &cfg, 1, 2, &train, &val).unwrap();
        write_dataset_dir(b.path(), &cfg, 1, 2, &train, &val).unwrap();
        for name in [TRAIN_FILE, VAL_FILE, MANIFEST_FILE] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let (t2, v2, m2) = read_dataset_dir(a.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(t2.len(), train.len());
        assert_eq!(v2.model_ids(), manifest.val_models);
    }
}
