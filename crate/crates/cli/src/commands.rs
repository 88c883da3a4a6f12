use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lidar_pose_shape::dataset::{generate, model_spec, read_dataset_dir, split, write_dataset_dir, GenConfig};
use lidar_pose_shape::eval::{
    curves_file_name, default_curves, evaluate, protocol_of, records_file_name, summarize, write_curves_csv, write_records_csv,
};
use lidar_pose_shape::fsutil::write_atomic;
use lidar_pose_shape::geometry::{read_ply, write_obj, write_ply, Frame, PointCloud};
use lidar_pose_shape::kv::KvMap;
use lidar_pose_shape::networks::{forward, NetConfig};
use lidar_pose_shape::simulator::gen_vehicle_mesh;
use lidar_pose_shape::training::{model_input, prepare, run_protocol, write_log_csv, Checkpoint, Protocol, TrainConfig};

use crate::{Cli, Command, EvalArgs, ExportArgs, GenArgs, InferArgs, SplitChoice, TrainArgs, Usage};

pub fn checkpoint_file_name(p: Protocol) -> String {
    format!("model-{}.lsck", p.as_str())
}

pub fn log_file_name(p: Protocol) -> String {
    format!("train-{}.csv", p.as_str())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let out = &cli.common.out_dir;
    let seed = cli.common.seed;
    match &cli.command {
        Command::GenDataset(a) => gen_dataset(a, seed, out),
        Command::Train(a) => train(a, seed, out),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, seed, out),
        Command::ExportMesh(a) => export_mesh(a, seed, out),
    }
}

fn gen_dataset(a: &GenArgs, seed: u64, out: &Path) -> Result<()> {
    let mut cfg = GenConfig {
        models: a.models,
        views_per_model: a.views,
        n_complete: a.n_complete,
        min_points: a.min_points,
        max_attempts: a.max_attempts,
        min_range: a.min_range,
        max_range: a.max_range,
        seed,
        ..GenConfig::default()
    };
    cfg.sensor.azimuth_step_deg = a.azimuth_step;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.holdout >= a.models {
        return Err(usage(format!("--holdout {} must be below --models {}", a.holdout, a.models)));
    }

    let data = generate(&cfg)?;
    let (train, val) = split(&data, a.holdout, seed)?;
    write_dataset_dir(out, &cfg, a.holdout, seed, &train, &val)?;
    println!(
        "wrote {} training and {} validation samples to {}",
        train.len(),
        val.len(),
        out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs, seed: u64, out: &Path) -> Result<()> {
    let net = NetConfig {
        n_coarse: a.n_coarse,
        grid: a.grid,
        input_points: a.input_points,
        ..NetConfig::default()
    };
    net.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed,
        target_reduction: None,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    require_dir(&a.data, "dataset directory")?;

    let (train, val, _) = read_dataset_dir(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    let train = prepare::<f32>(&train, &net, seed)?;
    let val = prepare::<f32>(&val, &net, seed)?;
    fs::create_dir_all(out)?;
    for protocol in a.arch.protocols() {
        let (ck, reports) =
            run_protocol(protocol, &train, &val, &net, &cfg).with_context(|| format!("training {}", protocol.as_str()))?;
        let rows: Vec<_> = reports.iter().flat_map(|r| r.log.iter().cloned()).collect();
        let mut log = Vec::new();
        write_log_csv(&mut log, &rows)?;
        ck.save(&out.join(checkpoint_file_name(protocol)))?;
        write_atomic(&out.join(log_file_name(protocol)), &log)?;
        for r in &reports {
            println!(
                "{} {}: best epoch {} validation loss {}",
                protocol.as_str(),
                r.stage.as_str(),
                r.best_epoch,
                r.best_val
            );
        }
    }
    Ok(())
}

fn eval(a: &EvalArgs, out: &Path) -> Result<()> {
    require_dir(&a.data, "dataset directory")?;
    let paths: Vec<PathBuf> = match &a.checkpoint {
        Some(p) => vec![p.clone()],
        None => {
            let dir = a.checkpoint_dir.as_deref().unwrap_or(out);
            a.arch
                .protocols()
                .into_iter()
                .map(|p| dir.join(checkpoint_file_name(p)))
                .collect()
        }
    };
    for p in &paths {
        require_file(p, "checkpoint")?;
    }

    let (train, val, _) = read_dataset_dir(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    let data = match a.split {
        SplitChoice::Train => train,
        SplitChoice::Val => val,
    };
    let mut reports = Vec::new();
    for path in &paths {
        let ck = Checkpoint::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
        let protocol = protocol_of(&ck);
        let records = evaluate(&ck, &data)?;
        let mut rec_csv = Vec::new();
        write_records_csv(&mut rec_csv, &records)?;
        let mut curve_csv = Vec::new();
        write_curves_csv(&mut curve_csv, &default_curves(&records)?)?;
        reports.push((protocol, summarize(&records), rec_csv, curve_csv));
    }
    fs::create_dir_all(out)?;
    for (protocol, s, rec_csv, curve_csv) in reports {
        write_atomic(&out.join(records_file_name(protocol)), &rec_csv)?;
        write_atomic(&out.join(curves_file_name(protocol)), &curve_csv)?;
        println!(
            "{}: samples {} mean_cd {} mean_heading_err {} mean_trans_err {}",
            protocol.as_str(),
            s.count,
            s.mean_cd,
            s.mean_heading_err,
            s.mean_trans_err
        );
    }
    Ok(())
}

pub const POSE_FILE: &str = "pose.txt";
pub const COMPLETION_FILE: &str = "completion.ply";

fn infer(a: &InferArgs, seed: u64, out: &Path) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input scan")?;
    let ck = Checkpoint::<f32>::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let scan: PointCloud<f64> = read_ply(BufReader::new(fs::File::open(&a.input)?))
        .with_context(|| format!("reading {}", a.input.display()))?
        .with_frame(Frame::Sensor);
    let input = model_input(&scan, &ck.params.config, seed, 0, 0)?;
    let (pose, completion) = forward(&input.cast::<f32>(), &ck.params)?;

    let mut kv = KvMap::new();
    kv.set("arch", protocol_of(&ck).as_str());
    kv.set("yaw", pose.yaw());
    kv.set("tx", pose.tx);
    kv.set("ty", pose.ty);
    kv.set("tz", pose.tz);
    let mut ply = Vec::new();
    write_ply(&mut ply, &completion)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join(POSE_FILE), kv.to_text().as_bytes())?;
    write_atomic(&out.join(COMPLETION_FILE), &ply)?;
    print!("{}", kv.to_text());
    Ok(())
}

fn export_mesh(a: &ExportArgs, seed: u64, out: &Path) -> Result<()> {
    let spec = model_spec(seed, a.model_id);
    let mesh = gen_vehicle_mesh(&spec)?;
    let mut obj = Vec::new();
    write_obj(&mut obj, &mesh)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("vehicle-{}.obj", a.model_id));
    write_atomic(&path, &obj)?;
    println!(
        "wrote {} ({}, {} triangles)",
        path.display(),
        spec.class.as_str(),
        mesh.triangles().len()
    );
    Ok(())
}
