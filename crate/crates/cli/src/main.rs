//! `lps`: dataset generation, training, evaluation, inference and mesh
//! export.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use lidar_pose_shape::kv::KvMap;
use lidar_pose_shape::training::Protocol;

#[derive(Debug, Parser)]
#[command(name = "lps", version, about = "Vehicle pose and shape estimation from partial LiDAR scans")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed governing every random choice
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// key=value file of flag defaults (keys are long flag names); flags on the command line win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scans of procedural vehicles and write train/val splits
    GenDataset(GenArgs),
    /// Train one or all architectures on a generated dataset
    Train(TrainArgs),
    /// Evaluate checkpoints and write per-sample records and threshold curves
    Eval(EvalArgs),
    /// Estimate pose and completion for one PLY scan
    Infer(InferArgs),
    /// Write the procedural mesh of one vehicle model as OBJ
    ExportMesh(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Procedural vehicle models
    #[arg(long, default_value_t = 8)]
    pub models: usize,
    /// Scans per model
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    /// Surface samples of each complete cloud
    #[arg(long, default_value_t = 1024)]
    pub n_complete: usize,
    /// Fewest returns for a scan to be kept
    #[arg(long, default_value_t = 16)]
    pub min_points: usize,
    /// Placements tried per view before it is skipped
    #[arg(long, default_value_t = 8)]
    pub max_attempts: usize,
    /// Nearest vehicle distance in meters
    #[arg(long, default_value_t = 5.0)]
    pub min_range: f64,
    /// Farthest vehicle distance in meters
    #[arg(long, default_value_t = 35.0)]
    pub max_range: f64,
    /// Horizontal beam spacing in degrees
    #[arg(long, default_value_t = 1.0)]
    pub azimuth_step: f64,
    /// Models held out for validation
    #[arg(long, default_value_t = 2)]
    pub holdout: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchChoice {
    Baseline,
    Shared,
    Joint,
    All,
}

impl ArchChoice {
    pub fn protocols(self) -> Vec<Protocol> {
        match self {
            ArchChoice::Baseline => vec![Protocol::Baseline],
            ArchChoice::Shared => vec![Protocol::SharedEncoder],
            ArchChoice::Joint => vec![Protocol::JointSE],
            ArchChoice::All => Protocol::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-dataset
    #[arg(long)]
    pub data: PathBuf,
    /// Training protocol
    #[arg(long, value_enum, default_value_t = ArchChoice::Joint)]
    pub arch: ArchChoice,
    /// Epoch budget of every stage
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Samples per optimizer step
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Coarse completion points
    #[arg(long, default_value_t = 64)]
    pub n_coarse: usize,
    /// Folding grid side; each coarse point expands into grid² points
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    /// Points fed to the encoder after resampling
    #[arg(long, default_value_t = 256)]
    pub input_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory written by gen-dataset
    #[arg(long)]
    pub data: PathBuf,
    /// Architectures to evaluate, read as model-<arch>.lsck from the checkpoint directory
    #[arg(long, value_enum, default_value_t = ArchChoice::All)]
    pub arch: ArchChoice,
    /// Directory holding the checkpoints (default: the output directory)
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate this checkpoint file instead of looking one up by --arch
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split to evaluate; inputs are resampled with the checkpoint's training seed
    #[arg(long, value_enum, default_value_t = SplitChoice::Val)]
    pub split: SplitChoice,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// ASCII PLY scan in the sensor frame; resampled to the model's input size under --seed
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Vehicle model id, as numbered by gen-dataset under the same seed
    #[arg(long, default_value_t = 0)]
    pub model_id: u32,
}

/// Invalid invocation; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Parses `argv`, then re-parses with config-file entries appended for every
/// flag not given on the command line.
fn parse(mut argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let matches = Cli::command().try_get_matches_from(&argv)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    if let Some(path) = sub.get_one::<PathBuf>("config") {
        let usage = |msg: String| Cli::command().error(clap::error::ErrorKind::InvalidValue, msg);
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let kv = KvMap::parse(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let mut cmd = Cli::command();
        cmd.build();
        let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
        for (key, value) in kv.iter() {
            let arg = sub_cmd
                .get_arguments()
                .find(|a| a.get_long() == Some(key) && key != "config")
                .ok_or_else(|| usage(format!("config {}: unknown key '{key}' for {name}", path.display())))?;
            if sub.value_source(arg.get_id().as_str()) != Some(ValueSource::CommandLine) {
                argv.push(format!("--{key}={value}").into());
            }
        }
        let matches = Cli::command().try_get_matches_from(&argv)?;
        return Cli::from_arg_matches(&matches);
    }
    Cli::from_arg_matches(&matches)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
