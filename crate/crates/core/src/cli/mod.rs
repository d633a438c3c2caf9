//! The `adaptseg` command line: `prepare`, `train`, `eval`, `sweep` and
//! `synth`, sharing `--config`, `--seed` and `--output-dir`.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{SweepCell, SweepStatus, TrainResult};
pub use config::{DataConfig, IoConfig, RunConfig};

use crate::error::Result;
use crate::metrics::Layout;

#[derive(Debug, Parser)]
#[command(
    name = "adaptseg",
    version,
    about = "Two-step incremental domain adaptation for crack segmentation"
)]
pub struct Cli {
    /// TOML run configuration (sections: data, train, model, io).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for splits, initialization, batch order and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the 4:1 split manifest and a per-sub-dataset summary.
    Prepare(PrepareArgs),
    /// Run step 1 (supervised source training) or step 2 (adaptation).
    Train(TrainArgs),
    /// Evaluate checkpoints on the source and target pools.
    Eval(EvalArgs),
    /// Step-2 runs over a (lambda_ce, lambda_kld) grid, one process per cell.
    Sweep(SweepArgs),
    /// Write the two synthetic crack domains as dataset trees.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Dataset tree: `<root>/<sub_dataset>/images` with optional `masks`.
    #[arg(long, env = "ADAPTSEG_DATA_ROOT", value_name = "DIR")]
    pub root: Option<PathBuf>,

    /// Split manifest (default `<output-dir>/split.csv`).
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    /// Additional target tree; every sub-dataset under it joins the target
    /// pool (reported as `buildcrack` in the table2 layout).
    #[arg(long, value_name = "DIR")]
    pub target_root: Option<PathBuf>,

    /// Square input size in pixels.
    #[arg(long, value_name = "PX")]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Sub-dataset to hold out of the source splits.
    #[arg(long, value_name = "NAME")]
    pub exclude: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub step: u8,

    /// Step-1 checkpoint to adapt (required for `--step 2`).
    #[arg(long, value_name = "FILE")]
    pub from_checkpoint: Option<PathBuf>,

    /// Epochs of the selected step.
    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Segmentation epochs per step-2 cycle.
    #[arg(long)]
    pub seg_epochs: Option<usize>,

    /// Adversarial epochs per step-2 cycle.
    #[arg(long)]
    pub adv_epochs: Option<usize>,

    #[arg(long)]
    pub lambda_ce: Option<f64>,

    #[arg(long)]
    pub lambda_kld: Option<f64>,

    /// Steepness of the gradient-reversal coefficient ramp.
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Drop the KL anchoring term.
    #[arg(long)]
    pub no_kld: bool,

    /// Skip the adversarial epochs.
    #[arg(long)]
    pub no_grl: bool,

    /// Random horizontal flips of segmentation batches.
    #[arg(long)]
    pub hflip: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Checkpoints to evaluate (repeatable).
    #[arg(long = "checkpoint", value_name = "FILE", required = true)]
    pub checkpoints: Vec<PathBuf>,

    #[arg(long, default_value = "table3")]
    pub layout: Layout,

    /// Row label (default: the excluded sub-dataset, else `run`).
    #[arg(long)]
    pub row: Option<String>,

    /// Extra pool `NAME=DIR`; every sub-dataset under DIR is evaluated (repeatable).
    #[arg(long = "pool", value_name = "NAME=DIR")]
    pub pools: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Step-1 checkpoint every cell starts from.
    #[arg(long, value_name = "FILE")]
    pub from_checkpoint: PathBuf,

    /// lambda_ce values (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub ce: Option<Vec<f64>>,

    /// lambda_kld values (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub kld: Option<Vec<f64>>,

    /// Step-2 epochs per cell.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Images per domain.
    #[arg(long)]
    pub n: usize,

    /// Square image size in pixels (default: data.input_size).
    #[arg(long, value_name = "PX")]
    pub size: Option<usize>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let base = base_config(cli)?;
    match &cli.command {
        Command::Prepare(a) => commands::prepare(base, a),
        Command::Train(a) => commands::train(base, a).map(|_| ()),
        Command::Eval(a) => commands::eval(base, a).map(|_| ()),
        Command::Sweep(a) => commands::sweep(base, a).map(|_| ()),
        Command::Synth(a) => commands::synth(base, a),
    }
}

/// Config file (or defaults) with the global flags applied.
fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.io.output_dir = Some(dir.clone());
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("adaptseg").chain(args.iter().copied()))
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = parse(&["prepare", "--root", "d", "--exclude", "volker", "--seed", "7"]).unwrap();
        assert_eq!(cli.seed, Some(7));
        match cli.command {
            Command::Prepare(a) => assert_eq!(a.exclude.as_deref(), Some("volker")),
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn step_is_one_or_two() {
        assert!(parse(&["train", "--step", "3"]).is_err());
        assert!(parse(&["train", "--step", "2"]).is_ok());
    }

    #[test]
    fn defaults_follow_train_config() {
        let cfg = base_config(&parse(&["train", "--step", "1"]).unwrap())
            .unwrap()
            .finalize()
            .unwrap();
        assert_eq!(cfg.train.lr, 5e-4);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.step1_epochs, 150);
        assert_eq!(cfg.train.step2_total_epochs, 150);
        assert_eq!(
            (cfg.train.seg_epochs_per_cycle, cfg.train.adv_epochs_per_cycle),
            (10, 5)
        );
        assert_eq!(cfg.train.loss_weights.lambda_ce, 1.0);
        assert_eq!(cfg.train.loss_weights.lambda_kld, 0.1);
    }

    #[test]
    fn bad_layout_is_rejected_by_the_parser() {
        let err = parse(&["eval", "--checkpoint", "a", "--layout", "table9"]).unwrap_err();
        assert!(err.to_string().contains("table9"));
    }
}
