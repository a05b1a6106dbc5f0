//! The `cpseg` command line: phantom generation, training, inference,
//! evaluation and gradient checking.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cpseg::network::SupervisionStrategy;

pub use config::{MetricsConfig, RunConfig};
pub use error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "cpseg", version, about = "Cortical plate segmentation pipeline")]
pub struct Cli {
    /// TOML run configuration; missing fields take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset with a manifest.
    Phantom,
    /// Train a model on a phantom dataset.
    Train(TrainArgs),
    /// Sliding-window inference with a trained checkpoint.
    Infer(InferArgs),
    /// Per-case metrics for a prediction directory against references.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `cpseg phantom`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Deep supervision strategy; overrides the config
    #[arg(long, value_name = "STRATEGY", value_parser = parse_strategy)]
    pub supervision: Option<SupervisionStrategy>,
    /// Train the variant without attention modules.
    #[arg(long)]
    pub no_attention: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint written by `cpseg train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset directory; its cases of `--split` are inferred.
    #[arg(long, value_name = "DIR", conflicts_with = "inputs")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "test"], requires = "data")]
    pub split: String,
    /// Image volumes to segment.
    #[arg(value_name = "IMAGE", required_unless_present = "data")]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted masks
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Directory of reference labels
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    /// Second prediction set for paired t-tests against `--pred`.
    #[arg(long, value_name = "DIR")]
    pub compare: Option<PathBuf>,
    /// Write a surface error map per case.
    #[arg(long)]
    pub error_maps: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Scale the analytic gradient of the named suite (a test fixture).
    #[arg(long, value_name = "SUITE")]
    pub inject_fault: Option<String>,
}

fn parse_strategy(s: &str) -> Result<SupervisionStrategy, String> {
    SupervisionStrategy::ALL
        .into_iter()
        .find(|st| st.name() == s || matches!((s, st), ("sam", SupervisionStrategy::BackbonePlusAttentionMap) | ("saf", SupervisionStrategy::BackbonePlusAttentiveFeature)))
        .ok_or_else(|| {
            let names: Vec<_> = SupervisionStrategy::ALL.iter().map(|st| st.name()).collect();
            format!("expected one of {}", names.join(", "))
        })
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitKind::Usage as u8 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("--threads: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Command::Train(args) = &cli.command {
        if let Some(s) = args.supervision {
            cfg.model.supervision_strategy = s;
        }
        if args.no_attention {
            cfg.model.attention_enabled = false;
        }
    }
    let cfg = cfg.resolve(cli.seed)?;
    fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    match &cli.command {
        Command::Phantom => commands::phantom::run(&cfg, &cli.out),
        Command::Train(args) => commands::train::run(&cfg, args, &cli.out),
        Command::Infer(args) => commands::infer::run(cfg, args, &cli.out),
        Command::Eval(args) => commands::eval::run(&cfg, args, &cli.out),
        Command::Gradcheck(args) => commands::gradcheck::run(&cfg, args, &cli.out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_parse() {
        for s in SupervisionStrategy::ALL {
            assert_eq!(parse_strategy(s.name()).unwrap(), s);
        }
        assert_eq!(parse_strategy("sam").unwrap(), SupervisionStrategy::BackbonePlusAttentionMap);
        assert!(parse_strategy("everything").is_err());
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = Cli::try_parse_from(["cpseg", "gradcheck", "--seed", "4", "--out", "x"]).unwrap();
        assert_eq!(cli.seed, Some(4));
        assert_eq!(cli.out, PathBuf::from("x"));
    }

    #[test]
    fn infer_needs_inputs_or_data() {
        assert!(Cli::try_parse_from(["cpseg", "infer", "--checkpoint", "m.ckpt"]).is_err());
        assert!(Cli::try_parse_from(["cpseg", "infer", "--checkpoint", "m.ckpt", "a.nii"]).is_ok());
        assert!(Cli::try_parse_from(["cpseg", "infer", "--checkpoint", "m.ckpt", "--data", "d"]).is_ok());
    }

    #[test]
    fn usage_errors_exit_1_and_help_exits_0() {
        assert_eq!(run(["cpseg", "frobnicate"]), 1);
        assert_eq!(run(["cpseg", "--help"]), 0);
    }
}
