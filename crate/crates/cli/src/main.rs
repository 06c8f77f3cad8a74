//! `mcl`: corpus generation, motion precompute, pretraining and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use mcl_core::MclError;

#[derive(Parser)]
#[command(name = "mcl", version, about = "Motion-focused contrastive learning of video representations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON config; fields it omits keep the preset's values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base preset: desk or paper-scale.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where the subcommand writes: the corpus for gen-data, the caches for
    /// precompute-motion, the run directory otherwise.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set sampler.percentile_q=95`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the synthetic corpus (frames, ground truth, manifest).
    GenData,
    /// Estimate flow and write per-video motion caches.
    PrecomputeMotion {
        /// Recompute caches that already exist.
        #[arg(long)]
        force: bool,
    },
    /// Contrastive pretraining with the configured MAL variant.
    Pretrain {
        /// Run the baseline / TA+SA / TA+SA+MAL ablation into <out>/<arm>.
        #[arg(long)]
        grid: bool,
        /// Continue from the run's last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Linear probe on frozen features; writes probe.json.
    Probe {
        /// Defaults to <out>/checkpoints/last.mclk.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Nearest-neighbour retrieval R@k; writes retrieval.json.
    Retrieve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = mcl_core::evalkit::DEFAULT_KS)]
        ks: Vec<usize>,
    },
    /// GradCAM overlays for the given videos under <out>/saliency.
    Visualize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Video id from the manifest (repeatable).
        #[arg(long = "video", required = true)]
        videos: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = config::resolve(&cli.common, &cli.cmd).and_then(|cfg| match cli.cmd {
        Cmd::GenData => commands::gen_data(&cfg),
        Cmd::PrecomputeMotion { force } => commands::precompute(&cfg, force),
        Cmd::Pretrain { grid, resume } => commands::pretrain(&cfg, grid, resume),
        Cmd::Probe { checkpoint } => commands::probe(&cfg, checkpoint),
        Cmd::Retrieve { checkpoint, ks } => commands::retrieve(&cfg, checkpoint, &ks),
        Cmd::Visualize { checkpoint, videos } => commands::visualize(&cfg, checkpoint, &videos),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                MclError::Validation(_) | MclError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
