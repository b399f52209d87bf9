use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use masc_cli::commands::{self, EvalRequest, LEARNED_POLICIES, MAR_CHECKPOINT};
use masc_cli::{Accel, RunConfig};
use masc_core::policies::BaselineKind;

#[derive(Parser)]
#[command(name = "masc", version, about = "Metal-aware active MRI acquisition pipeline")]
struct Cli {
    /// Run configuration (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Acceleration preset (10x or 5x); overrides the config.
    #[arg(long, global = true)]
    accel: Option<Accel>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Dataset directory; overrides `data_dir`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Extra `key=value` config overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/val/test datasets and a manifest.
    GenData,
    /// Pretrain the restoration network on fully sampled pairs.
    PretrainMar,
    /// Co-adaptive policy and restoration training.
    TrainMasc {
        #[arg(long)]
        mar_checkpoint: Option<PathBuf>,
    },
    /// PPO on raw reconstructions, no restoration network.
    TrainPpoRaw,
    /// DQN baseline on raw reconstructions.
    TrainDqn {
        /// Use the double-Q target.
        #[arg(long)]
        double: bool,
    },
    /// Evaluate policies on the test split.
    Evaluate {
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',', default_value = "center-out,random,random-lowbias,equispaced,masc")]
        policies: Vec<String>,
        /// Only rows with the restoration network.
        #[arg(long)]
        with_mar: bool,
        /// Only rows without the restoration network.
        #[arg(long)]
        no_mar: bool,
        /// Pretrained restoration checkpoint (default: <models>/mar.ck).
        #[arg(long)]
        mar_checkpoint: Option<PathBuf>,
        /// Directory with checkpoints under their default names (default: --out).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Checkpoint override, e.g. `masc=path/to/policy.ck`.
        #[arg(long = "checkpoint", value_name = "KEY=PATH")]
        checkpoints: Vec<String>,
    },
}

fn key_value(s: &str) -> anyhow::Result<(&str, &str)> {
    s.split_once('=').map(|(k, v)| (k.trim(), v.trim())).with_context(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(accel) = cli.accel {
        cfg.accel = accel;
    }
    if let Some(data) = &cli.data {
        cfg.data_dir = data.clone();
    }
    for s in &cli.sets {
        let (k, v) = key_value(s)?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, out)?,
        Command::PretrainMar => {
            commands::pretrain(&cfg, out)?;
        }
        Command::TrainMasc { mar_checkpoint } => commands::train_masc(&cfg, out, mar_checkpoint.as_deref())?,
        Command::TrainPpoRaw => commands::train_ppo_raw(&cfg, out)?,
        Command::TrainDqn { double } => commands::train_dqn(&cfg, out, double)?,
        Command::Evaluate { policies, with_mar, no_mar, mar_checkpoint, models, checkpoints } => {
            for p in &policies {
                if BaselineKind::from_name(p).is_none() && !LEARNED_POLICIES.contains(&p.as_str()) {
                    bail!("unknown policy `{p}`");
                }
            }
            let mar_modes = match (with_mar, no_mar) {
                (true, false) => vec![true],
                (false, true) => vec![false],
                _ => vec![false, true],
            };
            let models = models.unwrap_or_else(|| out.to_path_buf());
            let checkpoints = checkpoints.iter().map(|s| key_value(s).map(|(k, v)| (k.to_string(), PathBuf::from(v)))).collect::<anyhow::Result<_>>()?;
            let mar_checkpoint = mar_checkpoint.or_else(|| Some(models.join(MAR_CHECKPOINT)));
            let req = EvalRequest { policies, mar_modes, mar_checkpoint, models, checkpoints };
            commands::evaluate(&cfg, out, &req)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
