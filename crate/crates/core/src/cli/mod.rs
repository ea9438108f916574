//! Command-line front end: feature extraction, key point export, the
//! invariance self-test, training and evaluation.

pub mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
pub use config::{parse_config_text, Ablate, Preset, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "srinet", version, about = "Rotation-invariant point cloud features and classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-point invariant features (CSV) and the selected axes.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a PLY cloud colored by key point response.
    Keypoints {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check rotation invariance of features, side branch and logits on random clouds.
    InvarianceTest {
        #[arg(long)]
        trials: Option<usize>,
        /// Also write the report as CSV.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes metrics.csv and model.ckpt into the output directory.
    Train {
        #[arg(long)]
        output: PathBuf,
        /// Dataset manifest; synthetic shapes when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the held-out split, optionally under random rotations.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest; synthetic shapes when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Metrics CSV path; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Flags shared by every command. Flags override values from `--config`.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Falls back to the SRINET_SEED environment variable, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rotate inputs randomly first; the rotation seed defaults to one derived from --seed.
    #[arg(long, num_args = 0..=1, require_equals = true, value_name = "SEED")]
    pub rotate: Option<Option<u64>>,
    #[arg(long, value_parser = ["projection", "ppf", "raw_xyz"])]
    pub encoding: Option<String>,
    /// Neighborhood size.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = ["classify", "segment"])]
    pub task: Option<String>,
    #[arg(long, value_parser = ["ga", "kpd", "none"])]
    pub ablate: Option<String>,
    #[arg(long, value_parser = ["sum", "mul"])]
    pub fusion: Option<String>,
    /// Points sampled per mesh.
    #[arg(long)]
    pub points: Option<usize>,
    /// Skip rescaling clouds to unit radius.
    #[arg(long)]
    pub no_normalize: bool,
}

impl Common {
    /// Config file values overridden by flags, plus `extra` command-specific pairs.
    pub fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut pairs = match &self.config {
            Some(path) => config::read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.insert(k.to_string(), v);
            }
        };
        set("seed", self.seed.map(|s| s.to_string()));
        set(
            "rotate",
            self.rotate.map(|r| r.map_or_else(|| "true".to_string(), |s| s.to_string())),
        );
        set("encoding", self.encoding.clone());
        set("k", self.k.map(|k| k.to_string()));
        set("task", self.task.clone());
        set("ablate", self.ablate.clone());
        set("fusion", self.fusion.clone());
        set("points", self.points.map(|p| p.to_string()));
        if self.no_normalize {
            set("normalize_scale", Some("false".into()));
        }
        for (k, v) in extra {
            set(k, v.clone());
        }
        RunConfig::from_pairs(&pairs, std::env::var(config::SEED_ENV).ok().as_deref())
    }
}

/// Result of a command that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A checked property did not hold.
    PropertyFailure,
}

/// Process exit code for a command result.
pub fn exit_code(result: &Result<Outcome>) -> u8 {
    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::PropertyFailure) => 1,
        Err(Error::InvalidInput(_) | Error::Parse { .. } | Error::Io { .. } | Error::Degenerate(_)) => 2,
        Err(_) => 1,
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Extract { input, output, common } => commands::extract(&common.resolve(&[])?, &input, &output),
        Command::Keypoints { input, output, common } => commands::keypoints(&common.resolve(&[])?, &input, &output),
        Command::InvarianceTest { trials, output, common } => {
            let run = common.resolve(&[("trials", trials.map(|t| t.to_string()))])?;
            commands::invariance_test(&run, output.as_deref())
        }
        Command::Train {
            output,
            input,
            epochs,
            resume,
            common,
        } => {
            let run = common.resolve(&[
                ("epochs", epochs.map(|e| e.to_string())),
                ("dataset", input.map(|p| p.display().to_string())),
            ])?;
            commands::train(&run, &output, resume.as_deref())
        }
        Command::Eval {
            checkpoint,
            input,
            output,
            common,
        } => {
            let run = common.resolve(&[("dataset", input.map(|p| p.display().to_string()))])?;
            commands::eval(&run, &checkpoint, output.as_deref())
        }
    }
}
