//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_baseline, cmd_calibrate, cmd_detect, cmd_simulate, cmd_solve, DetectorSource};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::write_output;

#[derive(Debug, Parser)]
#[command(name = "wrht", version, about = "Robust hypothesis testing and change detection with Wasserstein uncertainty sets")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by all commands. They override values from `--config`.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Loss family: exp, log, quad or hinge.
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// Ground norm: l1, l2 or linf.
    #[arg(long, global = true)]
    pub norm: Option<String>,
    /// Radius of both balls.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Radius of the first ball.
    #[arg(long, global = true)]
    pub theta1: Option<f64>,
    /// Radius of the second ball.
    #[arg(long, global = true)]
    pub theta2: Option<f64>,
    /// Calibrate both radii by bootstrap instead.
    #[arg(long, global = true)]
    pub auto_theta: bool,
    /// False alarm level used to set thresholds.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub gap_tol: Option<f64>,
    /// CSV inputs start with a header row.
    #[arg(long, global = true)]
    pub header: bool,
    /// Any config key, e.g. `--set window=30`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Write the JSON report here instead of standard output.
    #[arg(long, short, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Least favorable distributions and robust detector for two samples.
    Solve {
        q1: PathBuf,
        q2: PathBuf,
        /// Also save the detector model.
        #[arg(long, value_name = "FILE")]
        model_out: Option<PathBuf>,
    },
    /// Bootstrap calibration of the radius on pre-change data.
    Calibrate { pre: PathBuf },
    /// CUSUM monitoring of a stream with the robust detector.
    Detect {
        stream: PathBuf,
        /// Saved detector model.
        #[arg(long, value_name = "FILE", conflicts_with_all = ["q1", "q2"])]
        model: Option<PathBuf>,
        /// Training (pre-change) sample.
        #[arg(long, requires = "q2")]
        q1: Option<PathBuf>,
        /// Reference (post-change) sample.
        #[arg(long, requires = "q1")]
        q2: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Index of the first post-change sample.
        #[arg(long)]
        truth: Option<usize>,
    },
    /// Hotelling T² chart baseline.
    Baseline {
        train: PathBuf,
        stream: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        truth: Option<usize>,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Monte Carlo comparison on synthetic mean-shift streams.
    Simulate {
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated false alarm levels.
        #[arg(long)]
        alphas: Option<String>,
        /// Write every monitored stream here as CSV.
        #[arg(long, value_name = "DIR")]
        streams_dir: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let c = &cli.common;
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    let mut overrides: Vec<(&str, String)> = Vec::new();
    let mut push = |key: &'static str, value: Option<String>| {
        if let Some(v) = value {
            overrides.push((key, v));
        }
    };
    push("family", c.family.clone());
    push("norm", c.norm.clone());
    push("theta", c.theta.map(|v| v.to_string()));
    push("theta1", c.theta1.map(|v| v.to_string()));
    push("theta2", c.theta2.map(|v| v.to_string()));
    push("auto_theta", c.auto_theta.then(|| "true".into()));
    push("alpha", c.alpha.map(|v| v.to_string()));
    push("seed", c.seed.map(|v| v.to_string()));
    push("max_iters", c.max_iters.map(|v| v.to_string()));
    push("gap_tol", c.gap_tol.map(|v| v.to_string()));
    push("header", c.header.then(|| "true".into()));
    match &cli.command {
        Command::Detect { threshold, truth, .. } => {
            push("threshold", threshold.map(|v| v.to_string()));
            push("truth", truth.map(|v| v.to_string()));
        }
        Command::Baseline { threshold, truth, ridge, .. } => {
            push("threshold", threshold.map(|v| v.to_string()));
            push("truth", truth.map(|v| v.to_string()));
            push("ridge", ridge.map(|v| v.to_string()));
        }
        Command::Simulate { runs, alphas, .. } => {
            push("runs", runs.map(|v| v.to_string()));
            push("alphas", alphas.clone());
        }
        _ => {}
    }
    for (key, value) in overrides {
        cfg.set(key, &value)?;
    }
    for entry in &c.set {
        let (key, value) =
            entry.split_once('=').ok_or_else(|| CliError::Io(format!("--set expects KEY=VALUE, got '{entry}'")))?;
        cfg.set(key, value)?;
    }
    cfg.finalize()?;
    Ok(cfg)
}

/// Runs a parsed command line and writes its report.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let report = match &cli.command {
        Command::Solve { q1, q2, model_out } => cmd_solve(&cfg, q1, q2, model_out.as_deref())?,
        Command::Calibrate { pre } => cmd_calibrate(&cfg, pre)?,
        Command::Detect { stream, model, q1, q2, .. } => {
            let source = match (model, q1, q2) {
                (Some(m), _, _) => DetectorSource::Model(m),
                (None, Some(q1), Some(q2)) => DetectorSource::Samples { q1, q2 },
                _ => return Err(CliError::Io("detect needs --model or both --q1 and --q2".into())),
            };
            cmd_detect(&cfg, source, stream)?
        }
        Command::Baseline { train, stream, .. } => cmd_baseline(&cfg, train, stream)?,
        Command::Simulate { streams_dir, .. } => cmd_simulate(&cfg, streams_dir.as_deref())?,
    };
    write_output(cli.common.output.as_deref(), &report)
}
