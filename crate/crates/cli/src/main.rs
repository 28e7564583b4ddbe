//! `mblb run --config <path>` or `mblb run --experiment lqr --seed 1 --zeta 50`.
//! Flags override config values. Exit status 2 signals a malformed
//! configuration, 3 a numerical failure during the run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mblb_core::experiment::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mblb", version, about = "Offline policy selection with locally misspecified models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV reports.
    Run(RunArgs),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// hard-instance, lqr, spi-check or custom-tabular.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "n_traj", alias = "n-traj")]
    n_traj: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// indicator or clip.
    #[arg(long = "truncation_mode", alias = "truncation-mode")]
    truncation_mode: Option<String>,
    /// minus_B or plus_B.
    #[arg(long = "sign_convention", alias = "sign-convention")]
    sign_convention: Option<String>,
    /// Output directory; defaults to $MBLB_OUT_DIR, then ./mblb-out.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("experiment", self.experiment.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("zeta", self.zeta.map(|v| v.to_string()));
        push("gamma", self.gamma.map(|v| v.to_string()));
        push("delta", self.delta.map(|v| v.to_string()));
        push("n_traj", self.n_traj.map(|v| v.to_string()));
        push("horizon", self.horizon.map(|v| v.to_string()));
        push("bins", self.bins.map(|v| v.to_string()));
        push("truncation_mode", self.truncation_mode.clone());
        push("sign_convention", self.sign_convention.clone());
        push("output", self.output.as_ref().map(|p| p.display().to_string()));
        for kv in &self.set {
            match kv.split_once('=') {
                Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
                None => out.push((kv.clone(), String::new())),
            }
        }
        out
    }

    fn resolve(&self) -> mblb_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    let cfg = match args.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: malformed configuration: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: run failed: {e}");
            ExitCode::from(3)
        }
    }
}
