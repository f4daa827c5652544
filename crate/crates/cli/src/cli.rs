//! Argument parsing and dispatch for the `kmpc` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, CertificateOverride};
use crate::{fig1, verify};

/// Kernel EDMD surrogate MPC workbench.
#[derive(Debug, Parser)]
#[command(name = "kmpc", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON experiment config; missing fields take the study defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed of the data sampling and the terminal-set checks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Number of observation points, origin included.
    #[arg(long, global = true)]
    pub d: Option<usize>,

    /// Pin the origin (physics-informed regression).
    #[arg(long, global = true, overrides_with = "no_pi")]
    pub pi: bool,

    /// Plain kEDMD without the origin constraint.
    #[arg(long, global = true, overrides_with = "pi")]
    pub no_pi: bool,

    /// MPC prediction horizon.
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the cluster dataset.
    Generate,
    /// Fit the surrogate from the dataset.
    Identify,
    /// Estimate the error and Lipschitz certificate of the model.
    Bounds,
    /// Design terminal ingredients and write the controller.
    Terminal {
        /// Uniform error bound to use instead of the bounds artifact.
        #[arg(long, requires = "lbar")]
        eta: Option<f64>,
        /// Lipschitz bound to use instead of the bounds artifact.
        #[arg(long, requires = "eta")]
        lbar: Option<f64>,
    },
    /// Run the closed loop on the true plant.
    Simulate {
        /// Trace label.
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Run every stage in order.
    Run,
    /// Run the four cluster-count configurations and write the comparison.
    #[command(name = "reproduce-fig1")]
    ReproduceFig1,
    /// Check the artifacts in the output directory.
    Verify,
}

impl Cli {
    /// Config file (or defaults) with the command-line overrides applied.
    pub fn resolve_config(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(d) = self.d {
            c.data.d = d;
        }
        if self.pi {
            c.pi_variant = true;
        }
        if self.no_pi {
            c.pi_variant = false;
        }
        if let Some(n) = self.horizon {
            c.control.horizon = n;
        }
        Ok(c)
    }
}

fn print<T: Serialize>(value: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Caps the global thread pool from `KMPC_THREADS`.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("KMPC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("KMPC_THREADS must be a positive integer, got {raw:?}")))?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    let config = cli.resolve_config()?;
    match &cli.command {
        Command::Generate => print(&pipeline::generate(&config)?),
        Command::Identify => print(&pipeline::identify(&config)?),
        Command::Bounds => print(&pipeline::bounds(&config)?),
        Command::Terminal { eta, lbar } => {
            let overrides = eta.zip(*lbar).map(|(eta, lbar)| CertificateOverride { eta, lbar });
            let body = pipeline::terminal(&config, overrides)?;
            print(&serde_json::json!({
                "horizon_limits": body.horizon_limits,
                "calibration": body.calibration,
                "eta": body.mpc.eta,
                "lbar": body.mpc.lbar,
            }))
        }
        Command::Simulate { label } => print(&pipeline::simulate(&config, label)?.0),
        Command::Run => print(&pipeline::run_all(&config, "run")?.0),
        Command::ReproduceFig1 => {
            let summary = fig1::reproduce_fig1(&config)?;
            print(&summary.checks)?;
            if !summary.checks.passed() {
                eprintln!("warning: qualitative checks did not all pass");
            }
            Ok(())
        }
        Command::Verify => print(&verify::verify(&config)?),
    }
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main_exit_code() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("kmpc").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn global_flags_override_config() {
        let c = parse(&["simulate", "--d", "352", "--no-pi", "--seed", "7", "--horizon", "3", "--out", "x"])
            .resolve_config()
            .unwrap();
        assert_eq!(c.data.d, 352);
        assert!(!c.pi_variant);
        assert_eq!(c.seed, 7);
        assert_eq!(c.control.horizon, 3);
        assert_eq!(c.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn last_pi_flag_wins() {
        assert!(parse(&["generate", "--no-pi", "--pi"]).resolve_config().unwrap().pi_variant);
        assert!(!parse(&["generate", "--pi", "--no-pi"]).resolve_config().unwrap().pi_variant);
    }

    #[test]
    fn override_needs_both_values() {
        assert!(Cli::try_parse_from(["kmpc", "terminal", "--eta", "0.05"]).is_err());
        let cli = parse(&["terminal", "--eta", "0.05", "--lbar", "2.27"]);
        assert!(matches!(cli.command, Command::Terminal { eta: Some(_), lbar: Some(_) }));
    }
}
