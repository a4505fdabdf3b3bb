//! Command-line driver for the simlearn laboratory.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use simlearn::loss::LossFunction;

use crate::commands::{CliError, Summary};
use crate::config::LoadedConfig;

#[derive(Debug, Parser)]
#[command(name = "simlearn", version, about = "Structured ReLU metric networks on synthetic similarity tasks")]
#[command(after_help = "Exit codes: 0 success, 2 invalid input, 3 property failure, 4 runtime error.\n\
Every CSV starts with `# simlearn <version> config=<hash> seed=<seed>` and a header row; see FORMATS.md.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `task.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct WithConfig {
    /// TOML experiment file.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and certify the product gadget and the sign approximator.
    ///
    /// Writes product_gadgets.csv (epsilon, sawtooth_depth, grid_error,
    /// axis_error, symmetry_error, depth, nonzero_weights, units,
    /// depth_per_log), sign_approx.csv (a, max_error, depth,
    /// nonzero_weights, units) and summary.txt.
    VerifyGadgets {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 1e-3])]
        eps: Vec<f64>,
        #[arg(long = "a", value_delimiter = ',', default_values_t = vec![0.05, 0.2, 1.0])]
        a_values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Minimizer profiles and true-metric properties for the registered losses.
    ///
    /// Writes profile_<loss>.csv (eta, tstar_oracle, tstar_analytic, q_min),
    /// bias_shift.csv, counterexample.csv, degeneracy.csv and summary.txt.
    MetricLab {
        /// Comma-separated subset of hinge, logistic, exponential, modified_least_squares.
        #[arg(long, value_delimiter = ',', default_values_t = vec!["hinge".to_string(), "logistic".into(), "exponential".into(), "modified_least_squares".into()])]
        losses: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a training set from the configured task.
    ///
    /// Writes data.csv (x1..xp, y).
    GenData(WithConfig),
    /// Train one structured net and evaluate its risks.
    ///
    /// Writes model/ (manifest and sub-network files), train.csv (epoch,
    /// risk, grad_norm, active_fraction, a, learning_rate) and risk.csv.
    TrainEval(WithConfig),
    /// Learning-curve sweep over eval.n_list and eval.seeds.
    ///
    /// Writes noise_fit.csv, sweep_rows.csv, sweep_points.csv,
    /// sweep_fit.csv, sweep.json, plot.csv and summary.txt.
    RateSweep(WithConfig),
    /// Plot data from a finished sweep.
    ///
    /// Writes plot.csv (n, log_n, log_excess, log_excess_lo, log_excess_hi,
    /// fit_line, reference_line).
    Report {
        /// A rate-sweep output directory or its sweep.json.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn init_threads(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load(args: &WithConfig) -> Result<LoadedConfig, CliError> {
    init_threads(args.common.jobs)?;
    let mut cfg = LoadedConfig::load(&args.config)?;
    if let Some(seed) = args.common.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

pub fn execute(command: &Command) -> Result<Summary, CliError> {
    match command {
        Command::VerifyGadgets { eps, a_values, common } => {
            init_threads(common.jobs)?;
            commands::verify_gadgets(eps, a_values, &common.out)
        }
        Command::MetricLab { losses, common } => {
            init_threads(common.jobs)?;
            let losses = losses
                .iter()
                .map(|name| LossFunction::from_name(name))
                .collect::<Result<Vec<_>, _>>()?;
            commands::metric_lab(&losses, common.seed.unwrap_or(0), &common.out)
        }
        Command::GenData(args) => commands::gen_data(&load(args)?, &args.common.out),
        Command::TrainEval(args) => commands::train_eval(&load(args)?, &args.common.out),
        Command::RateSweep(args) => commands::rate_sweep_cmd(&load(args)?, &args.common.out),
        Command::Report { input, out } => commands::report(input, out),
    }
}

/// Runs a parsed command line, prints its summary, and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli.command) {
        Ok(summary) => {
            for note in &summary.notes {
                println!("{note}");
            }
            for check in &summary.checks {
                println!("{check}");
            }
            for file in &summary.files {
                eprintln!("wrote {}", file.display());
            }
            if summary.passed() {
                0
            } else {
                3
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
