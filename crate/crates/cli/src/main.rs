//! `hypocart`: command-line driver for the daytime hypoglycemia pipeline.
//!
//! Exit status: 0 success, 1 usage error, 2 invalid input data, 3 internal
//! invariant violation. Failures print one `key=value` line to stderr.

mod commands;
mod error;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hypocart::cgm::{DmType, GlucoseUnit};
use hypocart::report::Metric;
use hypocart::Execution;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hypocart", version, about = "Predict daytime hypoglycemia from CGM records")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort of CGM record files.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a record file or cohort directory and summarize it.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "mmol")]
        unit: GlucoseUnit,
        /// Diabetes type for inputs without a patients.csv index.
        #[arg(long, default_value = "other")]
        dm_type: DmType,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Extract the decision-point feature table.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "mmol")]
        unit: GlucoseUnit,
        #[arg(long, default_value = "other")]
        dm_type: DmType,
        /// Pipeline configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit and prune one tree on a whole feature table.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Repeated k-fold cross-validation with per-patient and per-group reports.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        allocations: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify one decision point.
    Predict {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        xt: f64,
        #[arg(long, allow_negative_numbers = true)]
        rate: f64,
    },
    /// Rebuild an evaluation report from its manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-way ANOVA of a per-patient metric across groups.
    Anova {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "dm_type")]
        group_by: String,
        #[arg(long, default_value = "sensitivity")]
        metric: Metric,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Synth { config, seed, out } => {
            commands::synth(commands::SynthArgs { config: config.as_deref(), seed, out: &out, exec })
        }
        Command::Ingest { input, unit, dm_type, manifest } => {
            commands::ingest(&input, unit, dm_type, manifest.as_deref())
        }
        Command::Features { input, out, unit, dm_type, config } => commands::features(commands::FeaturesArgs {
            input: &input,
            out: &out,
            unit,
            dm_type,
            config: config.as_deref(),
            exec,
        }),
        Command::Train { features, out, config } => commands::train(&features, &out, config.as_deref()),
        Command::Evaluate { features, k, allocations, seed, out, config } => {
            commands::evaluate(commands::EvaluateArgs {
                features: &features,
                out: &out,
                seed,
                k,
                allocations,
                config: config.as_deref(),
                exec,
            })
        }
        Command::Predict { tree, xt, rate } => commands::predict(&tree, xt, rate),
        Command::Report { manifest, out } => commands::report(&manifest, out.as_deref(), exec),
        Command::Anova { report, group_by, metric } => commands::anova(&report, &group_by, metric),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::usage(first).diagnostic());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.kind.exit_code())
        }
    }
}
