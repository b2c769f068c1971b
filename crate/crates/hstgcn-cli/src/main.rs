//! `hstgcn`: the pipeline binary. Subcommands run one stage each against
//! a workspace directory; exit code 0 on success, 1 on runtime failures,
//! 2 on usage or configuration errors.

mod pipeline;

use clap::{Args, Parser, Subcommand};
use hstgcn::config::RunConfig;
use hstgcn::model::Variant;
use hstgcn::{Error, Result};
use pipeline::SliceSelection;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hstgcn",
    about = "Travel-time forecasting pipeline: simulate -> features -> train -> eval -> report"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run-configuration document; defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config document.
    #[arg(long)]
    seed: Option<u64>,
    /// Workspace directory holding all stage outputs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Replace the stage's output directory if it already has files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (network, travel times, navigation log).
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Build the feature store from the dataset.
    Features {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model variant on the feature store.
    Train {
        #[command(flatten)]
        common: Common,
        /// Variant to train (hstgcn, hstgcn1, stgcn-im, stgcn); defaults
        /// to the config document's choice.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate all trained checkpoints plus the historical-average
    /// baseline into a merged report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Slice to report: full, c, nrc, or all.
        #[arg(long, default_value = "all")]
        slice: String,
    },
    /// Audit the manifest chain and print the merged report.
    Report {
        /// Workspace directory holding all stage outputs.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Slice to print: full, c, nrc, or all.
        #[arg(long, default_value = "all")]
        slice: String,
    },
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let config = resolve_config(&common)?;
            pipeline::cmd_simulate(&config, &common.out, common.force)
        }
        Command::Features { common } => {
            let config = resolve_config(&common)?;
            pipeline::cmd_features(&config, &common.out, common.force)
        }
        Command::Train { common, variant } => {
            let config = resolve_config(&common)?;
            let variant = variant.as_deref().map(str::parse::<Variant>).transpose()?;
            pipeline::cmd_train(&config, &common.out, variant, common.force)
        }
        Command::Eval { common, slice } => {
            let config = resolve_config(&common)?;
            let slice: SliceSelection = slice.parse()?;
            pipeline::cmd_eval(&config, &common.out, slice, common.force)
        }
        Command::Report { out, slice } => {
            let slice: SliceSelection = slice.parse()?;
            pipeline::cmd_report(&out, slice)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
