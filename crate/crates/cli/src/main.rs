use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voxtend_cli::commands;
use voxtend_cli::config::RunConfig;
use voxtend_cli::CliError;

#[derive(Parser)]
#[command(name = "voxtend", version, about = "Embedding-guided diffusion extension of short utterances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// WAV files to log mel filterbank feature maps.
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Write a toy corpus: embedder, utterance features and trials.
    Toy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the noise estimator on the toy world.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw guided samples toward a reference utterance.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clip, extend and score a trial list under each condition.
    ExtendEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// EER and MinDCF of a `score,label` CSV.
    Metrics { scores: PathBuf },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    RunConfig::load(common.config.as_deref(), &common.set)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Features { common, out, inputs } => {
            commands::features(&load(&common)?, &inputs, &out)?;
        }
        Command::Toy { common, out } => {
            commands::toy(&load(&common)?, &out)?;
        }
        Command::Train { common, out } => {
            commands::train(&load(&common)?, &out)?;
        }
        Command::Sample { common, reference, out } => {
            commands::sample(&load(&common)?, &reference, &out)?;
        }
        Command::ExtendEval {
            common,
            trials,
            features,
            out,
        } => {
            commands::extend_eval(&load(&common)?, &trials, &features, &out)?;
        }
        Command::Metrics { scores } => print!("{}", commands::metrics(&scores)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
