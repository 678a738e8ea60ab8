use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pisd_cli::Verb;

#[derive(Parser)]
#[command(
    name = "pisd",
    about = "Physics-informed spectral diffusion experiments"
)]
struct Args {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the top-level seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    verb: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and held-out dataset.
    GenerateData,
    /// Fit spectral scales on the training split.
    FitCodec,
    /// Train the denoiser.
    Train,
    /// Run guided sampling for every [sample.<label>] section.
    Sample {
        #[arg(long)]
        only: Option<String>,
    },
    /// Recompute metrics from stored samples.
    Evaluate {
        #[arg(long)]
        only: Option<String>,
    },
    /// Aggregate metrics and write images.
    Report {
        #[arg(long)]
        only: Option<String>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (verb, only) = match args.verb {
        Command::GenerateData => (Verb::GenerateData, None),
        Command::FitCodec => (Verb::FitCodec, None),
        Command::Train => (Verb::Train, None),
        Command::Sample { only } => (Verb::Sample, only),
        Command::Evaluate { only } => (Verb::Evaluate, only),
        Command::Report { only } => (Verb::Report, only),
    };
    let Some(config) = args.config else {
        eprintln!("config error: --config PATH is required");
        return ExitCode::from(2);
    };
    match pisd_cli::run(verb, &config, args.seed, &args.out, only.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
