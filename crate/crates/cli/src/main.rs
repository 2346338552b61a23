//! citerank: train and query a citation-recommendation model.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use citerank_core::CoreError;
use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "citerank",
    about = "Citation recommendation via directed link prediction on a citation graph",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabulary, TF-IDF features and the citation edge list from a corpus
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a seeded synthetic corpus and edge list
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the model and keep the checkpoint with the best validation recall
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on the validation split
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank candidate citations for one document
    Recommend {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Threshold sweep and cross-domain citation matrices
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export node embeddings as TSV for external projection
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate a set of model variants with a shared seed
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variants, e.g. tfidf,gt-lr-bilinear,2-hop
        #[arg(long)]
        variants: Option<String>,
    },
    /// Per-layer statistics of the learned residual gate
    GateReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { config } => commands::cmd_ingest(&RunConfig::load(&config)?),
        Command::Synth { config } => commands::cmd_synth(&RunConfig::load(&config)?),
        Command::Train { config } => commands::cmd_train(&RunConfig::load(&config)?),
        Command::Evaluate { config, checkpoint } => {
            commands::cmd_evaluate(&RunConfig::load(&config)?, &checkpoint)
        }
        Command::Recommend {
            config,
            doc,
            k,
            checkpoint,
        } => {
            let cfg = RunConfig::load(&config)?;
            let k = k.unwrap_or(cfg.k);
            commands::cmd_recommend(&cfg, &checkpoint, &doc, k)
        }
        Command::Analyze { config, checkpoint } => {
            commands::cmd_analyze(&RunConfig::load(&config)?, &checkpoint)
        }
        Command::Export { config, checkpoint } => {
            commands::cmd_export(&RunConfig::load(&config)?, &checkpoint)
        }
        Command::Ablate { config, variants } => {
            commands::cmd_ablate(&RunConfig::load(&config)?, &variants)
        }
        Command::GateReport { config, checkpoint } => {
            commands::cmd_gate_report(&RunConfig::load(&config)?, &checkpoint)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
