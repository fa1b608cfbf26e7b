//! `pixint`: multi-order interaction analysis of image classifiers.

pub mod commands;
pub mod config;
pub mod models;
pub mod selfcheck;
pub mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Needs, Overrides};

#[derive(Debug, Parser)]
#[command(name = "pixint", version, about = "Multi-order pixel interactions of image classifiers")]
pub struct Cli {
    /// TOML config file; flags override its values
    #[arg(long, global = true, help_heading = "Run")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample pixel-pair interactions and write their distributions
    Interactions,
    /// Run I-FGSM on every image and sweep the success rate over budgets
    Attack,
    /// Add seeded Gaussian noise to every image
    Corrupt,
    /// Compare transfer rates of high- and low-interaction adversarial images
    Transfer,
    /// Check the estimators against small games with known answers
    Selfcheck,
    /// Write a seeded toy dataset labelled by the source model
    Synth,
    /// Write the weights of a builtin source model
    ExportWeights {
        /// Destination file
        #[arg(long = "to")]
        path: PathBuf,
    },
    /// Serve the source model over stdin/stdout
    #[command(hide = true)]
    Serve,
}

/// Exit code 2 for configuration problems, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Config(Vec<String>),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self::Config(vec![message.into()])
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Runtime(e.into())
    }
}

fn needs(command: &Command) -> Needs {
    let data = Needs { manifest: true, ..Needs::default() };
    match command {
        Command::Interactions => Needs { sampling: true, ..data },
        Command::Attack => Needs { attack: true, ..data },
        Command::Corrupt => Needs { corrupt: true, ..data },
        Command::Transfer => Needs { sampling: true, transfer: true, ..Needs::default() },
        Command::Synth => Needs { synth: true, ..Needs::default() },
        Command::Selfcheck | Command::ExportWeights { .. } | Command::Serve => Needs::default(),
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = config::load(cli.config.as_deref(), &cli.overrides).map_err(Failure::Config)?;
    let problems = cfg.problems(needs(&cli.command));
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    pool.install(|| match &cli.command {
        Command::Interactions => commands::interactions(&cfg),
        Command::Attack => commands::attack(&cfg),
        Command::Corrupt => commands::corrupt(&cfg),
        Command::Transfer => commands::transfer(&cfg),
        Command::Synth => synth::synth(&cfg),
        Command::ExportWeights { path } => commands::export_weights(&cfg, path),
        Command::Serve => commands::serve(&cfg),
        Command::Selfcheck => match selfcheck::run(&cfg) {
            0 => Ok(()),
            k => Err(Failure::Runtime(anyhow::anyhow!("{k} self-checks failed"))),
        },
    })
}

pub fn run(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(problems)) => {
            eprintln!("configuration error:");
            for p in problems {
                eprintln!("  - {p}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
