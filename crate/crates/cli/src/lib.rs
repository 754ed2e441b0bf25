//! `divnet`: train, evaluate and inspect diversity-aware slate rerankers.
//!
//! [`run`] is the whole command line; the binary only forwards its
//! arguments and exit status.

mod artifacts;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status 1: the command ran and failed. Exit status 2: bad input.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Failure::Runtime(anyhow::anyhow!("{msg}"))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

#[derive(Parser)]
#[command(name = "divnet", version, about = "Diversity-aware sequential slate reranking")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArg {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the upstream scorer, DivNet and (optionally) PRM on a LETOR file.
    Train(commands::train::TrainArgs),
    /// Score a method on a LETOR file and write a metric report.
    Eval(commands::eval::EvalArgs),
    /// Rerank slates and write per-step probabilities, dets and logits.
    Rerank(commands::rerank::RerankArgs),
    /// Generate a synthetic click dataset with its ground truth.
    Synth(commands::synth::SynthArgs),
    /// Export decoder attention of one slate as an N×N matrix.
    Attention(commands::attention::AttentionArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Sample,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return u8::try_from(e.exit_code()).unwrap_or(2);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return 1;
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Rerank(a) => commands::rerank::run(a),
        Command::Synth(a) => commands::synth::run(a),
        Command::Attention(a) => commands::attention::run(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
