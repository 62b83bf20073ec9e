use std::io;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tcl::cmd::{self, AnalyzeArgs, EvalArgs, TrainArgs, VerifyArgs};
use tcl_core::verify::VerifyHooks;

/// Trajectory contrastive learning for context-based meta-RL.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Meta-train and write a run directory.
    Train(TrainArgs),
    /// Meta-test a checkpoint on held-out tasks.
    Eval(EvalArgs),
    /// Cluster metrics and 2-D projection of context embeddings.
    Analyze(AnalyzeArgs),
    /// Closed-form and gradient-check self tests.
    Verify(VerifyArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    let result = match &cli.command {
        Command::Train(a) => cmd::train(a, &mut out).map(drop),
        Command::Eval(a) => cmd::eval(a, &mut out).map(drop),
        Command::Analyze(a) => cmd::analyze(a, &mut out).map(drop),
        Command::Verify(a) => cmd::verify(a, &VerifyHooks::default(), &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
