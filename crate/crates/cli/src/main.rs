//! `qdren`: generate data, train, evaluate and inspect entity-network models.
//!
//! Exit codes: 0 success, 1 input or config error, 2 usage error,
//! 3 failed check.

mod commands;
mod config;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl From<qdren::Error> for CliError {
    fn from(e: qdren::Error) -> Self {
        match e {
            qdren::Error::Usage(_) => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Parser)]
#[command(name = "qdren", version, about = "Recurrent entity networks with a question-dependent gate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/valid/test files).
    Gen(commands::GenArgs),
    /// Train a model and save the best checkpoint.
    Train(commands::TrainArgs),
    /// Score a checkpoint on a split.
    Eval(commands::EvalArgs),
    /// Dump per-block, per-step gate activations as CSV.
    Gates(commands::GatesArgs),
    /// Compare tape gradients with finite differences on a tiny model.
    Gradcheck(commands::GradcheckArgs),
    /// Random hyperparameter search.
    Search(commands::SearchArgs),
    /// Train REN and QDREN on the same data over several seeds.
    Compare(commands::CompareArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gates(a) => commands::gates(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Search(a) => commands::search(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
