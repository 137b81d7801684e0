mod calib;
mod eval;
mod retrieve;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit status paired with the error that caused it.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type Outcome = Result<(), Failure>;

pub trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pedsearch",
    version,
    propagate_version = true,
    about = "Retrieve a described person from surveillance frames"
)]
struct Cli {
    /// Log level for diagnostics on stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the filter cascade over every frame of a bundle.
    Retrieve(retrieve::Args),
    /// Score a results file against marker annotations.
    Eval(eval::Args),
    /// Render a synthetic bundle from a scene description.
    Synth(synth::Args),
    /// Self-test every camera calibration in a bundle.
    CalibCheck(calib::Args),
}

#[derive(Debug, Clone, clap::Args)]
pub struct BundleArg {
    /// Bundle root directory.
    #[arg(long)]
    pub bundle: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    eprintln!("pedsearch {}: {:?}", env!("CARGO_PKG_VERSION"), cli.command);
    let outcome = match cli.command {
        Command::Retrieve(a) => retrieve::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Synth(a) => synth::run(a),
        Command::CalibCheck(a) => calib::run(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
