//! `edgelab` command-line driver: configuration, dataset ingest, checkpoints
//! and the six pipeline subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::Config;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "edgelab", version, about = "Self-supervised edge detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override one configuration key; may be repeated, later wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic shapes dataset.
    Synth(Common),
    /// Train on synthetic data.
    TrainSynth(Common),
    /// Pseudo-label a real image dataset.
    Annotate(Common),
    /// Train on pseudo-labelled real images.
    TrainReal(Common),
    /// Write edge maps for a directory of images.
    Infer(Common),
    /// Score predicted edge maps against ground truth.
    Eval(Common),
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    let (common, f): (Common, fn(&Config) -> Result<()>) = match command {
        Command::Synth(c) => (c, commands::synth),
        Command::TrainSynth(c) => (c, commands::train_synth),
        Command::Annotate(c) => (c, commands::annotate),
        Command::TrainReal(c) => (c, commands::train_real),
        Command::Infer(c) => (c, commands::infer),
        Command::Eval(c) => (c, commands::eval),
    };
    let cfg = Config::load(&common.config, &common.set)?;
    f(&cfg)
}
