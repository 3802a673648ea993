//! File formats and the `oclbench` command-line runner built on
//! `oclbench-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod fingerprint;
pub mod formats;

pub use cli::{Cli, Command};
pub use error::{CliError, Result};

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let file = cli
        .config
        .as_deref()
        .map(config::read_config_file)
        .transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Synth(args) => commands::synth::run(&args, file).map(|_| ()),
        Command::Train(args) => commands::train::run(&args, file).map(|_| ()),
        Command::Eval(args) => commands::eval::run(&args, file).map(|_| ()),
        Command::Metrics(args) => commands::metrics::run(&args, file),
        Command::Verify(args) => commands::verify::run(&args),
    }
}
