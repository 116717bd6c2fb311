//! Command-line front end for `octen`: synthetic data, streamed runs,
//! parameter sweeps and file inspection.

pub mod args;
pub mod commands;
pub mod config;
mod error;

use std::ffi::OsString;

use clap::Parser;

pub use error::{CliError, Result};

use args::{Cli, Command};
use config::Settings;

/// Runs one invocation after argument parsing.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(o) => commands::gen(&Settings::resolve(&o)?).map(drop),
        Command::Run(o) => {
            let outcome = commands::run(&Settings::resolve(&o)?)?;
            match outcome.rows.last().filter(|_| outcome.complete) {
                Some(r) => println!(
                    "batches={} slices={} fitness_pct={:.4}{}",
                    outcome.state.batches(),
                    r.slices,
                    r.fitness_pct.unwrap_or(f64::NAN),
                    r.congruence_min
                        .map_or(String::new(), |c| format!(" congruence_min={c:.6}"))
                ),
                None => println!("stopped after {} batches", outcome.state.batches()),
            }
            Ok(())
        }
        Command::Sweep(o) => commands::sweep(&Settings::resolve(&o)?).map(drop),
        Command::Inspect { path } => commands::inspect(&path, std::io::stdout().lock()),
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    execute(cli)
}
