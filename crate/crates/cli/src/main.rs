//! `corrfuse` command-line tool.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 usage error, 3 bad input data.
//! Errors are reported as one JSON object on stderr; logs (`CORRFUSE_LOG`)
//! also go to stderr, so stdout only ever carries the command's report.

mod args;
mod commands;
mod error;
mod ingest;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fuse(a) => commands::fuse(a, cli.seed),
        Command::Match(a) => commands::match_cmd(a),
        Command::Eval(c) => commands::eval(c),
        Command::Cluster(a) => commands::cluster(a, cli.seed),
        Command::Swap(a) => commands::swap(a),
        Command::Viz(c) => commands::viz(c),
        Command::Ingest(a) => commands::ingest(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CORRFUSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let line = msg
                .lines()
                .find_map(|l| l.strip_prefix("error: "))
                .map(str::to_string)
                .unwrap_or_else(|| "missing subcommand or arguments (see --help)".to_string());
            eprintln!("{}", CliError::usage(line).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
