//! `condb`: serve, administer, benchmark and use a conditions database.

mod admin;
mod bench;
mod client_cmd;
mod exit;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use exit::{code, Exit};

#[derive(Debug, Parser)]
#[command(name = "condb", version, about = "Conditions database service and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the REST service until SIGTERM or Ctrl-C.
    Serve(serve::ServeArgs),
    /// Manage global tags, payload types, lists and IoVs.
    Admin(admin::AdminArgs),
    /// Populate scenarios and measure the service.
    Bench(bench::BenchArgs),
    /// Resolve, fetch, insert and audit payloads.
    Client(client_cmd::ClientArgs),
}

/// Path given by flag or by environment variable, if any.
pub(crate) fn config_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.filter(|p| !p.as_os_str().is_empty())
}

/// Prints `value` as pretty JSON on stdout.
pub(crate) fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output types serialize"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { code(Exit::Config) } else { code(Exit::Ok) };
        }
    };
    let result = match cli.command {
        Command::Serve(args) => serve::run(args),
        Command::Admin(args) => admin::run(args),
        Command::Bench(args) => bench::run(args),
        Command::Client(args) => client_cmd::run(args),
    };
    match result {
        Ok(()) => code(Exit::Ok),
        Err(e) => {
            eprintln!("condb: {e}");
            code(e.exit)
        }
    }
}
