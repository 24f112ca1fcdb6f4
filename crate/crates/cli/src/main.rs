//! `attncert` command-line tool. Exit codes: 0 success, 1 usage error,
//! 2 data error, 3 internal invariant violation.

mod cli;
mod commands;
mod config;
mod error;
mod record;

use clap::Parser;

use cli::{Cli, Command};
use error::{usage, CliResult};

fn run() -> CliResult<()> {
    let args = config::expand_config(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(usage(e.render().to_string().trim_end())),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::InitModel(a) => commands::init_model(a),
        Command::FitHead(a) => commands::fit_head_cmd(a),
        Command::Certify(a) => commands::certify(a),
        Command::Verify(a) => commands::verify(a),
        Command::Eval(a) => commands::eval(a),
    }
}

fn main() {
    if let Err(e) = run() {
        let msg = e.to_string();
        if msg.starts_with("error:") {
            eprintln!("{msg}");
        } else {
            eprintln!("error: {msg}");
        }
        std::process::exit(e.exit_code());
    }
}
