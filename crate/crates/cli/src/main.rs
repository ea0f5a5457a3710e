//! `fot`: run, benchmark and tune reasoning schemes from the command line.
//!
//! Exit codes: 0 ok, 1 corrupt cache entries, 2 operation failure, 3 deadlock, 64 usage.

mod args;
mod bench;
mod cache_cmd;
mod optimize;
mod run;
mod setup;

use clap::error::ErrorKind;
use clap::Parser;
use fot_core::runtime::EXIT_USAGE;

use args::{Cli, Cmd};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let g = &cli.global;
    let r = match &cli.command {
        Cmd::Run(a) => run::cmd_run(g, a),
        Cmd::Bench(a) => bench::cmd_bench(g, a),
        Cmd::Optimize(a) => optimize::cmd_optimize(g, a),
        Cmd::Cache(c) => cache_cmd::cmd_cache(g, c),
        Cmd::ExportDot(a) => run::cmd_export_dot(g, a),
    };
    if let Err(e) = r {
        eprintln!("fot: {e}");
        std::process::exit(e.code);
    }
}
