//! `mipca` — single and multiple imputation of continuous data through
//! low-rank models, with pooling, rank selection, and a simulation
//! harness.

mod commands;
mod error;
mod io;
mod manifest;
mod opts;

use clap::Parser;
use std::process::ExitCode;

/// Applies `MIPCA_WORKERS` to the global worker pool before any
/// parallel work starts (unset or invalid values keep the default).
fn configure_workers() {
    if let Ok(raw) = std::env::var("MIPCA_WORKERS") {
        if let Ok(workers) = raw.trim().parse::<usize>() {
            if workers >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    configure_workers();
    let cli = opts::Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
