//! Command-line front end.
//!
//! ```text
//! wkb-scatter <solve|converge|condition|preset> --config <path> [--out <dir>]
//! ```
//!
//! Exit codes: 0 ok, 2 config error, 3 hypothesis violation, 4 numerical or
//! I/O failure.

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use wkb_scatter::harness::{self, Command};

#[derive(Parser)]
#[command(
    name = "wkb-scatter",
    about = "Hybrid WKB solver for 1D semiclassical Schrödinger scattering",
    version
)]
struct Cli {
    /// solve | converge | condition | preset
    command: Command,
    /// Experiment config file (flat key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match harness::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match harness::run(cli.command, &cfg, cli.out.as_deref()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(4))
        }
    }
}
