//! `arsecure-css scan --targets targets.txt <file...>`
//!
//! Prints one JSON ScanReport per input file (JSON lines) and exits with 0
//! when every input is clean, 2 when any input is flagged.

use std::path::PathBuf;
use std::process::ExitCode;

use arsecure_core::css::{scan, TargetList};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arsecure-css", about = "Simulated client-side scanner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan files against a target list.
    Scan {
        /// One literal per line, or `sha256:<hex>` lines.
        #[arg(long)]
        targets: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Command::Scan { targets, files } = Cli::parse().command;
    match run(&targets, &files) {
        Ok(true) => ExitCode::from(2),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arsecure-css: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(targets: &PathBuf, files: &[PathBuf]) -> Result<bool, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(targets).map_err(|e| format!("{}: {e}", targets.display()))?;
    let targets = TargetList::parse(&text)?;
    let mut flagged = false;
    for path in files {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let report = scan(&path.display().to_string(), &bytes, &targets);
        flagged |= report.is_flagged();
        println!("{}", serde_json::to_string(&report)?);
    }
    Ok(flagged)
}
