//! Reads a `bkam kam` CSV and checks the log-log slope of `psi_dist` against epsilon.
//!
//! Exit code 0 when the slope is within `--tol` of `--expect`, 1 when it is
//! not, 2 when the file cannot be read or has fewer than two usable rows.

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use bkam_cli::report::{read_csv, KamRow};
use bkam_core::bkam::loglog_slope;
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "kam-slope")]
struct Args {
    /// CSV written by `bkam kam`.
    csv: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    expect: f64,
    #[arg(long, default_value_t = 0.1)]
    tol: f64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let rows: Vec<KamRow> =
        match File::open(&args.csv).map_err(|e| e.to_string()).and_then(|f| read_csv(f).map_err(|e| e.to_string())) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("kam-slope: {}: {e}", args.csv.display());
                return ExitCode::from(2);
            }
        };
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.psi_dist.is_finite()).map(|r| (r.epsilon, r.psi_dist)).collect();
    let Some(slope) = loglog_slope(&pts) else {
        eprintln!("kam-slope: need at least two rows with epsilon > 0 and psi_dist > 0");
        return ExitCode::from(2);
    };
    let ok = (slope - args.expect).abs() <= args.tol;
    println!("slope={slope:.6} expect={} tol={} {}", args.expect, args.tol, if ok { "PASS" } else { "FAIL" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
