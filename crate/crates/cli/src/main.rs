use std::io::Write;
use std::process::ExitCode;

use bkam_cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(p) => {
            let _ = std::io::stdout().write_all(p.stdout.as_bytes());
            let _ = std::io::stderr().write_all(p.stderr.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bkam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
