use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use halfjoin::harness::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut out) {
        Ok(()) => {
            let _ = out.flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = out.flush();
            eprintln!("halfjoin: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
