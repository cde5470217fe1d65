use std::process::ExitCode;

use clap::Parser;
use gaitlab_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gaitlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
