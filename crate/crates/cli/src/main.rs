use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use emodetect_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(outcome) => {
            let summary =
                serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
            // a closed pipe on stdout is not a failure of the run
            let _ = writeln!(std::io::stdout(), "{summary}");
            eprintln!("outputs in {}", outcome.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
