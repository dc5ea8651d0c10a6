use std::process::ExitCode;

use clap::Parser;

use nharq_cli::{execute, Cli, CliError, Report};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match execute(&cli, &argv) {
        Ok(Report::Text(text)) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Ok(Report::Run(outcome)) => {
            eprintln!("{}", outcome.summary);
            for name in &outcome.outputs {
                println!("{}", cli.out_dir.join(name).display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Parse {
                field: Some(field), ..
            } = &e
            {
                eprintln!("  field: {field}");
            }
            ExitCode::from(1)
        }
    }
}
