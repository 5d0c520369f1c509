use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use multipen_cli::cli::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            // Some clap errors omit the usage line; always show it.
            let _ = e.print();
            let mut cmd = Cli::command();
            cmd.build();
            let usage = match std::env::args().nth(1).and_then(|name| cmd.find_subcommand_mut(&name).cloned()) {
                Some(mut sub) => sub.render_usage().to_string(),
                None => cmd.render_usage().to_string(),
            };
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{usage}");
            }
            std::process::exit(e.exit_code());
        }
    };
    match multipen_cli::run(&cli.command) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("JSON values serialise"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
