//! Command-line front end: simulation study, ad-hoc tuning, bound calculators
//! and Lipschitz verification.

pub mod cli;
pub mod commands;
pub mod experiment;

use cli::Command;

/// Runs a parsed command and returns its JSON output.
pub fn run(command: &Command) -> anyhow::Result<serde_json::Value> {
    match command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Tune(a) => commands::tune(a),
        Command::Bounds(b) => commands::bounds(b),
        Command::VerifyLipschitz(a) => commands::verify_lipschitz(a),
    }
}
