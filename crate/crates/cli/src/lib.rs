//! Command-line runner for rmlab: generate a world, train reward models,
//! evaluate them, run RLOO on their rewards, and aggregate the results.
//!
//! Every command writes plain files (JSON, CSV, binary checkpoints, SVG).
//! Re-running with the same seeds into a fresh directory reproduces them
//! byte for byte; wall-clock timestamps only go to `run.log`.

mod args;
pub mod artifacts;
pub mod chart;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod records;
pub mod summary;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command, EvalArgs, ExperimentArgs, GenWorldArgs, ReportArgs, RlooArgs, TrainArgs};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// Executes a parsed command, printing human-readable output to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld(a) => commands::gen_world(&a),
        Command::Train(a) => {
            for r in commands::train(&a)? {
                println!(
                    "{} seed {}: acc_id {:.4} tau_mutual {:.4} head_norm {:.4}",
                    r.label, r.seed, r.diagnostics.eval.acc_id, r.diagnostics.eval.tau_mutual, r.diagnostics.head_norm
                );
            }
            Ok(())
        }
        Command::Eval(a) => {
            let out = commands::eval(&a)?;
            let e = out.eval;
            println!(
                "acc_id {:.4} tau_prompt {:.4} tau_response {:.4} tau_mutual {:.4}",
                e.acc_id, e.tau_prompt, e.tau_response, e.tau_mutual
            );
            Ok(())
        }
        Command::Rloo(a) => {
            let m = commands::rloo(&a)?;
            println!(
                "proxy {} seed {}: expected gold {:.6}, expected proxy {:.6}, kl {:.6}",
                m.proxy, m.seed, m.final_expected_gold, m.final_expected_proxy, m.final_kl
            );
            Ok(())
        }
        Command::Report(a) => {
            print!("{}", commands::report(&a)?.render_table());
            Ok(())
        }
        Command::Experiment(a) => {
            print!("{}", commands::experiment(&a)?.render_table());
            Ok(())
        }
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_json());
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and executes the command.
/// Usage errors come back as [`CliError::Config`].
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    execute(cli)
}
