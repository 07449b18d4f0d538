//! `dsrl` — command-line front end for the desk-scale verifiable-reward
//! training laboratory.
//!
//! Subcommands: `train` (run or resume a training loop), `eval` (Pass@K /
//! Avg@K reports), `analyze` (offline diagnostics), `rollout` (sample
//! response groups into JSONL), `dataset` (generate task files), plus
//! `modes` and `keys` for discoverability.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;
mod error;
mod rollouts;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "dsrl",
    version,
    about = "Train, evaluate, and analyze a small verifiable-reward policy",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run or resume training; writes metrics, checkpoints, and config.txt.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint: Pass@K and Avg@K over verifiable tasks.
    Eval(commands::EvalArgs),
    /// Offline reports over checkpoints, rollouts, or text: grads, gap,
    /// taylor, thoughts, solved.
    Analyze(commands::AnalyzeArgs),
    /// Sample rollout groups from a checkpoint into a JSONL file.
    Rollout(commands::RolloutArgs),
    /// Generate a task dataset JSONL.
    Dataset(commands::DatasetArgs),
    /// List the training modes, one per line.
    Modes,
    /// List the config keys with their defaults and documentation.
    Keys,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train(args) => commands::cmd_train(args),
        Cmd::Eval(args) => commands::cmd_eval(args),
        Cmd::Analyze(args) => commands::cmd_analyze(args),
        Cmd::Rollout(args) => commands::cmd_rollout(args),
        Cmd::Dataset(args) => commands::cmd_dataset(args),
        Cmd::Modes => {
            for name in config::mode_names() {
                println!("{name}");
            }
            Ok(())
        }
        Cmd::Keys => {
            print!("{}", config::describe_keys());
            Ok(())
        }
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
