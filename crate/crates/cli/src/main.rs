use clap::{Parser, Subcommand};
use minirl_cli::commands;
use std::path::PathBuf;
use std::process::ExitCode;

/// Desk-scale verifiable-reward RL: group-relative policy optimization
/// with rule-based rewards and a group-relative length penalty.
#[derive(Parser)]
#[command(name = "minirl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training loop from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Roll out a frozen checkpoint and emit accuracy-vs-budget CSV curves
    /// (one per thinking mode).
    EvalBudget {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a JSONL batch of responses with the rule-based reward.
    RewardCheck {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training from a checkpoint, optionally resetting
    /// hyperparameters (learning_rate, kl_coefficient, clip_epsilon,
    /// length_penalty.*, steps).
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed } => commands::cmd_train(&config, seed),
        Command::EvalBudget {
            checkpoint,
            config,
            out,
        } => commands::cmd_eval_budget(&checkpoint, &config, &out),
        Command::RewardCheck { input, out } => commands::cmd_reward_check(&input, &out),
        Command::Resume { checkpoint, set } => commands::cmd_resume(&checkpoint, &set),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
