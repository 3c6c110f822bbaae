//! Training harness for the minirl engine: configuration, the
//! train/eval-budget/reward-check/resume commands, deterministic seeding,
//! JSONL run logging, and checkpoint/resume.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod runlog;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::HarnessError;
pub use trainer::Trainer;
