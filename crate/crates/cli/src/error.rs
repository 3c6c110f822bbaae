//! Harness error taxonomy, mapped onto process exit codes.

use minirl_core::reward::RewardError;
use minirl_core::taskgen::TaskGenError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("reward provider error: {0}")]
    Provider(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl HarnessError {
    /// Documented exit codes: 0 success, 2 config error, 3 provider error,
    /// 4 checkpoint error; anything else exits 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Provider(_) => 3,
            HarnessError::Checkpoint(_) => 4,
            HarnessError::Io(_) | HarnessError::Other(_) => 1,
        }
    }
}

impl From<TaskGenError> for HarnessError {
    fn from(e: TaskGenError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<RewardError> for HarnessError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::Provider { .. } => HarnessError::Provider(e.to_string()),
            other => HarnessError::Other(other.to_string()),
        }
    }
}

impl From<minirl_core::grpo::GrpoError> for HarnessError {
    fn from(e: minirl_core::grpo::GrpoError) -> Self {
        HarnessError::Other(e.to_string())
    }
}
