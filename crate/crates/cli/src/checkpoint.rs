//! Versioned JSON checkpoints.
//!
//! A checkpoint is one JSON document holding the step counter, every
//! hyperparameter (the full resolved config), the trained and reference
//! logits per (family, mode), and the random-stream position. Streams are
//! derived from `(root_seed, step, group, sample)`, so persisting the seed
//! and the next step pins every future draw; resuming replays exactly the
//! stream a straight-through run would have used.
//!
//! Floats survive bit-exactly (shortest-round-trip printing plus exact
//! parsing), and all maps are ordered, so save -> load -> save is
//! byte-identical.

use crate::config::TrainConfig;
use crate::error::HarnessError;
use minirl_core::grpo::OptimizerState;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngPosition {
    pub root_seed: u64,
    /// First training step that has not yet run.
    pub next_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub state: OptimizerState,
    pub rng: RngPosition,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, state: OptimizerState) -> Self {
        let rng = RngPosition {
            root_seed: config.seed,
            next_step: state.step + 1,
        };
        Self {
            version: CHECKPOINT_VERSION,
            config,
            state,
            rng,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let checkpoint: Checkpoint = serde_json::from_str(text)
            .map_err(|e| HarnessError::Checkpoint(format!("schema validation failed: {e}")))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(HarnessError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        if checkpoint.rng.root_seed != checkpoint.config.seed {
            return Err(HarnessError::Checkpoint(
                "rng position does not match the config seed".into(),
            ));
        }
        Ok(checkpoint)
    }

    /// Atomic save: write a temporary sibling, then rename over the target.
    /// A crash mid-write never leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }
}
