//! Append-only line-delimited JSON run log.
//!
//! One record per training step with strictly increasing step numbers,
//! plus event records for hyperparameter resets and evaluation summaries.
//! Timing is opt-in so that seeded runs stay byte-reproducible.

use crate::error::HarnessError;
use minirl_core::evalkit::RunMetrics;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Per-step training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Mean total reward per task family seen this step.
    pub family_mean_reward: BTreeMap<String, f64>,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub accuracy: f64,
    pub kl_to_reference: f64,
    /// Scheduled penalty strength at the reference length, this step.
    pub alpha_eff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunLogLine {
    Step(StepRecord),
    /// Hyperparameter reset during resume.
    Reset {
        step: u64,
        overrides: BTreeMap<String, String>,
    },
    /// Evaluation summary appended by the budget-curve command.
    Eval {
        mode: String,
        metrics: RunMetrics,
    },
}

/// Line-buffered appender; every record is flushed as one line so a crash
/// never leaves a partial record followed by a complete one.
pub struct RunLogWriter {
    file: std::fs::File,
}

impl RunLogWriter {
    pub fn append(path: &Path) -> Result<Self, HarnessError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self { file })
    }

    /// Truncate and start fresh (used by `train`; `resume` appends).
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = std::fs::File::create(path)?;
        Ok(Self { file })
    }

    pub fn write(&mut self, line: &RunLogLine) -> Result<(), HarnessError> {
        let text = serde_json::to_string(line).expect("log line serializes");
        self.file.write_all(text.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        Ok(())
    }
}

/// Parse a run log back into records (used by tests and tooling).
pub fn parse_run_log(text: &str) -> Result<Vec<RunLogLine>, HarnessError> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line)
                .map_err(|e| HarnessError::Other(format!("bad run log line: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_step_and_event_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut writer = RunLogWriter::create(&path).unwrap();
        let record = StepRecord {
            step: 1,
            family_mean_reward: BTreeMap::from([("math".to_string(), 0.75)]),
            mean_reward: 0.75,
            mean_length: 512.0,
            accuracy: 0.5,
            kl_to_reference: 0.001,
            alpha_eff: 0.2,
            wall_time_ms: None,
        };
        writer.write(&RunLogLine::Step(record.clone())).unwrap();
        writer
            .write(&RunLogLine::Reset {
                step: 1,
                overrides: BTreeMap::from([("learning_rate".into(), "0.001".into())]),
            })
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines = parse_run_log(&text).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], RunLogLine::Step(record));
        assert!(!text.contains("wall_time_ms"), "timing is opt-in");
    }
}
