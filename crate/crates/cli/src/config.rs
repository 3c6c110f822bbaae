//! Training configuration: one TOML document with a strict schema.
//!
//! Unknown keys anywhere in the document are errors — a typo in a penalty
//! constant must fail loudly, not silently train with defaults. Every
//! tunable threshold named by the engine (penalty schedule, verifier
//! thresholds, group size, temperature, policy length priors) lives here
//! exactly once.
//!
//! Any key can also be overridden from the environment: the variable
//! `MINIRL_<PATH>` maps to the config path with `__` separating nested
//! segments, e.g. `MINIRL_STEPS=500` or
//! `MINIRL_LENGTH_PENALTY__ENABLED=false`. Values parse as TOML scalars
//! and fall back to strings.

use crate::error::HarnessError;
use minirl_core::reward::PenaltySchedule;
use minirl_core::taskgen::{EnvModel, FamilyMix, TaskFamily};
use minirl_core::verifier::VerifierConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENV_PREFIX: &str = "MINIRL_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    /// Rollouts per group (k).
    pub group_size: usize,
    pub groups_per_step: usize,
    pub task_count: usize,
    /// Fraction of generated tasks flagged thinking-mode.
    pub think_fraction: f64,
    pub learning_rate: f64,
    pub kl_coefficient: f64,
    pub clip_epsilon: f64,
    pub sampling_temperature: f64,
    pub length_penalty: PenaltyConfig,
    pub env: EnvConfig,
    pub policy_init: PolicyInitConfig,
    pub family_mix: FamilyMixConfig,
    pub verifier: VerifierSection,
    pub provider: ProviderConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub enabled: bool,
    pub alpha0: f64,
    pub alpha_min: f64,
    pub decay_steps: u64,
    pub length_ref: u64,
}

impl PenaltyConfig {
    pub fn schedule(&self) -> PenaltySchedule {
        PenaltySchedule {
            alpha0: self.alpha0,
            alpha_min: self.alpha_min,
            decay_steps: self.decay_steps,
            length_ref: self.length_ref,
        }
    }
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        let schedule = PenaltySchedule::default();
        Self {
            enabled: true,
            alpha0: schedule.alpha0,
            alpha_min: schedule.alpha_min,
            decay_steps: schedule.decay_steps,
            length_ref: schedule.length_ref,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub bucket_tokens: Vec<u32>,
    pub p_max: f64,
    pub tau0: f64,
    pub gamma: f64,
}

impl EnvConfig {
    pub fn model(&self) -> EnvModel {
        EnvModel {
            bucket_tokens: self.bucket_tokens.clone(),
            p_max: self.p_max,
            tau0: self.tau0,
            gamma: self.gamma,
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        let model = EnvModel::default();
        Self {
            bucket_tokens: model.bucket_tokens,
            p_max: model.p_max,
            tau0: model.tau0,
            gamma: model.gamma,
        }
    }
}

/// Initial per-mode length priors: the logit slope over bucket index.
/// Thinking mode defaults to a longer prior, which under the saturating
/// environment also means a higher-accuracy one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyInitConfig {
    pub thinking_length_bias: f64,
    pub non_thinking_length_bias: f64,
}

impl Default for PolicyInitConfig {
    fn default() -> Self {
        Self {
            thinking_length_bias: 0.5,
            non_thinking_length_bias: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyMixConfig {
    pub math: f64,
    pub code: f64,
    pub stem: f64,
    pub instruction_following: f64,
    pub mobile_service: f64,
}

impl FamilyMixConfig {
    pub fn mix(&self) -> FamilyMix {
        FamilyMix::from([
            (TaskFamily::Math, self.math),
            (TaskFamily::Code, self.code),
            (TaskFamily::Stem, self.stem),
            (TaskFamily::InstructionFollowing, self.instruction_following),
            (TaskFamily::MobileService, self.mobile_service),
        ])
    }
}

impl Default for FamilyMixConfig {
    fn default() -> Self {
        // Proportional to the production query mix, scaled down.
        Self {
            math: 5.0,
            code: 3.0,
            stem: 1.5,
            instruction_following: 3.0,
            mobile_service: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierSection {
    pub min_reasoning_tokens: usize,
    pub ngram_n: usize,
    pub max_dup_ratio: f64,
}

impl VerifierSection {
    pub fn config(&self) -> VerifierConfig {
        VerifierConfig {
            min_reasoning_tokens: self.min_reasoning_tokens,
            ngram_n: self.ngram_n,
            max_dup_ratio: self.max_dup_ratio,
        }
    }
}

impl Default for VerifierSection {
    fn default() -> Self {
        let config = VerifierConfig::default();
        Self {
            min_reasoning_tokens: config.min_reasoning_tokens,
            ngram_n: config.ngram_n,
            max_dup_ratio: config.max_dup_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Local,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// `host:port`, required when kind = "remote".
    pub address: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Local,
            address: String::new(),
            timeout_ms: 2000,
            retries: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub budgets: Vec<u64>,
    pub tasks: usize,
    pub rollouts_per_task: usize,
    /// Added to the root seed for the held-out task set.
    pub task_seed_offset: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            budgets: vec![4096, 6144, 8192, 12288, 16384, 24576, 32768],
            tasks: 64,
            rollouts_per_task: 200,
            task_seed_offset: 1_000_003,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub run_log: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub checkpoint_interval: u64,
    /// When true, step records carry wall-clock timings. Off by default so
    /// identical seeded runs produce byte-identical logs.
    pub log_timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            run_log: PathBuf::from("runs/train.jsonl"),
            checkpoint_dir: PathBuf::from("runs/checkpoints"),
            checkpoint_interval: 100,
            log_timing: false,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            steps: 300,
            group_size: 8,
            groups_per_step: 16,
            task_count: 256,
            think_fraction: 0.5,
            learning_rate: 0.85,
            kl_coefficient: 0.01,
            clip_epsilon: 0.2,
            sampling_temperature: 0.6,
            length_penalty: PenaltyConfig::default(),
            env: EnvConfig::default(),
            policy_init: PolicyInitConfig::default(),
            family_mix: FamilyMixConfig::default(),
            verifier: VerifierSection::default(),
            provider: ProviderConfig::default(),
            eval: EvalConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Parse a TOML document with environment overrides applied.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let mut value: toml::Value = toml::from_str(text)
            .map_err(|e| HarnessError::Config(format!("cannot parse config: {e}")))?;
        apply_env_overrides(&mut value, std::env::vars())?;
        let config: TrainConfig = value
            .try_into()
            .map_err(|e| HarnessError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.steps == 0 {
            return Err(HarnessError::Config("steps must be at least 1".into()));
        }
        if self.group_size < 2 {
            return Err(HarnessError::Config("group_size must be at least 2".into()));
        }
        if self.groups_per_step == 0 {
            return Err(HarnessError::Config(
                "groups_per_step must be at least 1".into(),
            ));
        }
        if self.task_count == 0 {
            return Err(HarnessError::Config("task_count must be at least 1".into()));
        }
        if !(self.sampling_temperature > 0.0) {
            return Err(HarnessError::Config(
                "sampling_temperature must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.think_fraction) {
            return Err(HarnessError::Config(
                "think_fraction must be in [0, 1]".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.kl_coefficient >= 0.0) {
            return Err(HarnessError::Config(
                "learning_rate and kl_coefficient must be non-negative".into(),
            ));
        }
        if !(self.clip_epsilon >= 0.0) {
            return Err(HarnessError::Config(
                "clip_epsilon must be non-negative".into(),
            ));
        }
        self.env
            .model()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.length_penalty
            .schedule()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.verifier.ngram_n < 2 {
            return Err(HarnessError::Config("verifier.ngram_n must be >= 2".into()));
        }
        let mix = self.family_mix.mix();
        if mix.values().any(|&w| w < 0.0) || mix.values().sum::<f64>() <= 0.0 {
            return Err(HarnessError::Config(
                "family_mix weights must be non-negative and not all zero".into(),
            ));
        }
        if self.provider.kind == ProviderKind::Remote && self.provider.address.is_empty() {
            return Err(HarnessError::Config(
                "provider.kind = \"remote\" requires provider.address".into(),
            ));
        }
        if self.eval.budgets.is_empty() || !self.eval.budgets.windows(2).all(|w| w[0] < w[1]) {
            return Err(HarnessError::Config(
                "eval.budgets must be non-empty and strictly increasing".into(),
            ));
        }
        if self.eval.tasks == 0 || self.eval.rollouts_per_task == 0 {
            return Err(HarnessError::Config(
                "eval.tasks and eval.rollouts_per_task must be positive".into(),
            ));
        }
        if self.output.checkpoint_interval == 0 {
            return Err(HarnessError::Config(
                "output.checkpoint_interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Apply `MINIRL_*` environment overrides onto the parsed TOML tree.
fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<(), HarnessError> {
    let mut overrides: Vec<(String, String)> = vars
        .filter(|(key, _)| key.starts_with(ENV_PREFIX))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(HarnessError::Config(format!(
                "malformed override variable {key}"
            )));
        }
        let parsed = parse_override_value(&raw);
        let mut node = &mut *value;
        for segment in &path[..path.len() - 1] {
            let table = node.as_table_mut().ok_or_else(|| {
                HarnessError::Config(format!("override {key} traverses a non-table"))
            })?;
            node = table
                .entry(segment.clone())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override {key} traverses a non-table")))?;
        table.insert(path.last().unwrap().clone(), parsed);
    }
    Ok(())
}

/// Parse an override as a TOML scalar/array, falling back to a string.
fn parse_override_value(raw: &str) -> toml::Value {
    let document = format!("v = {raw}");
    match toml::from_str::<toml::Value>(&document) {
        Ok(toml::Value::Table(mut table)) => table.remove("v").unwrap(),
        _ => toml::Value::String(raw.to_string()),
    }
}
