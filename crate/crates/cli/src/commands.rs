//! Subcommand implementations shared by the binary and the test suites.

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::HarnessError;
use crate::runlog::{parse_run_log, RunLogLine, RunLogWriter};
use crate::trainer::Trainer;
use minirl_core::evalkit::{budget_curve, run_metrics, BudgetCurve, RunMetrics};
use minirl_core::grpo::{self, ResumeOverrides};
use minirl_core::reward::compose_rule_reward;
use minirl_core::reward::provider::{LocalProvider, RewardProvider, RewardRequest};
use minirl_core::rng::Stream;
use minirl_core::taskgen::{
    correctness_probability, generate_tasks_opt, GroundTruth, TaskGenOptions,
};
use minirl_core::ThinkMode;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// `train --config PATH [--seed N]`
pub fn cmd_train(config_path: &Path, seed_override: Option<u64>) -> Result<(), HarnessError> {
    let mut config = TrainConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let mut log = RunLogWriter::create(&config.output.run_log)?;
    let mut trainer = Trainer::new(config)?;
    run_loop(&mut trainer, &mut log)?;
    println!(
        "trained {} steps; final checkpoint in {}",
        trainer.state.step,
        trainer.config.output.checkpoint_dir.display()
    );
    Ok(())
}

/// The shared step/log/checkpoint loop. On a provider failure the last
/// consistent state is checkpointed before the error propagates.
pub fn run_loop(trainer: &mut Trainer, log: &mut RunLogWriter) -> Result<(), HarnessError> {
    while !trainer.finished() {
        match trainer.run_step() {
            Ok(record) => {
                log.write(&RunLogLine::Step(record))?;
                let step = trainer.state.step;
                if step % trainer.config.output.checkpoint_interval == 0 {
                    save_checkpoint(trainer, step)?;
                }
            }
            Err(e @ HarnessError::Provider(_)) => {
                save_checkpoint(trainer, trainer.state.step)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    save_checkpoint(trainer, trainer.state.step)?;
    let final_path = trainer.config.output.checkpoint_dir.join("final.json");
    trainer.checkpoint().save(&final_path)?;
    Ok(())
}

fn save_checkpoint(trainer: &Trainer, step: u64) -> Result<(), HarnessError> {
    let path = trainer
        .config
        .output
        .checkpoint_dir
        .join(format!("ckpt-{step:06}.json"));
    trainer.checkpoint().save(&path)
}

/// Evaluation rollouts of a frozen policy on the held-out task set, one
/// curve per thinking mode. Every task is swept under both modes so the
/// curves compare like for like.
pub fn eval_budget(
    checkpoint: &Checkpoint,
    config: &TrainConfig,
) -> Result<BTreeMap<String, (BudgetCurve, RunMetrics)>, HarnessError> {
    let env = config.env.model();
    env.validate()?;
    let eval_seed = config.seed.wrapping_add(config.eval.task_seed_offset);
    let tasks = generate_tasks_opt(
        eval_seed,
        config.eval.tasks,
        &config.family_mix.mix(),
        TaskGenOptions {
            think_fraction: config.think_fraction,
        },
    )?;
    let params = &checkpoint.state.params;
    if params.bucket_count() != env.bucket_tokens.len() {
        return Err(HarnessError::Checkpoint(format!(
            "checkpoint policy has {} buckets but the environment has {}",
            params.bucket_count(),
            env.bucket_tokens.len()
        )));
    }

    let mut output = BTreeMap::new();
    for (mode_index, mode) in ThinkMode::ALL.iter().enumerate() {
        let mut results = Vec::with_capacity(tasks.len() * config.eval.rollouts_per_task);
        for (task_index, task) in tasks.iter().enumerate() {
            for rollout in 0..config.eval.rollouts_per_task as u64 {
                let mut stream = Stream::derive(
                    eval_seed,
                    "eval_roll",
                    &[mode_index as u64, task_index as u64, rollout],
                );
                let (bucket, _) = params.sample_bucket(task.family, *mode, &mut stream);
                let p = correctness_probability(&env, bucket, task.difficulty)?;
                let correct = stream.next_bool(p);
                results.push((correct, env.bucket_tokens[bucket] as u64));
            }
        }
        let curve = budget_curve(&results, &config.eval.budgets)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let metrics = run_metrics(&results, checkpoint.state.step)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        output.insert(mode.name().to_string(), (curve, metrics));
    }
    Ok(output)
}

/// `eval-budget --checkpoint PATH --config PATH --out PATH`
pub fn cmd_eval_budget(
    checkpoint_path: &Path,
    config_path: &Path,
    out_path: &Path,
) -> Result<(), HarnessError> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let config = TrainConfig::load(config_path)?;
    let output = eval_budget(&checkpoint, &config)?;
    let mut log = RunLogWriter::append(&config.output.run_log)?;
    for (mode, (curve, metrics)) in &output {
        let path = mode_csv_path(out_path, mode);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(&path, curve.to_csv())?;
        log.write(&RunLogLine::Eval {
            mode: mode.clone(),
            metrics: metrics.clone(),
        })?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// `curves.csv` becomes `curves.thinking.csv` / `curves.non_thinking.csv`.
pub fn mode_csv_path(out_path: &Path, mode: &str) -> PathBuf {
    let stem = out_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("curve");
    let file = format!("{stem}.{mode}.csv");
    out_path.with_file_name(file)
}

/// `reward-check --in PATH --out PATH`: batch rule scoring over JSONL.
/// Each input line needs `response_text` and `ground_truth`; output lines
/// carry the original fields plus the three components and the composed
/// rule reward. Malformed lines become per-line error objects and
/// processing continues.
pub fn cmd_reward_check(input_path: &Path, output_path: &Path) -> Result<(), HarnessError> {
    let input = std::fs::File::open(input_path)?;
    if let Some(parent) = output_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut output = std::io::BufWriter::new(std::fs::File::create(output_path)?);
    let provider = LocalProvider::default();
    for (index, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let number = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let result = score_line(&provider, &line);
        let rendered = match result {
            Ok(value) => value,
            Err(message) => serde_json::json!({ "line": number, "error": message }),
        };
        output.write_all(rendered.to_string().as_bytes())?;
        output.write_all(b"\n")?;
    }
    output.flush()?;
    Ok(())
}

fn score_line(provider: &LocalProvider, line: &str) -> Result<serde_json::Value, String> {
    let mut value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("unparseable JSON: {e}"))?;
    let object = value
        .as_object()
        .ok_or_else(|| "line is not a JSON object".to_string())?;
    let response_text = object
        .get("response_text")
        .and_then(|v| v.as_str())
        .ok_or_else(|| "missing string field response_text".to_string())?
        .to_string();
    let ground_truth: GroundTruth = object
        .get("ground_truth")
        .cloned()
        .ok_or_else(|| "missing field ground_truth".to_string())
        .and_then(|v| {
            serde_json::from_value(v).map_err(|e| format!("invalid ground_truth: {e}"))
        })?;
    let id = object
        .get("id")
        .and_then(|v| v.as_str())
        .unwrap_or("line")
        .to_string();
    let family = object
        .get("family")
        .and_then(|v| v.as_str())
        .unwrap_or("unknown")
        .to_string();

    let response = provider
        .score(&[RewardRequest {
            id,
            family,
            response_text,
            ground_truth,
        }])
        .map_err(|e| e.to_string())?
        .remove(0);
    let rule = compose_rule_reward(
        response.answer_reward,
        response.format_coef,
        response.repetition_coef,
    )
    .map_err(|e| e.to_string())?;

    let object = value.as_object_mut().expect("checked above");
    object.insert("answer_reward".into(), response.answer_reward.into());
    object.insert("format_coef".into(), response.format_coef.into());
    object.insert("repetition_coef".into(), response.repetition_coef.into());
    object.insert("rule_reward".into(), rule.into());
    Ok(value)
}

/// Overrides accepted by `resume --set`: optimizer hyperparameters, the
/// penalty schedule, and the step budget. Anything else is rejected.
#[derive(Debug, Default, PartialEq)]
pub struct ParsedOverrides {
    pub optimizer: ResumeOverrides,
    pub penalty_enabled: Option<bool>,
    pub alpha0: Option<f64>,
    pub alpha_min: Option<f64>,
    pub decay_steps: Option<u64>,
    pub length_ref: Option<u64>,
    pub steps: Option<u64>,
}

impl ParsedOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn as_log_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        };
        put(
            "learning_rate",
            self.optimizer.learning_rate.map(|v| v.to_string()),
        );
        put(
            "kl_coefficient",
            self.optimizer.kl_coefficient.map(|v| v.to_string()),
        );
        put(
            "clip_epsilon",
            self.optimizer.clip_epsilon.map(|v| v.to_string()),
        );
        put(
            "length_penalty.enabled",
            self.penalty_enabled.map(|v| v.to_string()),
        );
        put("length_penalty.alpha0", self.alpha0.map(|v| v.to_string()));
        put(
            "length_penalty.alpha_min",
            self.alpha_min.map(|v| v.to_string()),
        );
        put(
            "length_penalty.decay_steps",
            self.decay_steps.map(|v| v.to_string()),
        );
        put(
            "length_penalty.length_ref",
            self.length_ref.map(|v| v.to_string()),
        );
        put("steps", self.steps.map(|v| v.to_string()));
        map
    }
}

pub fn parse_overrides(sets: &[String]) -> Result<ParsedOverrides, HarnessError> {
    let mut parsed = ParsedOverrides::default();
    for item in sets {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override {item:?} is not KEY=VALUE")))?;
        let float = || -> Result<f64, HarnessError> {
            raw.parse()
                .map_err(|_| HarnessError::Config(format!("override {key}: bad number {raw:?}")))
        };
        let integer = || -> Result<u64, HarnessError> {
            raw.parse()
                .map_err(|_| HarnessError::Config(format!("override {key}: bad integer {raw:?}")))
        };
        let boolean = || -> Result<bool, HarnessError> {
            raw.parse()
                .map_err(|_| HarnessError::Config(format!("override {key}: bad bool {raw:?}")))
        };
        match key {
            "learning_rate" => parsed.optimizer.learning_rate = Some(float()?),
            "kl_coefficient" => parsed.optimizer.kl_coefficient = Some(float()?),
            "clip_epsilon" => parsed.optimizer.clip_epsilon = Some(float()?),
            "length_penalty.enabled" => parsed.penalty_enabled = Some(boolean()?),
            "length_penalty.alpha0" => parsed.alpha0 = Some(float()?),
            "length_penalty.alpha_min" => parsed.alpha_min = Some(float()?),
            "length_penalty.decay_steps" => parsed.decay_steps = Some(integer()?),
            "length_penalty.length_ref" => parsed.length_ref = Some(integer()?),
            "steps" => parsed.steps = Some(integer()?),
            other => {
                return Err(HarnessError::Config(format!(
                    "override {other:?} is not permitted; allowed: learning_rate, \
                     kl_coefficient, clip_epsilon, length_penalty.*, steps"
                )));
            }
        }
    }
    Ok(parsed)
}

/// `resume --checkpoint PATH [--set key=value ...]`
///
/// A bare resume is pure continuation: state, reference, and streams pick
/// up exactly where the checkpoint stopped. Overrides trigger reset
/// semantics — the reference re-snapshots to the current parameters — and
/// the event is recorded in the run log.
pub fn cmd_resume(checkpoint_path: &Path, sets: &[String]) -> Result<(), HarnessError> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let overrides = parse_overrides(sets)?;

    let mut config = checkpoint.config.clone();
    let mut state = checkpoint.state.clone();
    let mut reset_event = None;
    if !overrides.is_empty() {
        state = grpo::reset_and_resume(&state, &overrides.optimizer)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(enabled) = overrides.penalty_enabled {
            config.length_penalty.enabled = enabled;
        }
        if let Some(alpha0) = overrides.alpha0 {
            config.length_penalty.alpha0 = alpha0;
        }
        if let Some(alpha_min) = overrides.alpha_min {
            config.length_penalty.alpha_min = alpha_min;
        }
        if let Some(decay_steps) = overrides.decay_steps {
            config.length_penalty.decay_steps = decay_steps;
        }
        if let Some(length_ref) = overrides.length_ref {
            config.length_penalty.length_ref = length_ref;
        }
        if let Some(steps) = overrides.steps {
            config.steps = steps;
        }
        if let Some(lr) = overrides.optimizer.learning_rate {
            config.learning_rate = lr;
        }
        if let Some(beta) = overrides.optimizer.kl_coefficient {
            config.kl_coefficient = beta;
        }
        if let Some(eps) = overrides.optimizer.clip_epsilon {
            config.clip_epsilon = eps;
        }
        reset_event = Some(RunLogLine::Reset {
            step: state.step,
            overrides: overrides.as_log_map(),
        });
    }
    config.validate()?;

    let mut log = RunLogWriter::append(&config.output.run_log)?;
    if let Some(event) = reset_event {
        log.write(&event)?;
    }
    let mut trainer = Trainer::with_state(config, state)?;
    if trainer.finished() {
        println!(
            "checkpoint already at step {} of {}; nothing to train",
            trainer.state.step, trainer.config.steps
        );
        return Ok(());
    }
    run_loop(&mut trainer, &mut log)?;
    println!("resumed to step {}", trainer.state.step);
    Ok(())
}

/// Enumeration-exact expected accuracy of a policy at one budget, for
/// curve verification: mean over tasks of `sum_b pi(b) p(b, d) [T_b <= budget]`.
pub fn expected_accuracy_at_budget(
    trainer_tasks: &[minirl_core::TaskInstance],
    env: &minirl_core::EnvModel,
    params: &minirl_core::PolicyParams,
    mode: ThinkMode,
    budget: u64,
) -> f64 {
    let mut total = 0.0;
    for task in trainer_tasks {
        let probs = params.probabilities(task.family, mode);
        for (bucket, &pi) in probs.iter().enumerate() {
            if env.bucket_tokens[bucket] as u64 <= budget {
                total += pi * correctness_probability(env, bucket, task.difficulty).unwrap();
            }
        }
    }
    total / trainer_tasks.len() as f64
}

/// Convenience for tests: run a full in-memory training pass.
pub fn train_in_memory(
    config: TrainConfig,
) -> Result<(Trainer, Vec<crate::runlog::StepRecord>), HarnessError> {
    let mut trainer = Trainer::new(config)?;
    let mut records = Vec::new();
    while !trainer.finished() {
        records.push(trainer.run_step()?);
    }
    Ok((trainer, records))
}

/// Read a run log file back (tests and tooling).
pub fn read_run_log(path: &Path) -> Result<Vec<RunLogLine>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_run_log(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parser_accepts_the_documented_keys() {
        let parsed = parse_overrides(&[
            "learning_rate=0.001".to_string(),
            "length_penalty.enabled=false".to_string(),
            "steps=600".to_string(),
        ])
        .unwrap();
        assert_eq!(parsed.optimizer.learning_rate, Some(0.001));
        assert_eq!(parsed.penalty_enabled, Some(false));
        assert_eq!(parsed.steps, Some(600));
    }

    #[test]
    fn override_parser_rejects_forbidden_keys() {
        for bad in ["seed=4", "params=1", "sampling_temperature=0.9", "nonsense"] {
            assert!(
                matches!(
                    parse_overrides(&[bad.to_string()]),
                    Err(HarnessError::Config(_))
                ),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn csv_paths_carry_the_mode() {
        let path = mode_csv_path(Path::new("out/curves.csv"), "thinking");
        assert_eq!(path, Path::new("out/curves.thinking.csv"));
    }
}
