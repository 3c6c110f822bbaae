//! The training loop: sample groups, score them, take one optimizer step.
//!
//! All randomness derives from the root seed through named streams keyed by
//! `(step, group, sample)`, so a run is a pure function of its config and a
//! resumed run replays the exact tail of a straight-through run.
//!
//! With the local provider, rollouts are scored from their outcome
//! structure (`taskgen::structured_rule_components`) — equivalent to the
//! full text route by construction and property test, and fast enough for
//! single-threaded seeded experiments. The remote provider materializes
//! surrogate text per sample and ships it over the wire protocol; a
//! provider failure aborts the whole group and surfaces as a provider
//! error with the checkpoint preserved by the command layer.

use crate::checkpoint::Checkpoint;
use crate::config::{ProviderKind, TrainConfig};
use crate::error::HarnessError;
use crate::runlog::StepRecord;
use minirl_core::grpo::{
    self, mode_of_task, OptimizerState, PolicyParams, ResponseSample, RolloutGroup,
};
use minirl_core::reward::provider::{RemoteProvider, RewardRequest};
use minirl_core::reward::{score_group, score_group_with_provider, PenaltySchedule, SampleScore};
use minirl_core::rng::Stream;
use minirl_core::taskgen::{
    correctness_probability, generate_tasks_opt, structured_rule_components, synthesize_response,
    EnvModel, TaskGenOptions, TaskInstance,
};
use minirl_core::verifier::VerifierConfig;
use std::collections::BTreeMap;
use std::time::Duration;

pub struct Trainer {
    pub config: TrainConfig,
    pub state: OptimizerState,
    env: EnvModel,
    schedule: PenaltySchedule,
    verifier_config: VerifierConfig,
    tasks: Vec<TaskInstance>,
    remote: Option<RemoteProvider>,
}

impl Trainer {
    /// Fresh run: tasks and initial policy derived from the config.
    pub fn new(config: TrainConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let params = PolicyParams::with_length_bias(
            config.env.bucket_tokens.len(),
            config.sampling_temperature,
            config.policy_init.thinking_length_bias,
            config.policy_init.non_thinking_length_bias,
        );
        let state = OptimizerState::new(
            params,
            config.learning_rate,
            config.kl_coefficient,
            config.clip_epsilon,
        );
        Self::with_state(config, state)
    }

    /// Continue from a checkpoint's state.
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self, HarnessError> {
        Self::with_state(checkpoint.config, checkpoint.state)
    }

    pub fn with_state(config: TrainConfig, state: OptimizerState) -> Result<Self, HarnessError> {
        config.validate()?;
        let env = config.env.model();
        if state.params.bucket_count() != env.bucket_tokens.len() {
            return Err(HarnessError::Checkpoint(format!(
                "policy has {} buckets but the environment has {}",
                state.params.bucket_count(),
                env.bucket_tokens.len()
            )));
        }
        let tasks = generate_tasks_opt(
            config.seed,
            config.task_count,
            &config.family_mix.mix(),
            TaskGenOptions {
                think_fraction: config.think_fraction,
            },
        )?;
        let remote = match config.provider.kind {
            ProviderKind::Local => None,
            ProviderKind::Remote => Some(RemoteProvider::new(
                config.provider.address.clone(),
                Duration::from_millis(config.provider.timeout_ms),
                config.provider.retries,
            )),
        };
        Ok(Self {
            schedule: config.length_penalty.schedule(),
            verifier_config: config.verifier.config(),
            env,
            tasks,
            remote,
            config,
            state,
        })
    }

    pub fn finished(&self) -> bool {
        self.state.step >= self.config.steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.config.clone(), self.state.clone())
    }

    fn penalty(&self) -> Option<(&PenaltySchedule, u64)> {
        self.config
            .length_penalty
            .enabled
            .then_some((&self.schedule, self.state.step))
    }

    /// Run one training step and return its log record.
    pub fn run_step(&mut self) -> Result<StepRecord, HarnessError> {
        let timer = std::time::Instant::now();
        let step_index = self.state.step;
        let seed = self.config.seed;

        let mut groups = Vec::with_capacity(self.config.groups_per_step);
        for group_index in 0..self.config.groups_per_step as u64 {
            let mut pick = Stream::derive(seed, "task_pick", &[step_index, group_index]);
            let task = self.tasks[pick.next_below(self.tasks.len() as u64) as usize].clone();
            groups.push(self.rollout_group(task, step_index, group_index)?);
        }

        self.state = grpo::step(&self.state, &groups)?;
        Ok(self.record_for(&groups, timer))
    }

    fn rollout_group(
        &self,
        task: TaskInstance,
        step_index: u64,
        group_index: u64,
    ) -> Result<RolloutGroup, HarnessError> {
        let (family, mode) = (task.family, mode_of_task(&task));
        let k = self.config.group_size;
        let mut samples = Vec::with_capacity(k);
        let mut streams = Vec::with_capacity(k);
        for sample_index in 0..k as u64 {
            let mut stream = Stream::derive(
                self.config.seed,
                "rollout",
                &[step_index, group_index, sample_index],
            );
            let (bucket, log_prob) = self.state.params.sample_bucket(family, mode, &mut stream);
            let p = correctness_probability(&self.env, bucket, task.difficulty)?;
            let is_correct = stream.next_bool(p);
            samples.push(ResponseSample {
                bucket_index: bucket,
                is_correct,
                text: None,
                token_length: self.env.bucket_tokens[bucket] as u64,
                log_prob,
            });
            streams.push(stream);
        }

        let breakdowns = match &self.remote {
            None => {
                let scores: Vec<SampleScore> = samples
                    .iter()
                    .map(|sample| {
                        structured_rule_components(
                            &self.env,
                            sample.bucket_index,
                            sample.is_correct,
                            &self.verifier_config,
                        )
                        .map(|(answer, format, repetition)| SampleScore {
                            answer_reward: answer,
                            format_coef: format,
                            repetition_coef: repetition,
                            token_length: sample.token_length,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                score_group(&scores, self.penalty())?
            }
            Some(remote) => {
                // Remote scoring needs the surrogate text on the wire.
                let mut requests = Vec::with_capacity(k);
                for (sample_index, (sample, stream)) in
                    samples.iter_mut().zip(&mut streams).enumerate()
                {
                    let text = synthesize_response(
                        &task,
                        &self.env,
                        sample.bucket_index,
                        sample.is_correct,
                        stream,
                    )?;
                    requests.push(RewardRequest {
                        id: format!("s{step_index}-g{group_index}-{sample_index}"),
                        family: task.family.name().to_string(),
                        response_text: text.clone(),
                        ground_truth: task.ground_truth.clone(),
                    });
                    sample.text = Some(text);
                }
                score_group_with_provider(&requests, remote, self.penalty())?
            }
        };
        Ok(RolloutGroup::new(task, samples, breakdowns)?)
    }

    fn record_for(&self, groups: &[RolloutGroup], timer: std::time::Instant) -> StepRecord {
        let mut family_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut reward_sum = 0.0;
        let mut length_sum = 0.0;
        let mut correct = 0usize;
        let mut count = 0usize;
        for group in groups {
            let family = group.task.family.name().to_string();
            let entry = family_sums.entry(family).or_insert((0.0, 0));
            for (sample, breakdown) in group.samples.iter().zip(&group.breakdowns) {
                entry.0 += breakdown.total;
                entry.1 += 1;
                reward_sum += breakdown.total;
                length_sum += sample.token_length as f64;
                correct += sample.is_correct as usize;
                count += 1;
            }
        }
        let family_mean_reward = family_sums
            .into_iter()
            .map(|(family, (sum, n))| (family, sum / n as f64))
            .collect();
        StepRecord {
            step: self.state.step,
            family_mean_reward,
            mean_reward: reward_sum / count as f64,
            mean_length: length_sum / count as f64,
            accuracy: correct as f64 / count as f64,
            kl_to_reference: grpo::mean_head_kl(&self.state.params, &self.state.reference),
            alpha_eff: minirl_core::reward::effective_alpha(
                &self.schedule,
                self.state.step.saturating_sub(1),
                self.schedule.length_ref,
            ),
            wall_time_ms: self
                .config
                .output
                .log_timing
                .then(|| timer.elapsed().as_secs_f64() * 1000.0),
        }
    }

    /// Expected rule reward per bucket for one policy head, averaged over
    /// this trainer's task set — the enumeration target that training with
    /// the length penalty off should drive each head's mode toward.
    pub fn expected_rule_reward_by_bucket(
        &self,
        family: minirl_core::TaskFamily,
        mode: minirl_core::ThinkMode,
    ) -> Vec<f64> {
        let relevant: Vec<&TaskInstance> = self
            .tasks
            .iter()
            .filter(|t| t.family == family && mode_of_task(t) == mode)
            .collect();
        let mut expected = vec![0.0; self.env.bucket_tokens.len()];
        if relevant.is_empty() {
            return expected;
        }
        for (bucket, value) in expected.iter_mut().enumerate() {
            let mut sum = 0.0;
            for task in &relevant {
                let p = correctness_probability(&self.env, bucket, task.difficulty).unwrap();
                let (_, format, repetition) =
                    structured_rule_components(&self.env, bucket, true, &self.verifier_config)
                        .unwrap();
                sum += p * format * repetition;
            }
            *value = sum / relevant.len() as f64;
        }
        expected
    }

    pub fn tasks(&self) -> &[TaskInstance] {
        &self.tasks
    }

    pub fn env(&self) -> &EnvModel {
        &self.env
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig {
            steps: 5,
            group_size: 4,
            groups_per_step: 3,
            task_count: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_configs_produce_identical_runs() {
        let mut a = Trainer::new(small_config()).unwrap();
        let mut b = Trainer::new(small_config()).unwrap();
        for _ in 0..5 {
            let ra = a.run_step().unwrap();
            let rb = b.run_step().unwrap();
            assert_eq!(ra, rb);
        }
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn checkpoint_resume_replays_the_same_tail() {
        let mut straight = Trainer::new(small_config()).unwrap();
        for _ in 0..5 {
            straight.run_step().unwrap();
        }

        let mut head = Trainer::new(small_config()).unwrap();
        for _ in 0..2 {
            head.run_step().unwrap();
        }
        let checkpoint = head.checkpoint();
        let json = checkpoint.to_json();
        let reloaded = Checkpoint::from_json(&json).unwrap();
        let mut resumed = Trainer::from_checkpoint(reloaded).unwrap();
        for _ in 0..3 {
            resumed.run_step().unwrap();
        }
        assert_eq!(resumed.state, straight.state);
        assert_eq!(
            resumed.state.params.sup_distance(&straight.state.params),
            0.0
        );
    }

    #[test]
    fn step_records_count_up_from_one() {
        let mut trainer = Trainer::new(small_config()).unwrap();
        let first = trainer.run_step().unwrap();
        let second = trainer.run_step().unwrap();
        assert_eq!(first.step, 1);
        assert_eq!(second.step, 2);
        assert!(first.accuracy >= 0.0 && first.accuracy <= 1.0);
        assert!(first.mean_length > 0.0);
        assert!((first.alpha_eff - 0.2).abs() < 1e-12, "alpha0 at step one");
    }
}
