//! Group-relative policy optimization over the finite bucket space.
//!
//! The policy is one softmax head per (family, thinking-mode) pair over the
//! environment's length buckets. There is no value model: advantages are
//! rewards standardized within each sampled group,
//!
//! ```text
//! A_i = (R_i - mean(R)) / (std(R) + eps)
//! ```
//!
//! with population std, which also aligns optimization-signal magnitudes
//! across task families with different reward scales. The surrogate loss is
//! the clipped importance-ratio objective plus an exact KL divergence to a
//! frozen reference policy — exact, not estimated, because the bucket space
//! is small enough to sum over:
//!
//! ```text
//! loss = -(1/k) * sum_i min(rho_i * A_i, clip(rho_i, 1-eps, 1+eps) * A_i)
//!        + beta * KL(pi_theta || pi_ref)
//! ```
//!
//! Sampling is on-policy each step, so `rho_i = 1` during the gradient
//! computation and clipping is inert unless a caller reuses stale groups.
//! Gradients with respect to the head logits are analytic; the optimizer is
//! plain gradient descent, which keeps finite-difference checks clean.

use crate::reward::{group_length_stats, GroupLengthStats, RewardBreakdown};
use crate::rng::Stream;
use crate::taskgen::{TaskFamily, TaskInstance};
pub use crate::thinkmode::ThinkMode;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Mode of a task's rollouts, from its `think_mode` flag.
pub fn mode_of_task(task: &TaskInstance) -> ThinkMode {
    if task.think_mode {
        ThinkMode::Thinking
    } else {
        ThinkMode::NonThinking
    }
}

pub type HeadKey = (TaskFamily, ThinkMode);

/// Per-(family, mode) bucket logits plus the shared softmax temperature.
/// Serializes as an ordered list of head entries so checkpoints are
/// string-keyed JSON and round-trip bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PolicyParamsRepr", into = "PolicyParamsRepr")]
pub struct PolicyParams {
    pub temperature: f64,
    heads: BTreeMap<HeadKey, Vec<f64>>,
}

#[derive(Clone, Serialize, Deserialize)]
struct HeadEntry {
    family: TaskFamily,
    mode: ThinkMode,
    logits: Vec<f64>,
}

#[derive(Clone, Serialize, Deserialize)]
struct PolicyParamsRepr {
    temperature: f64,
    heads: Vec<HeadEntry>,
}

impl From<PolicyParams> for PolicyParamsRepr {
    fn from(params: PolicyParams) -> Self {
        Self {
            temperature: params.temperature,
            heads: params
                .heads
                .into_iter()
                .map(|((family, mode), logits)| HeadEntry {
                    family,
                    mode,
                    logits,
                })
                .collect(),
        }
    }
}

impl From<PolicyParamsRepr> for PolicyParams {
    fn from(repr: PolicyParamsRepr) -> Self {
        Self {
            temperature: repr.temperature,
            heads: repr
                .heads
                .into_iter()
                .map(|entry| ((entry.family, entry.mode), entry.logits))
                .collect(),
        }
    }
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(logits, temperature)
        .into_iter()
        .map(f64::exp)
        .collect()
}

pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    debug_assert!(temperature > 0.0);
    let scaled: Vec<f64> = logits.iter().map(|&x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scaled.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|&x| x - max - log_sum).collect()
}

impl PolicyParams {
    /// All heads at zero logits: the uniform policy.
    pub fn uniform(bucket_count: usize, temperature: f64) -> Self {
        Self::with_length_bias(bucket_count, temperature, 0.0, 0.0)
    }

    /// Heads initialized with a per-mode length prior: logits rise linearly
    /// with bucket index at slope `bias` (centered, so the simplex direction
    /// is unbiased). A positive slope prefers long responses.
    pub fn with_length_bias(
        bucket_count: usize,
        temperature: f64,
        thinking_bias: f64,
        non_thinking_bias: f64,
    ) -> Self {
        let tilt = |bias: f64| -> Vec<f64> {
            let mid = (bucket_count as f64 - 1.0) / 2.0;
            (0..bucket_count).map(|b| bias * (b as f64 - mid)).collect()
        };
        let mut heads = BTreeMap::new();
        for family in TaskFamily::ALL {
            heads.insert((family, ThinkMode::Thinking), tilt(thinking_bias));
            heads.insert((family, ThinkMode::NonThinking), tilt(non_thinking_bias));
        }
        Self { temperature, heads }
    }

    pub fn bucket_count(&self) -> usize {
        self.heads.values().next().map_or(0, Vec::len)
    }

    pub fn head(&self, family: TaskFamily, mode: ThinkMode) -> &[f64] {
        &self.heads[&(family, mode)]
    }

    pub fn head_mut(&mut self, family: TaskFamily, mode: ThinkMode) -> &mut Vec<f64> {
        self.heads
            .get_mut(&(family, mode))
            .expect("all heads exist")
    }

    pub fn heads(&self) -> impl Iterator<Item = (&HeadKey, &Vec<f64>)> {
        self.heads.iter()
    }

    pub fn probabilities(&self, family: TaskFamily, mode: ThinkMode) -> Vec<f64> {
        softmax(self.head(family, mode), self.temperature)
    }

    /// Draw a bucket and return `(bucket_index, log_prob)`.
    pub fn sample_bucket(
        &self,
        family: TaskFamily,
        mode: ThinkMode,
        stream: &mut Stream,
    ) -> (usize, f64) {
        let log_probs = log_softmax(self.head(family, mode), self.temperature);
        let mut u = stream.next_f64();
        for (b, &lp) in log_probs.iter().enumerate() {
            u -= lp.exp();
            if u < 0.0 {
                return (b, lp);
            }
        }
        let last = log_probs.len() - 1;
        (last, log_probs[last])
    }

    /// Bucket with the highest probability (ties to the lower index).
    pub fn modal_bucket(&self, family: TaskFamily, mode: ThinkMode) -> usize {
        let head = self.head(family, mode);
        let mut best = 0;
        for (b, &logit) in head.iter().enumerate() {
            if logit > head[best] {
                best = b;
            }
        }
        best
    }

    /// Largest absolute logit difference across all heads.
    pub fn sup_distance(&self, other: &PolicyParams) -> f64 {
        let mut sup = 0.0f64;
        for (key, logits) in &self.heads {
            for (a, b) in logits.iter().zip(&other.heads[key]) {
                sup = sup.max((a - b).abs());
            }
        }
        sup
    }
}

/// One sampled rollout. `text` is synthesized on demand — the training loop
/// scores rollouts from their structure and only materializes surrogate
/// text for export or remote scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub bucket_index: usize,
    pub is_correct: bool,
    pub text: Option<String>,
    pub token_length: u64,
    /// `log pi(bucket | task)` at sampling time; never positive.
    pub log_prob: f64,
}

/// The k rollouts for one task, with their reward breakdowns.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub task: TaskInstance,
    pub samples: Vec<ResponseSample>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub stats: GroupLengthStats,
}

impl RolloutGroup {
    pub fn new(
        task: TaskInstance,
        samples: Vec<ResponseSample>,
        breakdowns: Vec<RewardBreakdown>,
    ) -> Result<Self, GrpoError> {
        if samples.len() < 2 || samples.len() != breakdowns.len() {
            return Err(GrpoError::InvalidGroup(format!(
                "need k >= 2 samples with matching breakdowns, got {} and {}",
                samples.len(),
                breakdowns.len()
            )));
        }
        if samples.iter().any(|s| s.log_prob > 0.0) {
            return Err(GrpoError::InvalidGroup("log_prob must be <= 0".into()));
        }
        let lengths: Vec<u64> = samples.iter().map(|s| s.token_length).collect();
        let stats =
            group_length_stats(&lengths).map_err(|e| GrpoError::InvalidGroup(e.to_string()))?;
        Ok(Self {
            task,
            samples,
            breakdowns,
            stats,
        })
    }

    pub fn head_key(&self) -> HeadKey {
        (self.task.family, mode_of_task(&self.task))
    }

    pub fn totals(&self) -> Vec<f64> {
        self.breakdowns.iter().map(|b| b.total).collect()
    }
}

/// Group-standardized advantages with population std.
pub fn advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::InvalidGroup(format!(
            "advantage estimation needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = variance.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Default advantage-normalization epsilon.
pub const ADVANTAGE_EPSILON: f64 = 1e-8;

/// Exact KL divergence between the softmax policies of two logit vectors at
/// a shared temperature, summed over the finite bucket space.
pub fn exact_kl(p_logits: &[f64], q_logits: &[f64], temperature: f64) -> f64 {
    assert_eq!(p_logits.len(), q_logits.len(), "mismatched bucket spaces");
    let lp = log_softmax(p_logits, temperature);
    let lq = log_softmax(q_logits, temperature);
    lp.iter()
        .zip(&lq)
        .map(|(&a, &b)| {
            let p = a.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (a - b)
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// Mean exact KL between matching heads of two policies.
pub fn mean_head_kl(current: &PolicyParams, reference: &PolicyParams) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (key, logits) in current.heads() {
        total += exact_kl(logits, reference.head(key.0, key.1), current.temperature);
        count += 1;
    }
    total / count.max(1) as f64
}

/// Optimizer state: the trained policy, a frozen reference snapshot, and
/// the step hyperparameters. The reference changes only on an explicit
/// [`reset_and_resume`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub learning_rate: f64,
    pub kl_coefficient: f64,
    pub clip_epsilon: f64,
    pub params: PolicyParams,
    pub reference: PolicyParams,
}

impl OptimizerState {
    pub fn new(
        params: PolicyParams,
        learning_rate: f64,
        kl_coefficient: f64,
        clip_epsilon: f64,
    ) -> Self {
        Self {
            step: 0,
            learning_rate,
            kl_coefficient,
            clip_epsilon,
            reference: params.clone(),
            params,
        }
    }
}

/// Loss and analytic gradient (with respect to this group's head logits)
/// of the clipped surrogate plus the KL anchor.
pub fn surrogate_loss(
    group: &RolloutGroup,
    state: &OptimizerState,
) -> Result<(f64, Vec<f64>), GrpoError> {
    let (family, mode) = group.head_key();
    let logits = state.params.head(family, mode);
    let ref_logits = state.reference.head(family, mode);
    if logits.len() != ref_logits.len() {
        return Err(GrpoError::InvalidState(
            "current and reference policies have mismatched bucket spaces".into(),
        ));
    }
    let bucket_count = logits.len();
    if let Some(bad) = group
        .samples
        .iter()
        .find(|s| s.bucket_index >= bucket_count)
    {
        return Err(GrpoError::InvalidState(format!(
            "sample bucket {} outside policy's {} buckets",
            bad.bucket_index, bucket_count
        )));
    }

    let temperature = state.params.temperature;
    let log_probs = log_softmax(logits, temperature);
    let probs: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
    let ref_log_probs = log_softmax(ref_logits, temperature);

    let advantage = advantages(&group.totals(), ADVANTAGE_EPSILON)
        .map_err(|e| GrpoError::InvalidGroup(e.to_string()))?;

    let k = group.samples.len() as f64;
    let (clip_lo, clip_hi) = (1.0 - state.clip_epsilon, 1.0 + state.clip_epsilon);
    let mut objective = 0.0;
    let mut grad = vec![0.0; bucket_count];

    for (sample, &adv) in group.samples.iter().zip(&advantage) {
        let rho = (log_probs[sample.bucket_index] - sample.log_prob).exp();
        let clipped = rho.clamp(clip_lo, clip_hi);
        objective += (rho * adv).min(clipped * adv);
        // The unclipped branch is active strictly inside the clip band on
        // the side its advantage sign cares about.
        let active = if adv >= 0.0 {
            rho < clip_hi
        } else {
            rho > clip_lo
        };
        if active && adv != 0.0 {
            // d rho / d theta_b = rho * (indicator(b_i) - pi_b) / T
            let scale = adv * rho / temperature;
            for (b, g) in grad.iter_mut().enumerate() {
                let indicator = (b == sample.bucket_index) as u8 as f64;
                *g -= scale * (indicator - probs[b]) / k;
            }
        }
    }

    let kl = exact_kl(logits, ref_logits, temperature);
    let loss = -objective / k + state.kl_coefficient * kl;
    if state.kl_coefficient != 0.0 {
        for (b, g) in grad.iter_mut().enumerate() {
            *g += state.kl_coefficient
                * (probs[b] / temperature)
                * (log_probs[b] - ref_log_probs[b] - kl);
        }
    }
    Ok((loss, grad))
}

/// One plain gradient-descent step: per-head mean gradient over the groups
/// that touched the head, reduced in group order. The reference policy is
/// untouched.
pub fn step(state: &OptimizerState, groups: &[RolloutGroup]) -> Result<OptimizerState, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::InvalidArgument(
            "optimizer step needs at least one group".into(),
        ));
    }
    let mut sums: BTreeMap<HeadKey, (Vec<f64>, usize)> = BTreeMap::new();
    for group in groups {
        let (_, grad) = surrogate_loss(group, state)?;
        let entry = sums
            .entry(group.head_key())
            .or_insert_with(|| (vec![0.0; grad.len()], 0));
        for (acc, g) in entry.0.iter_mut().zip(&grad) {
            *acc += g;
        }
        entry.1 += 1;
    }
    let mut next = state.clone();
    next.step += 1;
    for (key, (sum, count)) in sums {
        let head = next.params.head_mut(key.0, key.1);
        for (theta, g) in head.iter_mut().zip(&sum) {
            *theta -= state.learning_rate * g / count as f64;
        }
    }
    Ok(next)
}

/// Hyperparameter overrides permitted by [`reset_and_resume`]. Policy
/// parameters themselves are deliberately unrepresentable here.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResumeOverrides {
    pub learning_rate: Option<f64>,
    pub kl_coefficient: Option<f64>,
    pub clip_epsilon: Option<f64>,
}

impl ResumeOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// Reset for continued training: the trained parameters survive, the
/// reference re-snapshots to them, the step counter is preserved, and the
/// supplied hyperparameters replace the old ones.
pub fn reset_and_resume(
    state: &OptimizerState,
    overrides: &ResumeOverrides,
) -> Result<OptimizerState, GrpoError> {
    for (name, value) in [
        ("learning_rate", overrides.learning_rate),
        ("kl_coefficient", overrides.kl_coefficient),
        ("clip_epsilon", overrides.clip_epsilon),
    ] {
        if let Some(v) = value {
            if !v.is_finite() || v < 0.0 {
                return Err(GrpoError::InvalidArgument(format!(
                    "{name} override must be finite and non-negative, got {v}"
                )));
            }
        }
    }
    let mut next = state.clone();
    next.reference = next.params.clone();
    if let Some(lr) = overrides.learning_rate {
        next.learning_rate = lr;
    }
    if let Some(beta) = overrides.kl_coefficient {
        next.kl_coefficient = beta;
    }
    if let Some(eps) = overrides.clip_epsilon {
        next.clip_epsilon = eps;
    }
    Ok(next)
}
