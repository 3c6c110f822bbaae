//! Reward composition and the group-relative length penalty.
//!
//! The rule reward for a response is the product of three components —
//! answer reward in {0, 1}, format coefficient in {0.1, 1.0}, repetition
//! coefficient in {0.1, 1.0} — so composed values live on the exact lattice
//! {0, 0.01, 0.1, 1}.
//!
//! On top of the rule reward sits the group-relative length reward: for the
//! k responses sampled for one query, with group lengths `L_min`/`L_max`
//! and `delta = max(500, L_max - L_min)`,
//!
//! ```text
//! lambda_i = 0.5 - (L_i - L_min) / delta
//! R_len(i) = alpha * lambda_i   if the response is correct
//!          = 0                  otherwise
//! ```
//!
//! The penalty strength `alpha` is scheduled: it decays linearly in the
//! training step down to a floor, scaled by a clamped response-length
//! factor, so the penalty weakens over training and for short responses.
//!
//! Totals are `rule_reward + length_reward`; an incorrect response never
//! receives a length reward, so its total stays on the rule lattice.

pub mod provider;

use crate::verifier::PENALTY_COEFFICIENT;
use serde::{Deserialize, Serialize};

/// Floor applied to the group length spread, in tokens.
pub const MIN_LENGTH_SPREAD: u64 = 500;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("reward provider failed for samples {failed_ids:?}: {message}")]
    Provider {
        failed_ids: Vec<String>,
        message: String,
    },
}

/// Length statistics of one sampled group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLengthStats {
    pub l_min: u64,
    pub l_max: u64,
    /// `max(500, l_max - l_min)`.
    pub delta_l: u64,
}

/// Schedule for the penalty strength alpha.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    /// Base coefficient at step 0.
    pub alpha0: f64,
    /// Lower bound the linear decay never crosses.
    pub alpha_min: f64,
    /// Steps over which alpha0 decays linearly to zero (floored at alpha_min).
    pub decay_steps: u64,
    /// Response length at which the length factor saturates to 1.
    pub length_ref: u64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            alpha0: 0.2,
            alpha_min: 0.05,
            decay_steps: 2000,
            length_ref: 1024,
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha0) {
            return Err(RewardError::InvalidArgument(format!(
                "need 0 < alpha_min <= alpha0, got alpha_min={} alpha0={}",
                self.alpha_min, self.alpha0
            )));
        }
        if self.decay_steps == 0 {
            return Err(RewardError::InvalidArgument(
                "decay_steps must be positive".into(),
            ));
        }
        if self.length_ref == 0 {
            return Err(RewardError::InvalidArgument(
                "length_ref must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Full reward decomposition for one response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub answer_reward: f64,
    pub format_coef: f64,
    pub repetition_coef: f64,
    /// `answer_reward * format_coef * repetition_coef`, on the exact lattice.
    pub rule_reward: f64,
    /// `0.5 - (L_i - L_min) / delta`, reported for correct and incorrect
    /// responses alike.
    pub lambda: f64,
    /// `alpha_eff * lambda` when correct, zero otherwise.
    pub length_reward: f64,
    pub total: f64,
}

fn is_answer_value(v: f64) -> bool {
    v == 0.0 || v == 1.0
}

fn is_coefficient_value(v: f64) -> bool {
    v == PENALTY_COEFFICIENT || v == 1.0
}

/// Product of the three rule components. Components are validated against
/// their discrete ranges, and the result is returned as the exact lattice
/// value so downstream comparisons never chase float dust from `0.1 * 0.1`.
pub fn compose_rule_reward(
    answer_reward: f64,
    format_coef: f64,
    repetition_coef: f64,
) -> Result<f64, RewardError> {
    if !is_answer_value(answer_reward) {
        return Err(RewardError::InvalidArgument(format!(
            "answer reward must be 0 or 1, got {answer_reward}"
        )));
    }
    if !is_coefficient_value(format_coef) || !is_coefficient_value(repetition_coef) {
        return Err(RewardError::InvalidArgument(format!(
            "coefficients must be 0.1 or 1.0, got format={format_coef} repetition={repetition_coef}"
        )));
    }
    if answer_reward == 0.0 {
        return Ok(0.0);
    }
    let penalties = (format_coef == PENALTY_COEFFICIENT) as u32
        + (repetition_coef == PENALTY_COEFFICIENT) as u32;
    Ok(match penalties {
        0 => 1.0,
        1 => 0.1,
        _ => 0.01,
    })
}

/// Min, max, and floored spread of a group's response lengths.
pub fn group_length_stats(lengths: &[u64]) -> Result<GroupLengthStats, RewardError> {
    if lengths.len() < 2 {
        return Err(RewardError::InvalidGroup(format!(
            "group length statistics need at least 2 samples, got {}",
            lengths.len()
        )));
    }
    if lengths.iter().any(|&l| l == 0) {
        return Err(RewardError::InvalidGroup(
            "response lengths must be positive".into(),
        ));
    }
    let l_min = *lengths.iter().min().unwrap();
    let l_max = *lengths.iter().max().unwrap();
    Ok(GroupLengthStats {
        l_min,
        l_max,
        delta_l: (l_max - l_min).max(MIN_LENGTH_SPREAD),
    })
}

/// Group-relative length reward for one response. Returns `(lambda, r_len)`;
/// lambda is reported even when the response is incorrect and `r_len` is
/// therefore zero.
pub fn length_reward(
    length: u64,
    correct: bool,
    stats: &GroupLengthStats,
    alpha_eff: f64,
) -> Result<(f64, f64), RewardError> {
    if length < stats.l_min || length > stats.l_max {
        return Err(RewardError::InvalidArgument(format!(
            "length {length} outside group range [{}, {}]",
            stats.l_min, stats.l_max
        )));
    }
    if !(alpha_eff > 0.0) {
        return Err(RewardError::InvalidArgument(format!(
            "alpha_eff must be positive, got {alpha_eff}"
        )));
    }
    let lambda = 0.5 - (length - stats.l_min) as f64 / stats.delta_l as f64;
    let r_len = if correct { alpha_eff * lambda } else { 0.0 };
    Ok((lambda, r_len))
}

/// Scheduled penalty strength: linear decay in the step, floored at
/// `alpha_min`, times a response-length factor clamped to `[0.5, 1.0]`.
pub fn effective_alpha(schedule: &PenaltySchedule, step: u64, length: u64) -> f64 {
    let progress = (step as f64 / schedule.decay_steps as f64).min(1.0);
    let decayed = (schedule.alpha0 * (1.0 - progress)).max(schedule.alpha_min);
    let length_factor = (length as f64 / schedule.length_ref as f64).clamp(0.5, 1.0);
    decayed * length_factor
}

/// One sample's inputs to group scoring: the three rule components plus
/// length and correctness.
#[derive(Clone, Debug)]
pub struct SampleScore {
    pub answer_reward: f64,
    pub format_coef: f64,
    pub repetition_coef: f64,
    pub token_length: u64,
}

/// Score a whole group: compose rule rewards, compute group length
/// statistics once, and apply the length reward per sample (skipped
/// entirely when `penalty` is `None`). Pure; providers fetch the
/// components beforehand.
pub fn score_group(
    samples: &[SampleScore],
    penalty: Option<(&PenaltySchedule, u64)>,
) -> Result<Vec<RewardBreakdown>, RewardError> {
    if samples.len() < 2 {
        return Err(RewardError::InvalidGroup(format!(
            "group scoring needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let lengths: Vec<u64> = samples.iter().map(|s| s.token_length).collect();
    let stats = group_length_stats(&lengths)?;
    samples
        .iter()
        .map(|sample| {
            let rule_reward = compose_rule_reward(
                sample.answer_reward,
                sample.format_coef,
                sample.repetition_coef,
            )?;
            let correct = sample.answer_reward == 1.0;
            let (lambda, r_len) = match penalty {
                Some((schedule, step)) => {
                    let alpha = effective_alpha(schedule, step, sample.token_length);
                    length_reward(sample.token_length, correct, &stats, alpha)?
                }
                None => {
                    let (lambda, _) = length_reward(sample.token_length, correct, &stats, 1.0)?;
                    (lambda, 0.0)
                }
            };
            Ok(RewardBreakdown {
                answer_reward: sample.answer_reward,
                format_coef: sample.format_coef,
                repetition_coef: sample.repetition_coef,
                rule_reward,
                lambda,
                length_reward: r_len,
                total: rule_reward + r_len,
            })
        })
        .collect()
}

/// Score a group by fetching rule components from a provider, then applying
/// [`score_group`]. Token lengths come from the request text under the
/// crate's token rule. A provider failure aborts the whole group, with the
/// failing sample ids recorded in the error.
pub fn score_group_with_provider(
    requests: &[provider::RewardRequest],
    provider: &dyn provider::RewardProvider,
    penalty: Option<(&PenaltySchedule, u64)>,
) -> Result<Vec<RewardBreakdown>, RewardError> {
    if requests.len() < 2 {
        return Err(RewardError::InvalidGroup(format!(
            "group scoring needs at least 2 samples, got {}",
            requests.len()
        )));
    }
    let responses = provider.score(requests).map_err(|e| {
        let mut failed_ids = e.failed_ids();
        if failed_ids.is_empty() {
            failed_ids = requests.iter().map(|r| r.id.clone()).collect();
        }
        RewardError::Provider {
            failed_ids,
            message: e.to_string(),
        }
    })?;
    if responses.len() != requests.len() {
        return Err(RewardError::Provider {
            failed_ids: requests.iter().map(|r| r.id.clone()).collect(),
            message: format!(
                "provider returned {} responses for {} requests",
                responses.len(),
                requests.len()
            ),
        });
    }
    let samples: Vec<SampleScore> = requests
        .iter()
        .zip(&responses)
        .map(|(request, response)| SampleScore {
            answer_reward: response.answer_reward,
            format_coef: response.format_coef,
            repetition_coef: response.repetition_coef,
            token_length: crate::taskgen::token_count(&request.response_text) as u64,
        })
        .collect();
    score_group(&samples, penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compose_covers_the_lattice() {
        assert_eq!(compose_rule_reward(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(compose_rule_reward(1.0, 0.1, 1.0).unwrap(), 0.1);
        assert_eq!(compose_rule_reward(1.0, 1.0, 0.1).unwrap(), 0.1);
        assert_eq!(compose_rule_reward(1.0, 0.1, 0.1).unwrap(), 0.01);
        assert_eq!(compose_rule_reward(0.0, 0.1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn compose_rejects_out_of_range_components() {
        assert!(compose_rule_reward(0.5, 1.0, 1.0).is_err());
        assert!(compose_rule_reward(1.0, 0.2, 1.0).is_err());
        assert!(compose_rule_reward(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn group_stats_apply_the_spread_floor() {
        let s = group_length_stats(&[1200, 1700]).unwrap();
        assert_eq!((s.l_min, s.l_max, s.delta_l), (1200, 1700, 500));
        let s = group_length_stats(&[800, 900, 1000]).unwrap();
        assert_eq!((s.l_min, s.l_max, s.delta_l), (800, 1000, 500));
        let s = group_length_stats(&[100, 1100]).unwrap();
        assert_eq!((s.l_min, s.l_max, s.delta_l), (100, 1100, 1000));
    }

    #[test]
    fn undersized_groups_are_rejected() {
        assert!(matches!(
            group_length_stats(&[42]),
            Err(RewardError::InvalidGroup(_))
        ));
    }

    #[test]
    fn length_reward_matches_hand_derived_values() {
        // Two correct responses 500 tokens apart at alpha = 0.2.
        let stats = group_length_stats(&[1200, 1700]).unwrap();
        let (l0, r0) = length_reward(1200, true, &stats, 0.2).unwrap();
        let (l1, r1) = length_reward(1700, true, &stats, 0.2).unwrap();
        assert!((l0 - 0.5).abs() < 1e-12 && (r0 - 0.1).abs() < 1e-12);
        assert!((l1 + 0.5).abs() < 1e-12 && (r1 + 0.1).abs() < 1e-12);

        // Three responses, the middle one incorrect.
        let stats = group_length_stats(&[800, 900, 1000]).unwrap();
        let (_, r0) = length_reward(800, true, &stats, 0.2).unwrap();
        let (lam1, r1) = length_reward(900, false, &stats, 0.2).unwrap();
        let (_, r2) = length_reward(1000, true, &stats, 0.2).unwrap();
        assert!((r0 - 0.1).abs() < 1e-12);
        assert_eq!(r1, 0.0);
        assert!((lam1 - 0.3).abs() < 1e-12, "lambda still reported");
        assert!((r2 - 0.02).abs() < 1e-12);
    }

    #[test]
    fn incorrect_response_gets_zero_length_reward() {
        let stats = group_length_stats(&[100, 1100]).unwrap();
        let (lambda, r) = length_reward(100, false, &stats, 0.2).unwrap();
        assert_eq!(r, 0.0);
        assert!((lambda - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_length_is_an_error() {
        let stats = group_length_stats(&[100, 1100]).unwrap();
        assert!(length_reward(99, true, &stats, 0.2).is_err());
        assert!(length_reward(1101, true, &stats, 0.2).is_err());
    }

    #[test]
    fn effective_alpha_schedule_endpoints() {
        let s = PenaltySchedule::default();
        assert!((effective_alpha(&s, 0, 2048) - 0.2).abs() < 1e-15);
        assert!((effective_alpha(&s, 2000, 2048) - 0.05).abs() < 1e-15);
        assert!((effective_alpha(&s, 5000, 2048) - 0.05).abs() < 1e-15);
        assert!((effective_alpha(&s, 1000, 2048) - 0.1).abs() < 1e-15);
        // Length factor halves alpha for short responses.
        assert!((effective_alpha(&s, 0, 100) - 0.1).abs() < 1e-15);
        assert!((effective_alpha(&s, 0, 512) - 0.1).abs() < 1e-15);
        assert!((effective_alpha(&s, 0, 768) - 0.15).abs() < 1e-15);
    }

    fn correct_sample(len: u64) -> SampleScore {
        SampleScore {
            answer_reward: 1.0,
            format_coef: 1.0,
            repetition_coef: 1.0,
            token_length: len,
        }
    }

    #[test]
    fn score_group_two_sample_totals() {
        let schedule = PenaltySchedule::default();
        let samples = vec![correct_sample(1200), correct_sample(1700)];
        let breakdowns = score_group(&samples, Some((&schedule, 0))).unwrap();
        assert!((breakdowns[0].total - 1.1).abs() < 1e-12);
        assert!((breakdowns[1].total - 0.9).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_share_identical_breakdowns() {
        let schedule = PenaltySchedule::default();
        let samples = vec![correct_sample(2048); 5];
        let breakdowns = score_group(&samples, Some((&schedule, 0))).unwrap();
        for b in &breakdowns {
            assert!((b.lambda - 0.5).abs() < 1e-15);
            assert_eq!(b.total, breakdowns[0].total);
        }
    }

    #[test]
    fn penalty_disabled_zeroes_length_rewards() {
        let samples = vec![correct_sample(100), correct_sample(9000)];
        let breakdowns = score_group(&samples, None).unwrap();
        assert!(breakdowns.iter().all(|b| b.length_reward == 0.0));
        assert!(breakdowns.iter().all(|b| b.total == b.rule_reward));
        // Lambda is still reported.
        assert!((breakdowns[0].lambda - 0.5).abs() < 1e-15);
    }

    #[test]
    fn score_group_is_permutation_equivariant() {
        let schedule = PenaltySchedule::default();
        let samples = vec![
            correct_sample(500),
            SampleScore {
                answer_reward: 0.0,
                format_coef: 1.0,
                repetition_coef: 0.1,
                token_length: 900,
            },
            correct_sample(2600),
        ];
        let forward = score_group(&samples, Some((&schedule, 7))).unwrap();
        let reversed: Vec<SampleScore> = samples.iter().rev().cloned().collect();
        let backward = score_group(&reversed, Some((&schedule, 7))).unwrap();
        for (f, b) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(f, b);
        }
    }

    proptest! {
        /// lambda(L_min) = 0.5 always; lambda(L_max) = -0.5 iff the raw
        /// spread reaches the floor; everything in [-0.5, 0.5].
        #[test]
        fn lambda_range_and_endpoints(
            mut lengths in proptest::collection::vec(1u64..20_000, 2..12),
            alpha in 0.01f64..1.0,
        ) {
            let stats = group_length_stats(&lengths).unwrap();
            lengths.sort_unstable();
            for &l in &lengths {
                let (lambda, r) = length_reward(l, true, &stats, alpha).unwrap();
                prop_assert!((-0.5..=0.5).contains(&lambda));
                prop_assert!(r.abs() <= 0.5 * alpha + 1e-15);
            }
            let (at_min, _) = length_reward(stats.l_min, true, &stats, alpha).unwrap();
            prop_assert!((at_min - 0.5).abs() < 1e-15);
            let (at_max, _) = length_reward(stats.l_max, true, &stats, alpha).unwrap();
            if stats.l_max - stats.l_min >= MIN_LENGTH_SPREAD {
                prop_assert!((at_max + 0.5).abs() < 1e-15);
            } else {
                prop_assert!(at_max > -0.5 - 1e-15);
            }
        }

        /// The composed rule reward never leaves the lattice.
        #[test]
        fn rule_reward_stays_on_lattice(
            answer in proptest::bool::ANY,
            format_pen in proptest::bool::ANY,
            rep_pen in proptest::bool::ANY,
        ) {
            let value = compose_rule_reward(
                if answer { 1.0 } else { 0.0 },
                if format_pen { 0.1 } else { 1.0 },
                if rep_pen { 0.1 } else { 1.0 },
            ).unwrap();
            prop_assert!([0.0, 0.01, 0.1, 1.0].contains(&value));
        }

        /// alpha is monotone non-increasing in step, non-decreasing in
        /// length, and bounded in [alpha_min/2, alpha0].
        #[test]
        fn alpha_monotonicity_and_bounds(
            step_a in 0u64..4000,
            step_b in 0u64..4000,
            len_a in 1u64..40_000,
            len_b in 1u64..40_000,
        ) {
            let s = PenaltySchedule::default();
            let (lo_step, hi_step) = (step_a.min(step_b), step_a.max(step_b));
            let (lo_len, hi_len) = (len_a.min(len_b), len_a.max(len_b));
            prop_assert!(effective_alpha(&s, hi_step, lo_len) <= effective_alpha(&s, lo_step, lo_len));
            prop_assert!(effective_alpha(&s, lo_step, lo_len) <= effective_alpha(&s, lo_step, hi_len));
            let a = effective_alpha(&s, step_a, len_a);
            prop_assert!(a >= 0.5 * s.alpha_min - 1e-15 && a <= s.alpha0 + 1e-15);
        }
    }
}
