//! minirl-core: a desk-scale engine for verifiable-reward policy optimization.
//!
//! The crate trains small softmax policies over response-length buckets with
//! group-relative advantages, a KL anchor to a frozen reference policy, and a
//! group-relative length penalty that pushes correct responses toward the
//! short end of each sampled group. Rewards are rule-based and exactly
//! verifiable: boxed-answer matching over exact rationals, test-case execution
//! in a tiny expression language, format constraints, and n-gram repetition
//! detection.
//!
//! Module map:
//!
//! - [`rng`] — named, hierarchically derived deterministic streams
//! - [`taskgen`] — synthetic task generation and the outcome environment
//! - [`verifier`] — response parsing and the three rule-reward components
//! - [`reward`] — reward composition, length penalty, provider boundary
//! - [`grpo`] — group-relative advantages, surrogate loss, optimizer
//! - [`thinkmode`] — thinking-mode prompt assembly and loss masking
//! - [`evalkit`] — token-budget accuracy curves and run metrics

pub mod evalkit;
pub mod grpo;
pub mod reward;
pub mod rng;
pub mod taskgen;
pub mod thinkmode;
pub mod verifier;

pub use grpo::{OptimizerState, PolicyParams, ResponseSample, RolloutGroup};
pub use reward::{GroupLengthStats, PenaltySchedule, RewardBreakdown};
pub use taskgen::{EnvModel, GroundTruth, TaskFamily, TaskInstance};
pub use thinkmode::ThinkMode;
pub use verifier::{ParsedResponse, RuleFlags, VerifierConfig};
