//! Token-budget evaluation and length-efficiency metrics.
//!
//! A budget curve reports cumulative accuracy as a function of token
//! budget: a response counts at budget `b` only if it is correct and fits
//! within `b` tokens (over-budget responses score as incorrect — truncation
//! semantics, not re-sampling). Run metrics track the long2short picture:
//! overall accuracy, the mean length of correct responses, and token
//! efficiency — accuracy per kilotoken of mean response length.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Sentinel budget meaning "no limit"; the curve value there equals
/// overall accuracy exactly.
pub const UNLIMITED_BUDGET: u64 = u64::MAX;

/// One evaluated rollout: correctness and response token length.
pub type EvalResult = (bool, u64);

/// Cumulative accuracy per token budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub budgets: Vec<u64>,
    pub accuracy: Vec<f64>,
}

impl BudgetCurve {
    /// CSV emission with a `budget,accuracy` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("budget,accuracy\n");
        for (budget, accuracy) in self.budgets.iter().zip(&self.accuracy) {
            out.push_str(&format!("{budget},{accuracy}\n"));
        }
        out
    }
}

/// Length and efficiency metrics for one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub step: u64,
    pub overall_accuracy: f64,
    /// Mean token length over correct responses only; 0 when none are.
    pub mean_length_correct: f64,
    /// Mean token length over all responses.
    pub mean_length: f64,
    /// `overall_accuracy / (mean_length / 1000)`; 0 when mean length is 0.
    pub token_efficiency: f64,
}

/// Cumulative accuracy at each budget. Budgets must be non-empty and
/// strictly increasing; results must be non-empty.
pub fn budget_curve(results: &[EvalResult], budgets: &[u64]) -> Result<BudgetCurve, EvalError> {
    if results.is_empty() {
        return Err(EvalError::InvalidArgument("no evaluation results".into()));
    }
    if budgets.is_empty() {
        return Err(EvalError::InvalidArgument("no budgets".into()));
    }
    if !budgets.windows(2).all(|w| w[0] < w[1]) {
        return Err(EvalError::InvalidArgument(
            "budgets must be strictly increasing".into(),
        ));
    }
    let n = results.len() as f64;
    let accuracy = budgets
        .iter()
        .map(|&budget| {
            results
                .iter()
                .filter(|&&(correct, length)| correct && length <= budget)
                .count() as f64
                / n
        })
        .collect();
    Ok(BudgetCurve {
        budgets: budgets.to_vec(),
        accuracy,
    })
}

/// Aggregate metrics over one evaluation pass.
pub fn run_metrics(results: &[EvalResult], step: u64) -> Result<RunMetrics, EvalError> {
    if results.is_empty() {
        return Err(EvalError::InvalidArgument("no evaluation results".into()));
    }
    let n = results.len() as f64;
    let correct: Vec<u64> = results
        .iter()
        .filter(|&&(c, _)| c)
        .map(|&(_, l)| l)
        .collect();
    let overall_accuracy = correct.len() as f64 / n;
    let mean_length = results.iter().map(|&(_, l)| l as f64).sum::<f64>() / n;
    let mean_length_correct = if correct.is_empty() {
        0.0
    } else {
        correct.iter().map(|&l| l as f64).sum::<f64>() / correct.len() as f64
    };
    let token_efficiency = if mean_length > 0.0 {
        overall_accuracy / (mean_length / 1000.0)
    } else {
        0.0
    };
    Ok(RunMetrics {
        step,
        overall_accuracy,
        mean_length_correct,
        mean_length,
        token_efficiency,
    })
}
