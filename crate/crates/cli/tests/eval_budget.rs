//! Budget-curve evaluation against the enumeration oracle.
//!
//! The rollout space is finite, so the expected curve of any frozen policy
//! is exactly `mean_tasks sum_b pi(b) p(b, d) [T_b <= budget]`; sampled
//! curves must match it closely, and the per-mode curves of the bundled
//! initial policy must show the thinking prior dominating at large budgets.

use minirl_cli::checkpoint::Checkpoint;
use minirl_cli::commands::{eval_budget, expected_accuracy_at_budget};
use minirl_cli::config::TrainConfig;
use minirl_cli::trainer::Trainer;
use minirl_core::taskgen::{generate_tasks_opt, TaskGenOptions};
use minirl_core::ThinkMode;

fn eval_tasks(config: &TrainConfig) -> Vec<minirl_core::TaskInstance> {
    generate_tasks_opt(
        config.seed.wrapping_add(config.eval.task_seed_offset),
        config.eval.tasks,
        &config.family_mix.mix(),
        TaskGenOptions {
            think_fraction: config.think_fraction,
        },
    )
    .unwrap()
}

#[test]
fn uniform_policy_curve_matches_enumeration_oracle() {
    let mut config = TrainConfig::default();
    // Uniform policy: no length prior.
    config.policy_init.thinking_length_bias = 0.0;
    config.policy_init.non_thinking_length_bias = 0.0;
    config.eval.tasks = 50;
    config.eval.rollouts_per_task = 200; // 10,000 rollouts per point
    let trainer = Trainer::new(config.clone()).unwrap();
    let checkpoint = trainer.checkpoint();

    let output = eval_budget(&checkpoint, &config).unwrap();
    let tasks = eval_tasks(&config);
    let env = config.env.model();
    for mode in ThinkMode::ALL {
        let (curve, _) = &output[mode.name()];
        for (&budget, &measured) in curve.budgets.iter().zip(&curve.accuracy) {
            let expected =
                expected_accuracy_at_budget(&tasks, &env, &checkpoint.state.params, mode, budget);
            assert!(
                (measured - expected).abs() < 0.02,
                "{} at budget {budget}: measured {measured:.4} vs expected {expected:.4}",
                mode.name()
            );
        }
    }
}

#[test]
fn thinking_prior_dominates_at_large_budgets() {
    // The bundled initial policy gives thinking mode a longer length prior;
    // under the saturating environment that is also a higher-accuracy one
    // once the budget stops truncating it.
    let config = TrainConfig::default();
    let trainer = Trainer::new(config.clone()).unwrap();
    let output = eval_budget(&trainer.checkpoint(), &config).unwrap();
    let (thinking, _) = &output["thinking"];
    let (non_thinking, _) = &output["non_thinking"];

    let large = |curve: &minirl_core::evalkit::BudgetCurve, floor: u64| -> Vec<f64> {
        curve
            .budgets
            .iter()
            .zip(&curve.accuracy)
            .filter(|&(&b, _)| b >= floor)
            .map(|(_, &a)| a)
            .collect()
    };
    let think_large = large(thinking, 16384);
    let non_think_large = large(non_thinking, 16384);
    assert!(!think_large.is_empty());
    for (t, n) in think_large.iter().zip(&non_think_large) {
        assert!(
            t > n,
            "thinking {t:.4} must dominate non-thinking {n:.4} at large budgets"
        );
    }
}

#[test]
fn trained_checkpoint_curves_are_monotone() {
    let mut config = TrainConfig::default();
    config.steps = 40;
    config.eval.tasks = 16;
    config.eval.rollouts_per_task = 50;
    let mut trainer = Trainer::new(config.clone()).unwrap();
    while !trainer.finished() {
        trainer.run_step().unwrap();
    }
    let output = eval_budget(&trainer.checkpoint(), &config).unwrap();
    for (_, (curve, metrics)) in &output {
        assert!(curve.accuracy.windows(2).all(|w| w[0] <= w[1]));
        assert!(metrics.overall_accuracy >= 0.0 && metrics.overall_accuracy <= 1.0);
        assert!(metrics.token_efficiency >= 0.0);
    }
}

#[test]
fn mismatched_checkpoint_and_env_are_rejected() {
    let config = TrainConfig::default();
    let trainer = Trainer::new(config.clone()).unwrap();
    let mut checkpoint: Checkpoint = trainer.checkpoint();
    let mut smaller = config.clone();
    smaller.env.bucket_tokens = vec![64, 256, 1024];
    checkpoint.config = smaller.clone();
    assert!(eval_budget(&checkpoint, &smaller).is_err());
}
