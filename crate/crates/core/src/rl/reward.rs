use serde::{Deserialize, Serialize};

use crate::nn::sigmoid;

use super::MdpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalOutcome {
    Correct,
    Incorrect,
    /// Not a terminal step.
    None,
}

/// `reward_alpha * (H_prev - H_next) + reward_beta * R_final`, with
/// `R_final` = +kappa, -kappa or 0.
pub fn shaped_reward(h_prev: f64, h_next: f64, outcome: TerminalOutcome, cfg: &MdpConfig) -> f64 {
    let r_final = match outcome {
        TerminalOutcome::Correct => terminal_reward(true, cfg.kappa),
        TerminalOutcome::Incorrect => terminal_reward(false, cfg.kappa),
        TerminalOutcome::None => 0.0,
    };
    cfg.reward_alpha * (h_prev - h_next) + cfg.reward_beta * r_final
}

/// End-of-episode reward: `+kappa` for a correct identification, `-kappa` otherwise.
pub fn terminal_reward(correct: bool, kappa: f64) -> f64 {
    if correct {
        kappa
    } else {
        -kappa
    }
}

/// Regression targets for the reward network, one per step. `entropies`
/// holds the belief entropy before the first step followed by the entropy
/// after each step. The terminal `±kappa` term enters only the last target.
pub fn supervision_targets(entropies: &[f64], correct: bool, cfg: &MdpConfig) -> Vec<f64> {
    let steps = entropies.len().saturating_sub(1);
    (0..steps)
        .map(|t| {
            let gain = cfg.reward_alpha * (entropies[t] - entropies[t + 1]);
            if t + 1 == steps {
                gain + cfg.reward_beta * terminal_reward(correct, cfg.kappa)
            } else {
                gain
            }
        })
        .collect()
}

/// Discounted tail sums `sum_k gamma^k r_{t+k}` before squashing.
pub fn discounted_tail_sums(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Sigmoid-squashed discounted returns, each in (0, 1). Saturated values
/// are pulled back inside the open interval.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Vec<f64> {
    discounted_tail_sums(rewards, gamma)
        .into_iter()
        .map(|g| sigmoid(g).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
        .collect()
}
