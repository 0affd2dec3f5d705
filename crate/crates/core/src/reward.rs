//! Rollout rewards and group-relative advantages for policy training.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    #[default]
    LogLinear,
    Stepwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// MAPE fraction mapped to reward 0.
    pub s_max: f64,
    /// MAPE fraction mapped to reward 1.
    pub s_goal: f64,
    pub variant: RewardVariant,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            s_max: 1.0,
            s_goal: 0.001,
            variant: RewardVariant::LogLinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("reward config needs 0 < s_goal < s_max, got s_goal={s_goal}, s_max={s_max}")]
pub struct RewardConfigError {
    pub s_goal: f64,
    pub s_max: f64,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        if 0.0 < self.s_goal && self.s_goal < self.s_max && self.s_max.is_finite() {
            Ok(())
        } else {
            Err(RewardConfigError {
                s_goal: self.s_goal,
                s_max: self.s_max,
            })
        }
    }

    pub fn reward(&self, s: f64) -> f64 {
        match self.variant {
            RewardVariant::LogLinear => log_linear_reward(s, self),
            RewardVariant::Stepwise => stepwise_reward(s),
        }
    }
}

/// Linear in log10(MAPE) between `s_max` (0) and `s_goal` (1), clipped.
pub fn log_linear_reward(s: f64, config: &RewardConfig) -> f64 {
    if s.is_nan() {
        return 0.0;
    }
    if s <= 0.0 {
        return 1.0;
    }
    let r = (config.s_max.log10() - s.log10()) / (config.s_max.log10() - config.s_goal.log10());
    r.clamp(0.0, 1.0)
}

pub fn stepwise_reward(s: f64) -> f64 {
    if s < 0.001 {
        1.0
    } else if s < 0.01 {
        0.5
    } else if s < 0.1 {
        0.25
    } else if s < 1.0 {
        0.1
    } else {
        0.0
    }
}

/// Reward of the best (lowest-MAPE) equation explored in a rollout.
pub fn rollout_reward(scores: &[Option<f64>], config: &RewardConfig) -> f64 {
    scores
        .iter()
        .flatten()
        .copied()
        .filter(|s| !s.is_nan())
        .min_by(f64::total_cmp)
        .map_or(0.0, |s| config.reward(s))
}

/// `(r - mean) / (std + 1e-6)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    rewards.iter().map(|r| (r - mean) / (std + 1e-6)).collect()
}
