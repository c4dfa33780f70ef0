//! PPO with one-step TD advantages.
//!
//! Training alternates two phases. Workers play full episodes with a frozen
//! copy of the parameters and record every decision; then the trainer runs
//! `ppo_iters` epochs of minibatch Adam steps over the clipped surrogate,
//! a value regression term and an entropy bonus.

mod adam;
mod loss;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};

use crate::{LearnError, Result};

pub use adam::Adam;
pub use loss::{clipped_objective, ppo_gradients, ppo_loss, LossStats, LossTerms};
pub use rollout::{
    collect_rollouts, episode_seed, run_episode, EnvFactory, Episode, RandomFieldEnvs, RolloutBuffer, StepRecord,
};
pub use train::{load_checkpoint, train, Checkpoint, LogRow, TrainOptions, TrainOutcome, LOG_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub lr: f64,
    pub gamma: f64,
    /// Samples per gradient step.
    pub batch_size: usize,
    /// Epochs over each collected batch of episodes.
    pub ppo_iters: usize,
    /// Episodes played in parallel per collection round.
    pub workers: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            lr: 1e-5,
            gamma: 0.99,
            batch_size: 128,
            ppo_iters: 8,
            workers: 5,
            value_coef: 0.5,
            entropy_coef: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LearnError::Config(format!("{msg}: {self:?}")));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.workers == 0 || self.batch_size == 0 || self.ppo_iters == 0 {
            return bad("workers, batch_size and ppo_iters must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("Adam needs betas in [0, 1) and eps > 0");
        }
        Ok(())
    }
}

/// `Â_t = r_t + γ·V(s_{t+1})·(1 − done_t) − V(s_t)` for one episode. The
/// step after the last one is treated as terminal.
pub fn compute_advantage(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    assert!(rewards.len() == values.len() && values.len() == dones.len(), "misaligned episode arrays");
    (0..rewards.len())
        .map(|t| {
            let next = if dones[t] { 0.0 } else { values.get(t + 1).copied().unwrap_or(0.0) };
            rewards[t] + gamma * next - values[t]
        })
        .collect()
}

/// Discounted reward-to-go, restarting after every terminal step.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), dones.len(), "misaligned episode arrays");
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[cfg(test)]
mod tests;
