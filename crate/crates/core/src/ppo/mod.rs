//! Clipped-surrogate policy optimization: rollout storage, advantage
//! estimation, the combined loss and the minibatched update.

mod buffer;
mod gae;
mod loss;
mod update;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use buffer::{Minibatch, RolloutBuffer, Transition};
pub use gae::{compute_gae, gae_direct_sum};
pub use loss::{
    clipped_surrogate, entropy, loss_and_grads, normalize_advantages, total_loss, value_loss,
    LossMetrics, LossOutput, Surrogate, LOG_RATIO_LIMIT,
};
pub use update::{update, UpdateMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Clip range ε of the probability ratio.
    pub epsilon: f64,
    /// Value-loss weight c1.
    pub value_coef: f64,
    /// Entropy-bonus weight c2.
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Steps collected from each environment per update; the buffer holds
    /// `rollout_steps × num_envs` transitions.
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
    pub num_envs: usize,
    /// Global gradient-norm clip per minibatch; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            epsilon: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_steps: 2048,
            epochs: 4,
            minibatch_size: 256,
            normalize_advantages: true,
            num_envs: 8,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0)
            || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0)
        {
            return fail(format!(
                "gamma {} / lambda {} outside (0, 1]",
                self.gamma, self.gae_lambda
            ));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.max_grad_norm < 0.0 {
            return fail("coefficients must be non-negative".into());
        }
        if self.num_envs == 0 || self.minibatch_size == 0 || self.rollout_steps == 0 {
            return fail("rollout_steps, minibatch_size and num_envs must be positive".into());
        }
        if self.rollout_steps % self.minibatch_size != 0 {
            return fail(format!(
                "rollout_steps {} not divisible by minibatch_size {}",
                self.rollout_steps, self.minibatch_size
            ));
        }
        Ok(())
    }

    /// Transitions per update across all environments.
    pub fn batch_size(&self) -> usize {
        self.rollout_steps * self.num_envs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PpoConfig::default().validate().unwrap();
        assert_eq!(PpoConfig::default().batch_size(), 2048 * 8);
    }

    #[test]
    fn rejects_bad_values() {
        let base = PpoConfig::default();
        assert!(PpoConfig {
            epsilon: 1.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(PpoConfig {
            gamma: 0.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(PpoConfig {
            gae_lambda: 1.5,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(PpoConfig {
            minibatch_size: 300,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(PpoConfig {
            rollout_steps: 100,
            ..base
        }
        .validate()
        .is_err());
    }
}
