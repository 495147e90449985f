use crate::error::{Error, Result};
use crate::mathcore::Tensor;

use super::compute_gae;

/// One stored step as seen by the collector.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub observation: &'a [f64],
    pub tokens: &'a [f64],
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// Fixed-capacity on-policy storage, one contiguous slice per environment.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    num_envs: usize,
    steps_per_env: usize,
    obs_shape: Vec<usize>,
    obs_len: usize,
    token_dim: usize,
    filled: Vec<usize>,
    observations: Vec<f64>,
    tokens: Vec<f64>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

/// Gathered training samples.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub observations: Tensor,
    pub tokens: Tensor,
    pub actions: Vec<usize>,
    pub log_probs_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl RolloutBuffer {
    pub fn new(
        num_envs: usize,
        steps_per_env: usize,
        obs_shape: &[usize],
        token_dim: usize,
    ) -> Self {
        let cap = num_envs * steps_per_env;
        let obs_len = obs_shape.iter().product();
        RolloutBuffer {
            num_envs,
            steps_per_env,
            obs_shape: obs_shape.to_vec(),
            obs_len,
            token_dim,
            filled: vec![0; num_envs],
            observations: vec![0.0; cap * obs_len],
            tokens: vec![0.0; cap * token_dim],
            actions: vec![0; cap],
            log_probs: vec![0.0; cap],
            values: vec![0.0; cap],
            rewards: vec![0.0; cap],
            dones: vec![false; cap],
            advantages: vec![0.0; cap],
            returns: vec![0.0; cap],
        }
    }

    pub fn capacity(&self) -> usize {
        self.num_envs * self.steps_per_env
    }

    pub fn is_full(&self) -> bool {
        self.filled.iter().all(|&f| f == self.steps_per_env)
    }

    pub fn clear(&mut self) {
        self.filled.fill(0);
    }

    pub fn push(&mut self, env: usize, tr: Transition<'_>) -> Result<()> {
        if env >= self.num_envs || self.filled[env] == self.steps_per_env {
            return Err(Error::shape(
                "rollout push",
                format!("env {env} slice full or out of range"),
            ));
        }
        if tr.observation.len() != self.obs_len || tr.tokens.len() != self.token_dim {
            return Err(Error::shape(
                "rollout push",
                format!(
                    "observation {} / tokens {}",
                    tr.observation.len(),
                    tr.tokens.len()
                ),
            ));
        }
        let i = env * self.steps_per_env + self.filled[env];
        self.observations[i * self.obs_len..(i + 1) * self.obs_len].copy_from_slice(tr.observation);
        self.tokens[i * self.token_dim..(i + 1) * self.token_dim].copy_from_slice(tr.tokens);
        self.actions[i] = tr.action;
        self.log_probs[i] = tr.log_prob;
        self.values[i] = tr.value;
        self.rewards[i] = tr.reward;
        self.dones[i] = tr.done;
        self.filled[env] += 1;
        Ok(())
    }

    /// Runs GAE over every environment slice. `bootstrap[e]` is V of the state
    /// following env `e`'s last stored step.
    pub fn finish(&mut self, bootstrap: &[f64], gamma: f64, lambda: f64) -> Result<()> {
        if !self.is_full() || bootstrap.len() != self.num_envs {
            return Err(Error::shape(
                "rollout finish",
                "buffer not full or bootstrap count mismatch",
            ));
        }
        let t = self.steps_per_env;
        for e in 0..self.num_envs {
            let r = e * t..(e + 1) * t;
            let (adv, ret) = compute_gae(
                &self.rewards[r.clone()],
                &self.values[r.clone()],
                &self.dones[r.clone()],
                bootstrap[e],
                gamma,
                lambda,
            )?;
            self.advantages[r.clone()].copy_from_slice(&adv);
            self.returns[r].copy_from_slice(&ret);
        }
        Ok(())
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    pub fn tokens_at(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.token_dim..(i + 1) * self.token_dim]
    }

    pub fn minibatch(&self, indices: &[usize]) -> Result<Minibatch> {
        let b = indices.len();
        let mut obs = Vec::with_capacity(b * self.obs_len);
        let mut tokens = Vec::with_capacity(b * self.token_dim);
        for &i in indices {
            obs.extend_from_slice(&self.observations[i * self.obs_len..(i + 1) * self.obs_len]);
            tokens.extend_from_slice(self.tokens_at(i));
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&self.obs_shape);
        Ok(Minibatch {
            observations: Tensor::from_vec(&shape, obs)?,
            tokens: Tensor::from_vec(&[b, self.token_dim], tokens)?,
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            log_probs_old: indices.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| self.advantages[i]).collect(),
            returns: indices.iter().map(|&i| self.returns[i]).collect(),
        })
    }
}
