//! Visual encoder, actor and critic networks.
//!
//! All three networks live in one [`ParamStore`] so a single Adam step
//! updates them together. Batched forward passes return a cache that the
//! matching backward pass consumes.

mod checkpoint;

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{
    conv2d_backward, conv2d_forward, conv_out_extent, dense_backward, dense_forward, ParamStore,
    Rng, Tensor,
};

pub use checkpoint::{content_hash, Checkpoint, ParamRecord, FORMAT_VERSION};

const CONV1_FILTERS: usize = 8;
const CONV2_FILTERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Planning-token length k.
    pub token_dim: usize,
    /// Visual embedding length n.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub obs_channels: usize,
    pub obs_size: usize,
    pub num_actions: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            token_dim: 16,
            embed_dim: 64,
            hidden_dim: 64,
            obs_channels: 3,
            obs_size: 24,
            num_actions: 5,
        }
    }
}

impl NetConfig {
    pub fn state_dim(&self) -> usize {
        self.token_dim + self.embed_dim
    }

    pub fn obs_len(&self) -> usize {
        self.obs_channels * self.obs_size * self.obs_size
    }

    fn flat_dim(&self) -> usize {
        let s = conv_out_extent(conv_out_extent(self.obs_size));
        CONV2_FILTERS * s * s
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.num_actions < 2 {
            return Err(Error::Config(format!("degenerate network sizes {self:?}")));
        }
        if self.obs_size < 6 || self.obs_channels == 0 {
            return Err(Error::Config(format!("observation too small {self:?}")));
        }
        Ok(())
    }
}

/// Per-step encoder output o_t.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEmbedding(pub Vec<f64>);

/// s_t = [m_t; o_t], tokens first.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState(pub Vec<f64>);

/// Builds the policy input from an episode's tokens and a step's embedding.
pub fn concat_state(
    tokens: &[f64],
    embedding: &VisualEmbedding,
    cfg: &NetConfig,
) -> Result<PolicyState> {
    if tokens.len() != cfg.token_dim || embedding.0.len() != cfg.embed_dim {
        return Err(Error::shape(
            "concat_state",
            format!(
                "tokens {} (want {}), embedding {} (want {})",
                tokens.len(),
                cfg.token_dim,
                embedding.0.len(),
                cfg.embed_dim
            ),
        ));
    }
    let mut s = Vec::with_capacity(cfg.state_dim());
    s.extend_from_slice(tokens);
    s.extend_from_slice(&embedding.0);
    Ok(PolicyState(s))
}

/// Row-wise `logits - logsumexp(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

#[derive(Debug, Clone, Copy)]
struct Slots {
    conv1_k: usize,
    conv1_b: usize,
    conv2_k: usize,
    conv2_b: usize,
    fc_w: usize,
    fc_b: usize,
    actor_h_w: usize,
    actor_h_b: usize,
    actor_out_w: usize,
    actor_out_b: usize,
    critic_h_w: usize,
    critic_h_b: usize,
    critic_out_w: usize,
    critic_out_b: usize,
}

/// Intermediate activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    obs: Tensor,
    relu1: Tensor,
    relu2_flat: Tensor,
    embedding: Tensor,
    state: Tensor,
    actor_hidden: Tensor,
    critic_hidden: Tensor,
}

impl ForwardCache {
    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn state(&self) -> &Tensor {
        &self.state
    }

    /// Hash of which ReLU units are active; changes iff a unit crosses zero.
    pub fn activation_signature(&self) -> u64 {
        let mut h = std::hash::DefaultHasher::new();
        for t in [&self.relu1, &self.relu2_flat] {
            for chunk in t.data().chunks(64) {
                let bits = chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, v)| acc | (u64::from(*v > 0.0) << i));
                bits.hash(&mut h);
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// B×|A|
    pub logits: Tensor,
    /// B×|A|, normalized per row.
    pub log_probs: Tensor,
    pub values: Vec<f64>,
    pub cache: ForwardCache,
}

/// Encoder + actor + critic with shared parameter storage.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    cfg: NetConfig,
    params: ParamStore,
    slots: Slots,
}

fn init_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

impl ActorCritic {
    /// Scaled-uniform initialization: gain 1 everywhere except the actor
    /// output (0.01) so the initial policy is close to uniform. Biases start at 0.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::substream(seed, "init", 0);
        Self::build(cfg, |name, shape, fan_in| {
            if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else {
                let gain = if name == "actor.out.weights" {
                    0.01
                } else {
                    1.0
                };
                init_uniform(&mut rng, shape, fan_in, gain)
            }
        })
    }

    /// Every parameter zero: uniform policy, zero value, zero embedding.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, |_, shape, _| Tensor::zeros(shape))
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
        Self::spec(cfg)
            .into_iter()
            .map(|(n, s, _)| (n.to_string(), s))
            .collect()
    }

    fn spec(cfg: &NetConfig) -> Vec<(&'static str, Vec<usize>, usize)> {
        let c = cfg.obs_channels;
        let (k, h, a) = (cfg.state_dim(), cfg.hidden_dim, cfg.num_actions);
        let flat = cfg.flat_dim();
        vec![
            ("encoder.conv1.kernels", vec![CONV1_FILTERS, c, 3, 3], c * 9),
            ("encoder.conv1.bias", vec![CONV1_FILTERS], 1),
            (
                "encoder.conv2.kernels",
                vec![CONV2_FILTERS, CONV1_FILTERS, 3, 3],
                CONV1_FILTERS * 9,
            ),
            ("encoder.conv2.bias", vec![CONV2_FILTERS], 1),
            ("encoder.fc.weights", vec![flat, cfg.embed_dim], flat),
            ("encoder.fc.bias", vec![cfg.embed_dim], 1),
            ("actor.hidden.weights", vec![k, h], k),
            ("actor.hidden.bias", vec![h], 1),
            ("actor.out.weights", vec![h, a], h),
            ("actor.out.bias", vec![a], 1),
            ("critic.hidden.weights", vec![k, h], k),
            ("critic.hidden.bias", vec![h], 1),
            ("critic.out.weights", vec![h, 1], h),
            ("critic.out.bias", vec![1], 1),
        ]
    }

    fn build(
        cfg: &NetConfig,
        mut make: impl FnMut(&str, &[usize], usize) -> Tensor,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut slots = Vec::new();
        for (name, shape, fan_in) in Self::spec(cfg) {
            slots.push(params.insert(name, make(name, &shape, fan_in)));
        }
        let slots = Slots {
            conv1_k: slots[0],
            conv1_b: slots[1],
            conv2_k: slots[2],
            conv2_b: slots[3],
            fc_w: slots[4],
            fc_b: slots[5],
            actor_h_w: slots[6],
            actor_h_b: slots[7],
            actor_out_w: slots[8],
            actor_out_b: slots[9],
            critic_h_w: slots[10],
            critic_h_b: slots[11],
            critic_out_w: slots[12],
            critic_out_b: slots[13],
        };
        Ok(ActorCritic {
            cfg: cfg.clone(),
            params,
            slots,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn p(&self, slot: usize) -> &Tensor {
        self.params.value(slot)
    }

    fn check_obs(&self, obs: &Tensor) -> Result<usize> {
        let c = &self.cfg;
        match *obs.shape() {
            [b, ch, h, w] if ch == c.obs_channels && h == c.obs_size && w == c.obs_size => Ok(b),
            ref s => Err(Error::shape(
                "encode",
                format!(
                    "observation batch {s:?}, expected B×{}×{}×{}",
                    c.obs_channels, c.obs_size, c.obs_size
                ),
            )),
        }
    }

    fn encode_batch(&self, obs: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let batch = self.check_obs(obs)?;
        let s = &self.slots;
        let mut relu1 = conv2d_forward(obs, self.p(s.conv1_k), self.p(s.conv1_b))?;
        relu1.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut relu2 = conv2d_forward(&relu1, self.p(s.conv2_k), self.p(s.conv2_b))?;
        relu2.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let flat = relu2.reshape(&[batch, self.cfg.flat_dim()])?;
        let mut emb = dense_forward(&flat, self.p(s.fc_w), self.p(s.fc_b))?;
        emb.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        Ok((relu1, flat, emb))
    }

    /// Batched pass over observations `B×C×H×W` and tokens `B×k`.
    pub fn forward(&self, obs: &Tensor, tokens: &Tensor) -> Result<BatchOutput> {
        let batch = self.check_obs(obs)?;
        let (k, n) = (self.cfg.token_dim, self.cfg.embed_dim);
        if tokens.len() != batch * k {
            return Err(Error::shape(
                "forward",
                format!("tokens {:?}, expected [{batch}, {k}]", tokens.shape()),
            ));
        }
        let (relu1, relu2_flat, embedding) = self.encode_batch(obs)?;

        let mut state = Vec::with_capacity(batch * (k + n));
        for b in 0..batch {
            state.extend_from_slice(&tokens.data()[b * k..(b + 1) * k]);
            state.extend_from_slice(&embedding.data()[b * n..(b + 1) * n]);
        }
        let state = Tensor::from_vec(&[batch, k + n], state)?;

        let s = &self.slots;
        let mut actor_hidden = dense_forward(&state, self.p(s.actor_h_w), self.p(s.actor_h_b))?;
        actor_hidden
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.tanh());
        let logits = dense_forward(&actor_hidden, self.p(s.actor_out_w), self.p(s.actor_out_b))?;
        if !logits.is_finite() {
            let bad = logits
                .data()
                .iter()
                .position(|v| !v.is_finite())
                .unwrap_or(0);
            return Err(Error::NonFinite {
                context: format!(
                    "actor logits (sample {}, action {}); state finite: {}",
                    bad / self.cfg.num_actions,
                    bad % self.cfg.num_actions,
                    state.is_finite()
                ),
            });
        }
        let a = self.cfg.num_actions;
        let lp: Vec<f64> = logits
            .data()
            .chunks_exact(a)
            .flat_map(log_softmax)
            .collect();
        let log_probs = Tensor::from_vec(&[batch, a], lp)?;

        let mut critic_hidden = dense_forward(&state, self.p(s.critic_h_w), self.p(s.critic_h_b))?;
        critic_hidden
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.tanh());
        let values = dense_forward(
            &critic_hidden,
            self.p(s.critic_out_w),
            self.p(s.critic_out_b),
        )?;
        values.ensure_finite("critic value")?;

        Ok(BatchOutput {
            logits,
            log_probs,
            values: values.into_data(),
            cache: ForwardCache {
                obs: obs.clone(),
                relu1,
                relu2_flat,
                embedding,
                state,
                actor_hidden,
                critic_hidden,
            },
        })
    }

    /// Accumulates parameter gradients given dL/dlogits (B×|A|) and dL/dvalue (B).
    pub fn backward(
        &mut self,
        cache: &ForwardCache,
        grad_logits: &Tensor,
        grad_values: &[f64],
    ) -> Result<()> {
        let batch = cache.state.shape()[0];
        let (k, n) = (self.cfg.token_dim, self.cfg.embed_dim);
        if grad_logits.shape() != [batch, self.cfg.num_actions] || grad_values.len() != batch {
            return Err(Error::shape(
                "backward",
                "upstream gradients do not match the cached batch",
            ));
        }
        let s = self.slots;

        // actor head
        let g = dense_backward(grad_logits, &cache.actor_hidden, self.p(s.actor_out_w))?;
        self.params.accumulate(s.actor_out_w, &g.weights);
        self.params.accumulate(s.actor_out_b, &g.bias);
        let mut g_hidden = g.input;
        tanh_backward(&mut g_hidden, &cache.actor_hidden);
        let g = dense_backward(&g_hidden, &cache.state, self.p(s.actor_h_w))?;
        self.params.accumulate(s.actor_h_w, &g.weights);
        self.params.accumulate(s.actor_h_b, &g.bias);
        let mut g_state = g.input;

        // critic head
        let gv = Tensor::from_vec(&[batch, 1], grad_values.to_vec())?;
        let g = dense_backward(&gv, &cache.critic_hidden, self.p(s.critic_out_w))?;
        self.params.accumulate(s.critic_out_w, &g.weights);
        self.params.accumulate(s.critic_out_b, &g.bias);
        let mut g_hidden = g.input;
        tanh_backward(&mut g_hidden, &cache.critic_hidden);
        let g = dense_backward(&g_hidden, &cache.state, self.p(s.critic_h_w))?;
        self.params.accumulate(s.critic_h_w, &g.weights);
        self.params.accumulate(s.critic_h_b, &g.bias);
        for (a, b) in g_state.data_mut().iter_mut().zip(g.input.data()) {
            *a += b;
        }

        // encoder; the token block carries no parameters
        let mut g_emb = Vec::with_capacity(batch * n);
        for row in g_state.data().chunks_exact(k + n) {
            g_emb.extend_from_slice(&row[k..]);
        }
        let mut g_emb = Tensor::from_vec(&[batch, n], g_emb)?;
        tanh_backward(&mut g_emb, &cache.embedding);
        let g = dense_backward(&g_emb, &cache.relu2_flat, self.p(s.fc_w))?;
        self.params.accumulate(s.fc_w, &g.weights);
        self.params.accumulate(s.fc_b, &g.bias);
        let mut g_relu2 = g.input;
        relu_backward(&mut g_relu2, &cache.relu2_flat);
        let side = conv_out_extent(conv_out_extent(self.cfg.obs_size));
        let g_relu2 = g_relu2.reshape(&[batch, CONV2_FILTERS, side, side])?;
        let g = conv2d_backward(&g_relu2, &cache.relu1, self.p(s.conv2_k), true)?;
        self.params.accumulate(s.conv2_k, &g.kernels);
        self.params.accumulate(s.conv2_b, &g.bias);
        let mut g_relu1 = g.input.expect("requested input gradient");
        relu_backward(&mut g_relu1, &cache.relu1);
        let g = conv2d_backward(&g_relu1, &cache.obs, self.p(s.conv1_k), false)?;
        self.params.accumulate(s.conv1_k, &g.kernels);
        self.params.accumulate(s.conv1_b, &g.bias);
        Ok(())
    }

    /// Single observation `C×H×W` to its embedding.
    pub fn encode(&self, observation: &Tensor) -> Result<VisualEmbedding> {
        let c = &self.cfg;
        if observation.shape() != [c.obs_channels, c.obs_size, c.obs_size] {
            return Err(Error::shape(
                "encode",
                format!(
                    "observation {:?}, expected [{}, {}, {}]",
                    observation.shape(),
                    c.obs_channels,
                    c.obs_size,
                    c.obs_size
                ),
            ));
        }
        let batched = observation
            .clone()
            .reshape(&[1, c.obs_channels, c.obs_size, c.obs_size])?;
        let (_, _, emb) = self.encode_batch(&batched)?;
        Ok(VisualEmbedding(emb.into_data()))
    }

    fn check_state(&self, state: &PolicyState) -> Result<Tensor> {
        if state.0.len() != self.cfg.state_dim() {
            return Err(Error::shape(
                "policy state",
                format!(
                    "length {}, expected {}",
                    state.0.len(),
                    self.cfg.state_dim()
                ),
            ));
        }
        Tensor::from_vec(&[1, state.0.len()], state.0.clone())
    }

    /// Returns (logits, log_probs) for one state.
    pub fn actor_forward(&self, state: &PolicyState) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.check_state(state)?;
        let s = &self.slots;
        let mut h = dense_forward(&x, self.p(s.actor_h_w), self.p(s.actor_h_b))?;
        h.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let logits = dense_forward(&h, self.p(s.actor_out_w), self.p(s.actor_out_b))?;
        logits.ensure_finite("actor logits")?;
        let lp = log_softmax(logits.data());
        Ok((logits.into_data(), lp))
    }

    pub fn critic_forward(&self, state: &PolicyState) -> Result<f64> {
        let x = self.check_state(state)?;
        let s = &self.slots;
        let mut h = dense_forward(&x, self.p(s.critic_h_w), self.p(s.critic_h_b))?;
        h.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let v = dense_forward(&h, self.p(s.critic_out_w), self.p(s.critic_out_b))?;
        v.ensure_finite("critic value")?;
        Ok(v.data()[0])
    }
}

/// g ← g ⊙ (1 − y²) where y = tanh(z).
fn tanh_backward(grad: &mut Tensor, output: &Tensor) {
    for (g, y) in grad.data_mut().iter_mut().zip(output.data()) {
        *g *= 1.0 - y * y;
    }
}

fn relu_backward(grad: &mut Tensor, output: &Tensor) {
    for (g, y) in grad.data_mut().iter_mut().zip(output.data()) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
}
