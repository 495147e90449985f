use crate::error::Result;
use crate::mathcore::{adam_step, AdamConfig, Rng};
use crate::nets::ActorCritic;

use super::{loss_and_grads, normalize_advantages, LossMetrics, PpoConfig, RolloutBuffer};

/// Minibatch metrics averaged over one full update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateMetrics {
    pub loss: f64,
    pub loss_clip: f64,
    pub loss_value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub saturated: usize,
    pub minibatches: usize,
}

impl UpdateMetrics {
    fn add(&mut self, m: &LossMetrics) {
        self.loss += m.loss;
        self.loss_clip += m.loss_clip;
        self.loss_value += m.loss_value;
        self.entropy += m.entropy;
        self.approx_kl += m.approx_kl;
        self.clip_fraction += m.clip_fraction;
        self.saturated += m.saturated;
        self.minibatches += 1;
    }

    fn finish(mut self) -> Self {
        if self.minibatches > 0 {
            let n = self.minibatches as f64;
            self.loss /= n;
            self.loss_clip /= n;
            self.loss_value /= n;
            self.entropy /= n;
            self.approx_kl /= n;
            self.clip_fraction /= n;
        }
        self
    }
}

/// `epochs` passes of shuffled minibatch descent over a finished buffer.
pub fn update(
    buffer: &RolloutBuffer,
    model: &mut ActorCritic,
    adam: &AdamConfig,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateMetrics> {
    let mut metrics = UpdateMetrics::default();
    let mut order: Vec<usize> = (0..buffer.capacity()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mut batch = buffer.minibatch(chunk)?;
            if cfg.normalize_advantages {
                normalize_advantages(&mut batch.advantages);
            }
            let out = loss_and_grads(model, &batch, cfg)?;
            model.backward(&out.cache, &out.grad_logits, &out.grad_values)?;
            if cfg.max_grad_norm > 0.0 {
                let norm = model.params().grad_norm();
                if norm > cfg.max_grad_norm {
                    model.params_mut().scale_grads(cfg.max_grad_norm / norm);
                }
            }
            adam_step(model.params_mut(), adam)?;
            metrics.add(&out.metrics);
        }
    }
    Ok(metrics.finish())
}
