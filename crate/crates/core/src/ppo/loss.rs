use crate::error::{Error, Result};
use crate::mathcore::Tensor;
use crate::nets::{ActorCritic, ForwardCache};

use super::{Minibatch, PpoConfig};

/// Log-ratios are clamped to this magnitude before exponentiation.
pub const LOG_RATIO_LIMIT: f64 = 20.0;

/// Per-sample clipped objective and its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    pub objective: f64,
    pub ratio: f64,
    /// d objective / d log π_new(a|s).
    pub grad_log_prob: f64,
    /// Ratio fell outside [1-ε, 1+ε].
    pub clipped: bool,
    /// Log-ratio hit the ±20 clamp.
    pub saturated: bool,
    /// The unclipped term attained the minimum.
    pub unclipped_min: bool,
}

/// `min(r·Â, clip(r, 1-ε, 1+ε)·Â)` with `r = exp(new - old)`.
pub fn clipped_surrogate(
    log_prob_new: f64,
    log_prob_old: f64,
    advantage: f64,
    epsilon: f64,
) -> Surrogate {
    let raw = log_prob_new - log_prob_old;
    let log_ratio = raw.clamp(-LOG_RATIO_LIMIT, LOG_RATIO_LIMIT);
    let saturated = log_ratio != raw;
    let ratio = log_ratio.exp();
    let unclipped = ratio * advantage;
    let clipped_obj = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    let unclipped_min = unclipped <= clipped_obj;
    let (objective, grad_log_prob) = if unclipped_min {
        (unclipped, if saturated { 0.0 } else { unclipped })
    } else {
        (clipped_obj, 0.0)
    };
    Surrogate {
        objective,
        ratio,
        grad_log_prob,
        clipped: (ratio - 1.0).abs() > epsilon,
        saturated,
        unclipped_min,
    }
}

/// `0.5 · mean((V - R)²)`.
pub fn value_loss(values: &[f64], returns: &[f64]) -> Result<f64> {
    if values.len() != returns.len() || values.is_empty() {
        return Err(Error::shape(
            "value_loss",
            format!("{} values vs {} returns", values.len(), returns.len()),
        ));
    }
    let sum: f64 = values
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r).powi(2))
        .sum();
    Ok(0.5 * sum / values.len() as f64)
}

fn row_entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .map(|&l| {
            let p = l.exp();
            if p > 0.0 {
                p * l
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Mean entropy over rows of a `B×|A|` log-probability table.
pub fn entropy(log_probs: &Tensor) -> f64 {
    let a = *log_probs.shape().last().unwrap_or(&1);
    let rows = log_probs.data().chunks_exact(a);
    let n = rows.len().max(1);
    rows.map(row_entropy).sum::<f64>() / n as f64
}

/// In-place `(x - mean) / std` (population std). Left centered only when the
/// spread is degenerate.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossMetrics {
    pub loss: f64,
    /// Negated mean clipped objective.
    pub loss_clip: f64,
    pub loss_value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Samples whose log-ratio hit the clamp.
    pub saturated: usize,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub metrics: LossMetrics,
    pub grad_logits: Tensor,
    pub grad_values: Vec<f64>,
    pub cache: ForwardCache,
    /// Identifies the piecewise-smooth region of the loss: ReLU pattern plus
    /// each sample's clip and clamp branch.
    pub branch: u64,
}

/// Evaluates `-(mean clip - c1·L_VF + c2·S)` and its gradient with respect to
/// the actor logits and critic outputs. Advantages are used as given.
pub fn loss_and_grads(
    model: &ActorCritic,
    batch: &Minibatch,
    cfg: &PpoConfig,
) -> Result<LossOutput> {
    let out = model.forward(&batch.observations, &batch.tokens)?;
    let b = batch.len();
    let a = model.config().num_actions;
    let inv_b = 1.0 / b as f64;
    let lp = out.log_probs.data();

    let mut obj_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut saturated = 0usize;
    let mut ent_sum = 0.0;
    let mut grad_logits = vec![0.0; b * a];
    let mut branch = out.cache.activation_signature();
    for i in 0..b {
        let row = &lp[i * a..(i + 1) * a];
        let act = batch.actions[i];
        let s = clipped_surrogate(
            row[act],
            batch.log_probs_old[i],
            batch.advantages[i],
            cfg.epsilon,
        );
        obj_sum += s.objective;
        kl_sum += batch.log_probs_old[i] - row[act];
        clipped += usize::from(s.clipped);
        saturated += usize::from(s.saturated);
        let side = u64::from(s.unclipped_min) | u64::from(s.saturated) << 1;
        branch = branch.rotate_left(3) ^ side;
        let h = row_entropy(row);
        ent_sum += h;
        let g = &mut grad_logits[i * a..(i + 1) * a];
        for j in 0..a {
            let p = row[j].exp();
            let onehot = if j == act { 1.0 } else { 0.0 };
            // -∂obj/∂z_j - c2·∂H/∂z_j, with ∂H/∂z_j = -p_j (log p_j + H)
            g[j] = inv_b * (-s.grad_log_prob * (onehot - p) + cfg.entropy_coef * p * (row[j] + h));
        }
    }
    let loss_value = value_loss(&out.values, &batch.returns)?;
    let grad_values = out
        .values
        .iter()
        .zip(&batch.returns)
        .map(|(v, r)| cfg.value_coef * (v - r) * inv_b)
        .collect();
    let mean_obj = obj_sum * inv_b;
    let ent = ent_sum * inv_b;
    let loss = -(mean_obj - cfg.value_coef * loss_value + cfg.entropy_coef * ent);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("total loss (clip {mean_obj}, value {loss_value}, entropy {ent})"),
        });
    }
    Ok(LossOutput {
        metrics: LossMetrics {
            loss,
            loss_clip: -mean_obj,
            loss_value,
            entropy: ent,
            approx_kl: kl_sum * inv_b,
            clip_fraction: clipped as f64 * inv_b,
            saturated,
        },
        grad_logits: Tensor::from_vec(&[b, a], grad_logits)?,
        grad_values,
        cache: out.cache,
        branch,
    })
}

/// Scalar loss and metrics for a minibatch.
pub fn total_loss(
    model: &ActorCritic,
    batch: &Minibatch,
    cfg: &PpoConfig,
) -> Result<(f64, LossMetrics)> {
    let out = loss_and_grads(model, batch, cfg)?;
    Ok((out.metrics.loss, out.metrics))
}
