use crate::error::{Error, Result};

/// Generalized advantage estimates and value targets for one trajectory slice.
///
/// `dones[t]` marks that the transition at `t` ended its episode;
/// `bootstrap_value` is V(s_T) for the state after the last step (ignored
/// when that step is terminal).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::shape(
            "compute_gae",
            format!(
                "rewards {n}, values {}, dones {}",
                values.len(),
                dones.len()
            ),
        ));
    }
    if rewards.iter().chain(values).any(|v| !v.is_finite()) || !bootstrap_value.is_finite() {
        return Err(Error::NonFinite {
            context: "compute_gae inputs".into(),
        });
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Â_t = Σ_l (γλ)^l δ_{t+l}, summed directly and truncated at episode ends.
/// Quadratic; kept as an independent reference for [`compute_gae`].
pub fn gae_direct_sum(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let value_after = |t: usize| {
        if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap_value
        }
    };
    let delta = |t: usize| {
        let live = if dones[t] { 0.0 } else { 1.0 };
        rewards[t] + gamma * value_after(t) * live - values[t]
    };
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut weight = 1.0;
            for u in t..n {
                sum += weight * delta(u);
                if dones[u] {
                    break;
                }
                weight *= gamma * lambda;
            }
            sum
        })
        .collect()
}
