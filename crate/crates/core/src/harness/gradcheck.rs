use crate::envs::{EnvKind, SurgEnv};
use crate::error::Result;
use crate::mathcore::{
    finite_diff_check, GradCheckOptions, GradCheckReport, ParamStore, Probe, Rng, Tensor,
};
use crate::nets::{ActorCritic, NetConfig};
use crate::ppo::{loss_and_grads, normalize_advantages, Minibatch, PpoConfig};
use crate::tokens::{ProviderKind, TokenConfig, TokenProvider};

pub const GRADCHECK_BATCH: usize = 4;

/// A model with biases moved off zero, so no ReLU sits exactly on its kink.
pub fn gradcheck_model(cfg: &NetConfig, seed: u64) -> Result<ActorCritic> {
    let mut model = ActorCritic::new(cfg, seed)?;
    let mut rng = Rng::substream(seed, "gradcheck-bias", 0);
    for p in model.params_mut().iter_mut() {
        if p.name.ends_with("bias") {
            for v in p.value.data_mut() {
                *v = rng.uniform_range(-0.1, 0.1);
            }
        }
    }
    Ok(model)
}

/// Rendered first frames of four tasks with oracle tokens; behavior
/// log-probabilities are perturbed so ratios straddle the clip range.
pub fn synthetic_batch(model: &ActorCritic, seed: u64) -> Result<Minibatch> {
    let cfg = model.config();
    let mut rng = Rng::substream(seed, "gradcheck-batch", 0);
    let provider = TokenProvider::new(
        TokenConfig {
            provider: ProviderKind::Oracle,
            ..TokenConfig::default()
        },
        cfg.token_dim,
    )?;
    let kinds = [
        EnvKind::Deflect,
        EnvKind::Reach,
        EnvKind::Cut,
        EnvKind::Place,
    ];
    let mut obs = Vec::new();
    let mut tokens = Vec::new();
    for kind in kinds.iter().take(GRADCHECK_BATCH) {
        let mut env = SurgEnv::new(*kind, true);
        let (o, instruction) = env.reset(rng.next_u64());
        let mut guard = provider.begin_episode();
        tokens.extend(guard.provide(&o, &instruction, &mut rng)?.0);
        guard.finish()?;
        obs.extend_from_slice(o.data());
    }
    let b = GRADCHECK_BATCH;
    let observations = Tensor::from_vec(&[b, cfg.obs_channels, cfg.obs_size, cfg.obs_size], obs)?;
    let tokens = Tensor::from_vec(&[b, cfg.token_dim], tokens)?;
    let out = model.forward(&observations, &tokens)?;
    let a = cfg.num_actions;
    let actions: Vec<usize> = (0..b).map(|_| rng.below(a)).collect();
    let log_probs_old = actions
        .iter()
        .enumerate()
        .map(|(i, &act)| out.log_probs.data()[i * a + act] + rng.uniform_range(-0.5, 0.5))
        .collect();
    let mut advantages: Vec<f64> = (0..b).map(|_| rng.normal()).collect();
    normalize_advantages(&mut advantages);
    let returns = (0..b).map(|_| rng.normal()).collect();
    Ok(Minibatch {
        observations,
        tokens,
        actions,
        log_probs_old,
        advantages,
        returns,
    })
}

/// Finite-difference check of the full PPO loss through actor, critic and
/// encoder. Probes whose ±step straddles a ReLU or clip kink are reported
/// but not judged.
pub fn gradcheck(seed: u64) -> Result<GradCheckReport> {
    gradcheck_with(seed, |_| {})
}

/// As [`gradcheck`], with `tamper` applied to the analytic gradients before
/// comparison.
pub fn gradcheck_with(seed: u64, tamper: impl FnOnce(&mut ParamStore)) -> Result<GradCheckReport> {
    let net = NetConfig::default();
    let ppo = PpoConfig::default();
    let mut model = gradcheck_model(&net, seed)?;
    let batch = synthetic_batch(&model, seed)?;
    let out = loss_and_grads(&model, &batch, &ppo)?;
    model.params_mut().zero_grad();
    model.backward(&out.cache, &out.grad_logits, &out.grad_values)?;
    tamper(model.params_mut());

    let probe = model.clone();
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    finite_diff_check(
        model.params_mut(),
        |store| {
            let mut m = probe.clone();
            for (dst, src) in m.params_mut().iter_mut().zip(store.iter()) {
                dst.value.data_mut().copy_from_slice(src.value.data());
            }
            let out = loss_and_grads(&m, &batch, &ppo)?;
            Ok(Probe {
                loss: out.metrics.loss,
                branch: out.branch,
            })
        },
        &opts,
    )
}
