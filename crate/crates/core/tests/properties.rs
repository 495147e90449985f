use proptest::prelude::*;

use surgplan::envs::{EnvKind, Instruction, SurgEnv};
use surgplan::mathcore::{Rng, Tensor};
use surgplan::nets::{log_softmax, ActorCritic, NetConfig};
use surgplan::ppo::{
    clipped_surrogate, compute_gae, entropy, gae_direct_sum, loss_and_grads, normalize_advantages,
    Minibatch, PpoConfig,
};
use surgplan::tokens::{ProviderKind, TokenConfig, TokenProvider};

fn env_kind() -> impl Strategy<Value = EnvKind> {
    prop::sample::select(EnvKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn clip_never_exceeds_unclipped(new in -30.0f64..30.0, old in -30.0f64..30.0, adv in -10.0f64..10.0, eps in 0.01f64..0.5) {
        let s = clipped_surrogate(new, old, adv, eps);
        prop_assert!(s.objective <= s.ratio * adv + 1e-12 * (s.ratio * adv).abs());
        prop_assert!(s.objective.is_finite());
    }

    #[test]
    fn equal_log_probs_give_unit_ratio(lp in -30.0f64..0.0, adv in -10.0f64..10.0, eps in 0.01f64..0.5) {
        let s = clipped_surrogate(lp, lp, adv, eps);
        prop_assert_eq!(s.ratio, 1.0);
        prop_assert!(!s.clipped);
        prop_assert_eq!(s.objective, adv);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn gae_matches_direct_sum(
        steps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, prop::bool::weighted(0.15)), 1..=32),
        bootstrap in -2.0f64..2.0,
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
        let oracle = gae_direct_sum(&rewards, &values, &dones, bootstrap, gamma, lambda);
        for t in 0..adv.len() {
            prop_assert!((adv[t] - oracle[t]).abs() <= 1e-10);
            prop_assert!((ret[t] - (adv[t] + values[t])).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 2..8), shift in -100.0f64..100.0) {
        let lp = log_softmax(&logits);
        let sum: f64 = lp.iter().map(|l| l.exp()).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in lp.iter().zip(log_softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let n = logits.len();
        let h = entropy(&Tensor::from_vec(&[1, n], lp).unwrap());
        prop_assert!((-1e-12..=(n as f64).ln() + 1e-12).contains(&h));
    }

    #[test]
    fn normalized_advantages_are_standard(adv in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        let mut a = adv.clone();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let spread = adv.iter().cloned().fold(f64::MIN, f64::max) - adv.iter().cloned().fold(f64::MAX, f64::min);
        if spread > 1e-6 {
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn target_never_reaches_pixels(kind in env_kind(), seed in any::<u64>(), salt in any::<u64>()) {
        let mut env = SurgEnv::new(kind, true);
        let (obs, instruction) = env.reset(seed);
        let mut order: Vec<usize> = (0..kind.object_count()).collect();
        Rng::new(salt).shuffle(&mut order);
        order.truncate(kind.sequence_len());
        if order == instruction.target_sequence {
            order.rotate_left(1);
            if order == instruction.target_sequence {
                order[0] = (order[0] + 1) % kind.object_count();
            }
        }
        let flipped = Instruction { target_sequence: order, ..instruction.clone() };
        let (obs2, _) = SurgEnv::new(kind, true).reset_with_instruction(seed, flipped).unwrap();
        prop_assert_eq!(obs.data(), obs2.data());
    }

    #[test]
    fn oracle_tokens_are_fixed_by_the_instruction(kind in env_kind(), seed in any::<u64>(), draw in any::<u64>()) {
        let provider = TokenProvider::new(TokenConfig { provider: ProviderKind::Oracle, ..TokenConfig::default() }, 16).unwrap();
        let mut env = SurgEnv::new(kind, true);
        let (obs, instruction) = env.reset(seed);
        let mut g1 = provider.begin_episode();
        let mut g2 = provider.begin_episode();
        let a = g1.provide(&obs, &instruction, &mut Rng::new(draw)).unwrap();
        let b = g2.provide(&obs, &instruction, &mut Rng::new(draw.wrapping_add(1))).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(g1.provide(&obs, &instruction, &mut Rng::new(draw)).is_err());
    }
}

#[test]
fn unchanged_parameters_give_ratio_one_batchwide() {
    let cfg = NetConfig::default();
    let model = ActorCritic::new(&cfg, 21).unwrap();
    let mut rng = Rng::new(5);
    let b = 32;
    let mut obs = Vec::new();
    let mut tokens = Vec::new();
    for i in 0..b {
        let kind = EnvKind::ALL[i % 5];
        let (o, _) = SurgEnv::new(kind, true).reset(rng.next_u64());
        obs.extend_from_slice(o.data());
        tokens.extend((0..16).map(|_| rng.normal()));
    }
    let observations = Tensor::from_vec(&[b, 3, 24, 24], obs).unwrap();
    let tokens = Tensor::from_vec(&[b, 16], tokens).unwrap();
    let out = model.forward(&observations, &tokens).unwrap();
    let actions: Vec<usize> = (0..b).map(|_| rng.below(5)).collect();
    let batch = Minibatch {
        log_probs_old: actions
            .iter()
            .enumerate()
            .map(|(i, &a)| out.log_probs.data()[i * 5 + a])
            .collect(),
        actions,
        advantages: (0..b).map(|_| rng.normal()).collect(),
        returns: (0..b).map(|_| rng.normal()).collect(),
        observations,
        tokens,
    };
    let m = loss_and_grads(&model, &batch, &PpoConfig::default())
        .unwrap()
        .metrics;
    assert_eq!(m.clip_fraction, 0.0);
    assert_eq!(m.approx_kl, 0.0);
}
