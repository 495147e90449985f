use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Action, EnvKind, Observation, StepResult, SurgEnv};
use crate::error::{Error, Result};
use crate::mathcore::{Rng, Tensor};
use crate::nets::ActorCritic;
use crate::tokens::{PlanningTokens, TokenProvider};

/// Chooses actions during evaluation.
pub trait Agent {
    fn act(
        &mut self,
        env: &SurgEnv,
        observation: &Observation,
        tokens: &PlanningTokens,
        rng: &mut Rng,
    ) -> Result<Action>;
}

/// Samples from the actor's categorical distribution.
pub struct PolicyAgent<'a> {
    model: &'a ActorCritic,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(model: &'a ActorCritic) -> Self {
        PolicyAgent { model }
    }
}

impl Agent for PolicyAgent<'_> {
    fn act(
        &mut self,
        _env: &SurgEnv,
        observation: &Observation,
        tokens: &PlanningTokens,
        rng: &mut Rng,
    ) -> Result<Action> {
        let mut shape = vec![1];
        shape.extend_from_slice(observation.shape());
        let obs = Tensor::from_vec(&shape, observation.data().to_vec())?;
        let tok = Tensor::from_vec(&[1, tokens.0.len()], tokens.0.clone())?;
        let out = self.model.forward(&obs, &tok)?;
        let probs: Vec<f64> = out.log_probs.data().iter().map(|l| l.exp()).collect();
        Ok(Action::from_index(rng.categorical(&probs)).expect("action index in range"))
    }
}

/// Scripted agent reading the instruction directly; ignores tokens.
pub struct ScriptedOracle;

impl Agent for ScriptedOracle {
    fn act(
        &mut self,
        env: &SurgEnv,
        _: &Observation,
        _: &PlanningTokens,
        _: &mut Rng,
    ) -> Result<Action> {
        Ok(env.oracle_action())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layouts {
    /// A fresh layout every episode.
    Varied,
    /// Every episode replays the first layout (and its instruction).
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub env: EnvKind,
    pub shaping: bool,
    pub episodes: usize,
    pub seed: u64,
    pub layouts: Layouts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: EnvKind,
    pub provider: String,
    pub seed: u64,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_episode_length: f64,
}

impl EvalReport {
    pub fn new(env: EnvKind, provider: &str, seed: u64, outcomes: &[(bool, f64, u32)]) -> Self {
        let episodes = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.0).count();
        let n = episodes.max(1) as f64;
        EvalReport {
            env,
            provider: provider.to_string(),
            seed,
            episodes,
            successes,
            success_rate: if episodes == 0 {
                0.0
            } else {
                successes as f64 / episodes as f64
            },
            mean_return: outcomes.iter().map(|o| o.1).sum::<f64>() / n,
            mean_episode_length: outcomes.iter().map(|o| f64::from(o.2)).sum::<f64>() / n,
        }
    }

    pub const CSV_HEADER: &'static str =
        "env,provider,seed,episodes,successes,success_rate,mean_return,mean_episode_length,action_selection";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},sampled",
            self.env,
            self.provider,
            self.seed,
            self.episodes,
            self.successes,
            self.success_rate,
            self.mean_return,
            self.mean_episode_length
        )
    }
}

/// Writes `# key: value` provenance lines.
pub(crate) fn write_provenance(
    out: &mut impl std::io::Write,
    lines: &[(&str, &str)],
) -> std::io::Result<()> {
    for (k, v) in lines {
        writeln!(out, "# {k}: {v}")?;
    }
    Ok(())
}

pub fn write_eval_csv(
    path: &Path,
    report: &EvalReport,
    config_json: &str,
    checkpoint_hash: &str,
) -> Result<()> {
    let mut buf = Vec::new();
    write_provenance(
        &mut buf,
        &[("config", config_json), ("checkpoint", checkpoint_hash)],
    )
    .and_then(|_| writeln!(buf, "{}", EvalReport::CSV_HEADER))
    .and_then(|_| writeln!(buf, "{}", report.csv_row()))
    .map_err(|e| Error::io(path, e))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// The scene every episode replays under [`Layouts::Fixed`] (and the first
/// episode's scene under [`Layouts::Varied`]).
pub fn first_scene(spec: &EvalSpec) -> SurgEnv {
    let mut env = SurgEnv::new(spec.env, spec.shaping);
    env.reset(Rng::substream(spec.seed, "eval-episodes", 0).next_u64());
    env
}

/// Plays `spec.episodes` episodes on a dedicated evaluation stream. Tokens
/// are requested once per episode. `on_step` sees every transition.
pub fn run_episodes(
    spec: &EvalSpec,
    provider: &TokenProvider,
    agent: &mut dyn Agent,
    mut on_step: impl FnMut(&SurgEnv, &StepResult),
) -> Result<EvalReport> {
    let mut seeds = Rng::substream(spec.seed, "eval-episodes", 0);
    let mut sampling = Rng::substream(spec.seed, "eval-sampling", 0);
    let mut token_rng = Rng::substream(spec.seed, "eval-tokens", 0);
    let fixed_seed = seeds.next_u64();
    let mut env = SurgEnv::new(spec.env, spec.shaping);
    let mut outcomes = Vec::with_capacity(spec.episodes);
    for episode in 0..spec.episodes {
        let layout_seed = match spec.layouts {
            Layouts::Fixed => fixed_seed,
            Layouts::Varied if episode == 0 => fixed_seed,
            Layouts::Varied => seeds.next_u64(),
        };
        let (mut obs, instruction) = env.reset(layout_seed);
        let mut guard = provider.begin_episode();
        let tokens = guard.provide(&obs, &instruction, &mut token_rng)?;
        let mut ret = 0.0;
        let mut success = false;
        while !env.is_done() {
            let action = agent.act(&env, &obs, &tokens, &mut sampling)?;
            let result = env.step(action)?;
            on_step(&env, &result);
            ret += result.reward;
            success = result.success;
            obs = result.observation;
        }
        guard.finish()?;
        outcomes.push((success, ret, env.steps()));
    }
    Ok(EvalReport::new(
        spec.env,
        provider.kind().name(),
        spec.seed,
        &outcomes,
    ))
}

/// Stochastic-policy evaluation; parameters are only read.
pub fn evaluate(
    model: &ActorCritic,
    spec: &EvalSpec,
    provider: &TokenProvider,
) -> Result<EvalReport> {
    if provider.token_dim() != model.config().token_dim {
        return Err(Error::Config(format!(
            "provider emits {} tokens, model expects {}",
            provider.token_dim(),
            model.config().token_dim
        )));
    }
    run_episodes(spec, provider, &mut PolicyAgent::new(model), |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetConfig;
    use crate::tokens::{ProviderKind, TokenConfig};

    fn provider(kind: ProviderKind) -> TokenProvider {
        TokenProvider::new(
            TokenConfig {
                provider: kind,
                ..TokenConfig::default()
            },
            16,
        )
        .unwrap()
    }

    fn spec(env: EnvKind, episodes: usize) -> EvalSpec {
        EvalSpec {
            env,
            shaping: false,
            episodes,
            seed: 11,
            layouts: Layouts::Varied,
        }
    }

    #[test]
    fn success_rate_arithmetic() {
        let outcomes: Vec<(bool, f64, u32)> = (0..100).map(|i| (i < 73, 0.0, 10)).collect();
        let r = EvalReport::new(EnvKind::Cut, "oracle", 0, &outcomes);
        assert_eq!(r.success_rate, 0.73);
        assert_eq!(r.successes, 73);
    }

    #[test]
    fn scripted_oracle_always_succeeds() {
        for env in EnvKind::ALL {
            let r = run_episodes(
                &spec(env, 50),
                &provider(ProviderKind::Null),
                &mut ScriptedOracle,
                |_, _| {},
            )
            .unwrap();
            assert_eq!(r.success_rate, 1.0, "{env}");
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_read_only() {
        let model = ActorCritic::new(&NetConfig::default(), 2).unwrap();
        let before = model.params().clone();
        let a = evaluate(
            &model,
            &spec(EnvKind::Deflect, 10),
            &provider(ProviderKind::Noisy),
        )
        .unwrap();
        let b = evaluate(
            &model,
            &spec(EnvKind::Deflect, 10),
            &provider(ProviderKind::Noisy),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(model.params().values_equal(&before));
    }

    #[test]
    fn fixed_layout_repeats_scene() {
        let mut firsts = Vec::new();
        let fixed = EvalSpec {
            layouts: Layouts::Fixed,
            ..spec(EnvKind::Place, 5)
        };
        run_episodes(
            &fixed,
            &provider(ProviderKind::Oracle),
            &mut ScriptedOracle,
            |env, r| {
                if env.steps() == 1 {
                    firsts.push(r.info.tool_cell);
                }
            },
        )
        .unwrap();
        assert!(firsts.windows(2).all(|w| w[0] == w[1]));
        let mut goals = Vec::new();
        run_episodes(
            &fixed,
            &provider(ProviderKind::Oracle),
            &mut ScriptedOracle,
            |env, _| goals.push(env.goal_cells()),
        )
        .unwrap();
        assert!(goals.contains(&first_scene(&fixed).goal_cells()));
    }
}
