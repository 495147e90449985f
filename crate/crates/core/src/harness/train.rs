use std::collections::VecDeque;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::envs::{Action, Observation, SurgEnv};
use crate::error::{Error, Result};
use crate::mathcore::{Rng, Tensor};
use crate::nets::{ActorCritic, Checkpoint};
use crate::ppo::{update, RolloutBuffer, Transition, UpdateMetrics};
use crate::tokens::{EpisodeTokens, PlanningTokens, TokenProvider};

use super::eval::write_provenance;
use super::RunConfig;

/// Completed episodes averaged into each metrics row.
pub const METRICS_WINDOW: usize = 100;

pub const METRICS_HEADER: &str =
    "step,mean_return,success_rate_window,loss_clip,loss_value,entropy,approx_kl,clip_fraction";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_return: f64,
    pub success_rate_window: f64,
    pub update: UpdateMetrics,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        let u = &self.update;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_return,
            self.success_rate_window,
            u.loss_clip,
            u.loss_value,
            u.entropy,
            u.approx_kl,
            u.clip_fraction
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ActorCritic,
    pub final_checkpoint: PathBuf,
    pub final_hash: String,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub rows: Vec<MetricsRow>,
    /// Episodes started, including any still running at the end.
    pub episodes: u64,
    pub provider_calls: u64,
    pub steps: u64,
}

/// One environment lane with its private random streams.
struct Lane<'p> {
    env: SurgEnv,
    episode_seeds: Rng,
    token_rng: Rng,
    sampling: Rng,
    obs: Observation,
    tokens: PlanningTokens,
    guard: EpisodeTokens<'p>,
    ret: f64,
}

impl<'p> Lane<'p> {
    fn new(cfg: &RunConfig, provider: &'p TokenProvider, index: u64) -> Result<Self> {
        let mut lane = Lane {
            env: SurgEnv::new(cfg.env, cfg.shaping),
            episode_seeds: Rng::substream(cfg.seed, "train-episodes", index),
            token_rng: Rng::substream(cfg.seed, "tokens", index),
            sampling: Rng::substream(cfg.seed, "sampling", index),
            obs: Tensor::zeros(&[1]),
            tokens: PlanningTokens(Vec::new()),
            guard: provider.begin_episode(),
            ret: 0.0,
        };
        lane.begin(provider)?;
        Ok(lane)
    }

    /// Resets the scene and fetches this episode's only set of tokens.
    fn begin(&mut self, provider: &'p TokenProvider) -> Result<()> {
        let (obs, instruction) = self.env.reset(self.episode_seeds.next_u64());
        self.guard = provider.begin_episode();
        self.tokens = self
            .guard
            .provide(&obs, &instruction, &mut self.token_rng)?;
        self.obs = obs;
        self.ret = 0.0;
        Ok(())
    }
}

struct Counters {
    episodes: u64,
    calls: u64,
    recent: VecDeque<(f64, bool)>,
}

impl Counters {
    fn close(&mut self, guard: EpisodeTokens<'_>, ret: f64, success: bool) -> Result<()> {
        self.calls += u64::from(guard.calls());
        guard.finish()?;
        if self.recent.len() == METRICS_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back((ret, success));
        Ok(())
    }

    fn window(&self) -> (f64, f64) {
        if self.recent.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.recent.len() as f64;
        let ret = self.recent.iter().map(|r| r.0).sum::<f64>() / n;
        let succ = self.recent.iter().filter(|r| r.1).count() as f64 / n;
        (ret, succ)
    }
}

fn batch_inputs(lanes: &[Lane<'_>]) -> Result<(Tensor, Tensor)> {
    let obs_shape = lanes[0].obs.shape().to_vec();
    let mut obs = Vec::with_capacity(lanes.len() * lanes[0].obs.len());
    let mut tok = Vec::with_capacity(lanes.len() * lanes[0].tokens.0.len());
    for l in lanes {
        obs.extend_from_slice(l.obs.data());
        tok.extend_from_slice(&l.tokens.0);
    }
    let mut shape = vec![lanes.len()];
    shape.extend_from_slice(&obs_shape);
    Ok((
        Tensor::from_vec(&shape, obs)?,
        Tensor::from_vec(&[lanes.len(), lanes[0].tokens.0.len()], tok)?,
    ))
}

pub fn checkpoint_path(dir: &Path, tag: &str, step: u64) -> PathBuf {
    match tag {
        "final" => dir.join("final.json"),
        _ => dir.join(format!("checkpoint_{step:09}.json")),
    }
}

/// Trains with `cfg`, writing checkpoints and `metrics.csv` under `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    train_with_progress(cfg, out_dir, |_| {})
}

/// As [`train`], calling `progress` after every update.
pub fn train_with_progress(
    cfg: &RunConfig,
    out_dir: &Path,
    mut progress: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_json = cfg.to_json();
    let provider = TokenProvider::new(cfg.tokens.clone(), cfg.net.token_dim)?;
    let mut model = ActorCritic::new(&cfg.net, cfg.seed)?;
    let mut update_rng = Rng::substream(cfg.seed, "update", 0);
    let mut checkpoints = Vec::new();

    let initial = Checkpoint::from_model(&model, cfg, 0, "initial");
    let path = checkpoint_path(out_dir, "initial", 0);
    let mut last_hash = initial.save(&path)?;
    checkpoints.push(path);

    let ppo = &cfg.ppo;
    let t_env = ppo.rollout_steps;
    let mut lanes = (0..ppo.num_envs as u64)
        .map(|i| Lane::new(cfg, &provider, i))
        .collect::<Result<Vec<_>>>()?;
    let mut counters = Counters {
        episodes: lanes.len() as u64,
        calls: 0,
        recent: VecDeque::with_capacity(METRICS_WINDOW),
    };
    let mut buffer = RolloutBuffer::new(
        ppo.num_envs,
        t_env,
        &[cfg.net.obs_channels, cfg.net.obs_size, cfg.net.obs_size],
        cfg.net.token_dim,
    );
    let mut rows = Vec::new();
    let mut step: u64 = 0;
    let mut updates = 0usize;
    let a = cfg.net.num_actions;

    while step < cfg.total_timesteps {
        buffer.clear();
        for _ in 0..t_env {
            let (obs, tok) = batch_inputs(&lanes)?;
            let out = model.forward(&obs, &tok).map_err(|e| at(step, e))?;
            for (e, lane) in lanes.iter_mut().enumerate() {
                let lp = &out.log_probs.data()[e * a..(e + 1) * a];
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                let act = lane.sampling.categorical(&probs);
                let action = Action::from_index(act).expect("action index in range");
                let result = lane.env.step(action).map_err(|e| at(step, e))?;
                buffer
                    .push(
                        e,
                        Transition {
                            observation: lane.obs.data(),
                            tokens: &lane.tokens.0,
                            action: act,
                            log_prob: lp[act],
                            value: out.values[e],
                            reward: result.reward,
                            done: result.done,
                        },
                    )
                    .map_err(|e| at(step, e))?;
                lane.ret += result.reward;
                step += 1;
                if result.done {
                    let guard = std::mem::replace(&mut lane.guard, provider.begin_episode());
                    counters
                        .close(guard, lane.ret, result.success)
                        .map_err(|e| at(step, e))?;
                    lane.begin(&provider).map_err(|e| at(step, e))?;
                    counters.episodes += 1;
                } else {
                    lane.obs = result.observation;
                }
            }
        }
        let (obs, tok) = batch_inputs(&lanes)?;
        let bootstrap = model.forward(&obs, &tok).map_err(|e| at(step, e))?.values;
        buffer
            .finish(&bootstrap, ppo.gamma, ppo.gae_lambda)
            .map_err(|e| at(step, e))?;
        let metrics = update(&buffer, &mut model, &cfg.adam, ppo, &mut update_rng)
            .map_err(|e| at(step, e))?;
        updates += 1;

        let (mean_return, success_rate_window) = counters.window();
        let row = MetricsRow {
            step,
            mean_return,
            success_rate_window,
            update: metrics,
        };
        progress(&row);
        rows.push(row);

        if cfg.checkpoint_interval > 0
            && updates % cfg.checkpoint_interval == 0
            && step < cfg.total_timesteps
        {
            let path = checkpoint_path(out_dir, "periodic", step);
            last_hash = Checkpoint::from_model(&model, cfg, step, "periodic").save(&path)?;
            checkpoints.push(path);
        }
    }

    // Episodes still running made their single call too.
    counters.calls += lanes
        .iter()
        .map(|l| u64::from(l.guard.calls()))
        .sum::<u64>();

    let (final_checkpoint, final_hash) = if step > 0 {
        let path = checkpoint_path(out_dir, "final", step);
        let hash = Checkpoint::from_model(&model, cfg, step, "final").save(&path)?;
        checkpoints.push(path.clone());
        (path, hash)
    } else {
        (checkpoints[0].clone(), last_hash)
    };

    let metrics_path = out_dir.join("metrics.csv");
    let mut csv = Vec::new();
    write_provenance(
        &mut csv,
        &[("config", &config_json), ("checkpoint", &final_hash)],
    )
    .and_then(|_| writeln!(csv, "{METRICS_HEADER}"))
    .map_err(|e| Error::io(&metrics_path, e))?;
    for r in &rows {
        writeln!(csv, "{}", r.csv()).map_err(|e| Error::io(&metrics_path, e))?;
    }
    std::fs::write(&metrics_path, csv).map_err(|e| Error::io(&metrics_path, e))?;

    Ok(TrainOutcome {
        model,
        final_checkpoint,
        final_hash,
        metrics_path,
        checkpoints,
        rows,
        episodes: counters.episodes,
        provider_calls: counters.calls,
        steps: step,
    })
}

fn at(step: u64, source: Error) -> Error {
    match source {
        e @ Error::AtStep { .. } => e,
        e => Error::AtStep {
            step,
            source: Box::new(e),
        },
    }
}
