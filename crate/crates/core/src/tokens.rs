//! Planning-token providers.
//!
//! A provider maps the first observation of an episode and its instruction
//! to a fixed k-vector. It is invoked exactly once per episode; the
//! [`EpisodeTokens`] guard enforces that.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{Instruction, Observation};
use crate::error::{Error, Result};
use crate::mathcore::Rng;

/// Number of one-hot blocks in the token vector.
pub const TOKEN_BLOCKS: usize = 2;

/// m_t, held constant for a whole episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningTokens(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Domain-specific planner: exact instruction encoding.
    Oracle,
    /// General-purpose planner: misidentifies targets and adds noise.
    Noisy,
    /// Vision-only baseline.
    Null,
}

impl ProviderKind {
    pub const ALL: [ProviderKind; 3] = [
        ProviderKind::Oracle,
        ProviderKind::Noisy,
        ProviderKind::Null,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProviderKind::Oracle => "oracle",
            ProviderKind::Noisy => "noisy",
            ProviderKind::Null => "null",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProviderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName {
                what: "token provider",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenConfig {
    pub provider: ProviderKind,
    /// Gaussian noise added by the noisy provider.
    pub sigma: f64,
    /// Per-index probability that the noisy provider substitutes a random object.
    pub p_corrupt: f64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        TokenConfig {
            provider: ProviderKind::Oracle,
            sigma: 0.1,
            p_corrupt: 0.25,
        }
    }
}

impl TokenConfig {
    pub fn validate(&self, token_dim: usize) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(0.0..=1.0).contains(&self.p_corrupt)
        {
            return Err(Error::Config(format!("invalid token noise {self:?}")));
        }
        if token_dim % TOKEN_BLOCKS != 0 || token_dim == 0 {
            return Err(Error::Config(format!(
                "token_dim {token_dim} must be a positive multiple of {TOKEN_BLOCKS}"
            )));
        }
        Ok(())
    }
}

/// A frozen provider; parameters never change after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenProvider {
    config: TokenConfig,
    token_dim: usize,
}

impl TokenProvider {
    pub fn new(config: TokenConfig, token_dim: usize) -> Result<Self> {
        config.validate(token_dim)?;
        Ok(TokenProvider { config, token_dim })
    }

    pub fn kind(&self) -> ProviderKind {
        self.config.provider
    }

    pub fn config(&self) -> &TokenConfig {
        &self.config
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    /// Starts the per-episode call guard.
    pub fn begin_episode(&self) -> EpisodeTokens<'_> {
        EpisodeTokens {
            provider: self,
            calls: 0,
        }
    }

    fn encode(&self, sequence: &[usize]) -> Result<Vec<f64>> {
        let block = self.token_dim / TOKEN_BLOCKS;
        let mut out = vec![0.0; self.token_dim];
        for (j, &idx) in sequence.iter().take(TOKEN_BLOCKS).enumerate() {
            if idx >= block {
                return Err(Error::Config(format!(
                    "object index {idx} does not fit a token block of {block}"
                )));
            }
            out[j * block + idx] = 1.0;
        }
        Ok(out)
    }

    fn generate(
        &self,
        _initial: &Observation,
        instruction: &Instruction,
        rng: &mut Rng,
    ) -> Result<PlanningTokens> {
        let tokens = match self.config.provider {
            ProviderKind::Null => vec![0.0; self.token_dim],
            ProviderKind::Oracle => self.encode(&instruction.target_sequence)?,
            ProviderKind::Noisy => {
                let seq: Vec<usize> = instruction
                    .target_sequence
                    .iter()
                    .map(|&t| {
                        if rng.bernoulli(self.config.p_corrupt) {
                            rng.below(instruction.object_count)
                        } else {
                            t
                        }
                    })
                    .collect();
                let mut v = self.encode(&seq)?;
                if self.config.sigma > 0.0 {
                    for x in &mut v {
                        *x += self.config.sigma * rng.normal();
                    }
                }
                v
            }
        };
        Ok(PlanningTokens(tokens))
    }
}

/// Call guard for one episode. `provide` succeeds exactly once.
#[derive(Debug)]
pub struct EpisodeTokens<'a> {
    provider: &'a TokenProvider,
    calls: u32,
}

impl EpisodeTokens<'_> {
    pub fn provide(
        &mut self,
        initial: &Observation,
        instruction: &Instruction,
        rng: &mut Rng,
    ) -> Result<PlanningTokens> {
        self.calls += 1;
        if self.calls > 1 {
            return Err(Error::TokenContract { calls: self.calls });
        }
        self.provider.generate(initial, instruction, rng)
    }

    pub fn calls(&self) -> u32 {
        self.calls
    }

    /// Closes the episode; errors unless exactly one call was made.
    pub fn finish(self) -> Result<()> {
        if self.calls == 1 {
            Ok(())
        } else {
            Err(Error::TokenContract { calls: self.calls })
        }
    }
}
