use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, OBS_CHANNELS, OBS_SIZE};
use crate::error::{Error, Result};
use crate::mathcore::AdamConfig;
use crate::nets::NetConfig;
use crate::ppo::PpoConfig;
use crate::tokens::TokenConfig;

/// Everything that determines a training run. Embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub tokens: TokenConfig,
    pub ppo: PpoConfig,
    pub adam: AdamConfig,
    pub net: NetConfig,
    pub total_timesteps: u64,
    pub seed: u64,
    /// Potential-based distance shaping in the environment reward.
    pub shaping: bool,
    pub output_dir: String,
    /// Write an intermediate checkpoint every this many updates; 0 writes only the final one.
    pub checkpoint_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvKind::Deflect,
            tokens: TokenConfig::default(),
            ppo: PpoConfig::default(),
            adam: AdamConfig::default(),
            net: NetConfig::default(),
            total_timesteps: 300_000,
            seed: 0,
            shaping: true,
            output_dir: "runs/default".to_string(),
            checkpoint_interval: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.adam.validate()?;
        self.net.validate()?;
        self.tokens.validate(self.net.token_dim)?;
        if self.net.obs_channels != OBS_CHANNELS || self.net.obs_size != OBS_SIZE {
            return Err(Error::Config(format!(
                "network expects {}×{} observations, environments render {OBS_CHANNELS}×{OBS_SIZE}",
                self.net.obs_channels, self.net.obs_size
            )));
        }
        let block = self.net.token_dim / crate::tokens::TOKEN_BLOCKS;
        if block < self.env.object_count() {
            return Err(Error::Config(format!(
                "token blocks of {block} cannot index {} objects of {}",
                self.env.object_count(),
                self.env
            )));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"env":"cut","seed":7,"ppo":{"epochs":2}}"#).unwrap();
        assert_eq!(cfg.env, EnvKind::Cut);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ppo.epochs, 2);
        assert_eq!(cfg.ppo.minibatch_size, 256);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn token_blocks_must_fit_objects() {
        let mut cfg = RunConfig {
            env: EnvKind::Place,
            ..RunConfig::default()
        };
        cfg.net.token_dim = 12;
        assert!(cfg.validate().is_err());
        cfg.env = EnvKind::Deflect;
        cfg.validate().unwrap();
    }
}
