//! JSON checkpoints: format version, the run config, and every parameter.
//!
//! Floats are written in shortest round-trip decimal form and parsed with
//! correct rounding, so save → load → save is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::mathcore::Tensor;

use super::{ActorCritic, NetConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// `"initial"`, `"periodic"` or `"final"`.
    pub tag: String,
    /// Environment steps consumed when the checkpoint was taken.
    pub step: u64,
    pub config: RunConfig,
    pub parameters: Vec<ParamRecord>,
}

/// Git-style blob hash: SHA-256 over `"blob <len>\0" + bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_model(model: &ActorCritic, config: &RunConfig, step: u64, tag: &str) -> Self {
        let parameters = model
            .params()
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            tag: tag.to_string(),
            step,
            config: config.clone(),
            parameters,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    /// Parses and validates a checkpoint document; `origin` labels errors.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let err = |detail: String| Error::Checkpoint {
            path: origin.to_string(),
            detail,
        };
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| err(format!("malformed JSON: {e}")))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(err(format!(
                    "unsupported format_version {v} (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(err("missing format_version".into())),
        }
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| err(format!("invalid checkpoint: {e}")))?;
        ckpt.check_layout().map_err(|detail| err(detail))?;
        Ok(ckpt)
    }

    /// Every record must match the layout implied by the embedded config.
    fn check_layout(&self) -> std::result::Result<(), String> {
        let layout = ActorCritic::layout(&self.config.net);
        if layout.len() != self.parameters.len() {
            return Err(format!(
                "expected {} parameters for the embedded config, found {}",
                layout.len(),
                self.parameters.len()
            ));
        }
        for (i, ((name, shape), rec)) in layout.iter().zip(&self.parameters).enumerate() {
            if &rec.name != name {
                return Err(format!(
                    "parameters[{i}]: expected `{name}`, found `{}`",
                    rec.name
                ));
            }
            if &rec.shape != shape {
                return Err(format!(
                    "parameters[{i}] `{name}`: shape {:?} disagrees with config shape {shape:?}",
                    rec.shape
                ));
            }
            let want: usize = shape.iter().product();
            if rec.data.len() != want {
                return Err(format!(
                    "parameters[{i}] `{name}`: {} values for shape {shape:?}",
                    rec.data.len()
                ));
            }
            if let Some(j) = rec.data.iter().position(|v| !v.is_finite()) {
                return Err(format!("parameters[{i}] `{name}`: non-finite value at {j}"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let text = self.to_json();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
        Ok(content_hash(text.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn hash(&self) -> String {
        content_hash(self.to_json().as_bytes())
    }

    /// Rebuilds the networks described by the embedded config.
    pub fn to_model(&self) -> Result<ActorCritic> {
        self.check_layout().map_err(|detail| Error::Checkpoint {
            path: "<memory>".into(),
            detail,
        })?;
        let mut model = ActorCritic::zeros(&self.config.net)?;
        for (slot, rec) in self.parameters.iter().enumerate() {
            *model.params_mut().value_mut(slot) = Tensor::from_vec(&rec.shape, rec.data.clone())?;
        }
        Ok(model)
    }

    /// As [`Checkpoint::to_model`], but rejects a checkpoint whose network
    /// dimensions differ from `expected`.
    pub fn to_model_for(&self, expected: &NetConfig) -> Result<ActorCritic> {
        if &self.config.net != expected {
            return Err(Error::Checkpoint {
                path: "<memory>".into(),
                detail: format!(
                    "network config mismatch: checkpoint k={} n={}, expected k={} n={}",
                    self.config.net.token_dim,
                    self.config.net.embed_dim,
                    expected.token_dim,
                    expected.embed_dim
                ),
            });
        }
        self.to_model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ActorCritic, Checkpoint) {
        let cfg = RunConfig::default();
        let model = ActorCritic::new(&cfg.net, 5).unwrap();
        let ckpt = Checkpoint::from_model(&model, &cfg, 0, "initial");
        (model, ckpt)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (model, ckpt) = sample();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let h1 = ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        let h2 = loaded.save(&p2).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert!(loaded
            .to_model()
            .unwrap()
            .params()
            .values_equal(model.params()));
    }

    #[test]
    fn rejects_unknown_version() {
        let (_, ckpt) = sample();
        let text = ckpt
            .to_json()
            .replacen("\"format_version\":1", "\"format_version\":2", 1);
        let err = Checkpoint::from_json(&text, "x.json")
            .unwrap_err()
            .to_string();
        assert!(err.contains("format_version 2"), "{err}");
    }

    #[test]
    fn edited_shape_names_parameter() {
        let (_, ckpt) = sample();
        let text = ckpt.to_json().replacen(
            "\"name\":\"actor.out.bias\",\"shape\":[5]",
            "\"name\":\"actor.out.bias\",\"shape\":[6]",
            1,
        );
        let err = Checkpoint::from_json(&text, "x.json")
            .unwrap_err()
            .to_string();
        assert!(err.contains("actor.out.bias"), "{err}");
    }

    #[test]
    fn malformed_reports_location() {
        let err = Checkpoint::from_json("{\"format_version\":1,\n\"tag\": }", "bad.json")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.json") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn different_token_dim_rejected() {
        let (_, ckpt) = sample();
        let mut other = NetConfig::default();
        other.token_dim = 24;
        assert!(ckpt.to_model_for(&other).is_err());
        assert!(ckpt.to_model_for(&NetConfig::default()).is_ok());
    }

    #[test]
    fn hash_is_git_style() {
        // sha256("blob 0\0")
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
