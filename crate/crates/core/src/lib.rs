//! Proximal policy optimization over a state that concatenates
//! once-per-episode planning tokens with per-step visual embeddings, trained
//! on five surrogate laparoscopic grid tasks.

pub mod error;
pub mod mathcore;

pub use error::{Error, Result};
pub mod envs;
pub mod harness;
pub mod nets;
pub mod ppo;
pub mod tokens;
