use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::envs::{Cell, GRID};
use crate::error::{Error, Result};
use crate::nets::ActorCritic;
use crate::tokens::TokenProvider;

use super::eval::{run_episodes, write_provenance, EvalReport, EvalSpec, PolicyAgent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Divided by this max |H|.
    MaxAbs(f64),
    /// Every entry was zero.
    Skipped,
}

/// Reward-weighted visitation over the tool grid, row-major (`row = y`).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub grid: Vec<f64>,
    pub episodes: usize,
    pub normalization: Normalization,
}

/// Per-cell visit counts and reward sums.
#[derive(Debug, Clone)]
pub struct VisitAccumulator {
    visits: Vec<u64>,
    reward_sum: Vec<f64>,
}

impl Default for VisitAccumulator {
    fn default() -> Self {
        VisitAccumulator {
            visits: vec![0; GRID * GRID],
            reward_sum: vec![0.0; GRID * GRID],
        }
    }
}

impl VisitAccumulator {
    pub fn record(&mut self, cell: Cell, reward: f64) {
        let i = cell.index();
        self.visits[i] += 1;
        self.reward_sum[i] += reward;
    }

    /// `H[c] = visits[c]/total · mean_reward[c]`, then scaled to max |H| = 1.
    pub fn finish(&self, episodes: usize) -> Heatmap {
        let total: u64 = self.visits.iter().sum();
        let mut grid: Vec<f64> = self
            .visits
            .iter()
            .zip(&self.reward_sum)
            .map(|(&n, &r)| {
                if n == 0 {
                    0.0
                } else {
                    (n as f64 / total as f64) * (r / n as f64)
                }
            })
            .collect();
        let max = grid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let normalization = if max > 0.0 {
            for v in &mut grid {
                *v /= max;
            }
            Normalization::MaxAbs(max)
        } else {
            Normalization::Skipped
        };
        Heatmap {
            grid,
            episodes,
            normalization,
        }
    }
}

impl Heatmap {
    pub fn at(&self, cell: Cell) -> f64 {
        self.grid[cell.index()]
    }

    /// Cell with the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> Cell {
        let mut best = 0;
        for (i, v) in self.grid.iter().enumerate() {
            if *v > self.grid[best] {
                best = i;
            }
        }
        Cell::new(best % GRID, best / GRID)
    }

    pub fn to_csv(&self, provenance: &[(&str, &str)]) -> Vec<u8> {
        let mut out = Vec::new();
        let norm = match self.normalization {
            Normalization::MaxAbs(m) => format!("max_abs {m}"),
            Normalization::Skipped => "skipped".to_string(),
        };
        let episodes = self.episodes.to_string();
        let mut lines = provenance.to_vec();
        lines.push(("episodes", &episodes));
        lines.push(("normalization", &norm));
        write_provenance(&mut out, &lines).expect("write to Vec");
        out.extend_from_slice(b"row,col,value\n");
        for (i, v) in self.grid.iter().enumerate() {
            writeln!(out, "{},{},{}", i / GRID, i % GRID, v).expect("write to Vec");
        }
        out
    }

    /// Binary 8-bit PGM, value mapped linearly from [-1, 1] to [0, 255].
    pub fn to_pgm(&self, comment: &str) -> Vec<u8> {
        let mut out = Vec::new();
        write!(out, "P5\n# {comment}\n{GRID} {GRID}\n255\n").expect("write to Vec");
        out.extend(
            self.grid
                .iter()
                .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8),
        );
        out
    }

    /// Writes `<prefix>.csv` and `<prefix>.pgm`.
    pub fn write(
        &self,
        prefix: &Path,
        config_json: &str,
        checkpoint_hash: &str,
    ) -> Result<(PathBuf, PathBuf)> {
        let csv = with_suffix(prefix, "csv");
        let pgm = with_suffix(prefix, "pgm");
        if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let prov = [("config", config_json), ("checkpoint", checkpoint_hash)];
        std::fs::write(&csv, self.to_csv(&prov)).map_err(|e| Error::io(&csv, e))?;
        let comment = format!("checkpoint {checkpoint_hash}");
        std::fs::write(&pgm, self.to_pgm(&comment)).map_err(|e| Error::io(&pgm, e))?;
        Ok((csv, pgm))
    }
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Rolls the policy out and accumulates every step's reward at the tool's
/// post-step cell.
pub fn heatmap(
    model: &ActorCritic,
    spec: &EvalSpec,
    provider: &TokenProvider,
) -> Result<(Heatmap, EvalReport)> {
    let mut acc = VisitAccumulator::default();
    let report = run_episodes(spec, provider, &mut PolicyAgent::new(model), |_, r| {
        acc.record(r.info.tool_cell, r.reward)
    })?;
    Ok((acc.finish(spec.episodes), report))
}
