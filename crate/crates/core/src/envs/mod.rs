//! Five seeded grid surrogates of laparoscopic training tasks.
//!
//! Each task is a 12×12 grid with a single tool. The instructed target
//! (which sphere, which ropes and in what order, ...) is carried only by the
//! [`Instruction`]; rendered observations never reveal it. Object indices are
//! tied to fixed regions of the grid (quadrant, column band, ring position),
//! so a policy that knows the index can find the object from pixels.

mod scene;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::Tensor;

pub use scene::SurgEnv;

pub const GRID: usize = 12;
pub const CELL_PX: usize = 2;
pub const OBS_SIZE: usize = GRID * CELL_PX;
pub const OBS_CHANNELS: usize = 3;
pub const HORIZON: u32 = 128;
pub const STEP_COST: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;
pub const GRASP_REWARD: f64 = 0.5;
pub const FAIL_REWARD: f64 = -1.0;
pub const SHAPING_BETA: f64 = 0.05;

/// Rendered frame, `3×24×24` with values in {0, 0.5, 1}.
pub type Observation = Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Interact,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Interact,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

/// Grid cell, `x` is the column and `y` the row (row 0 at the top).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn chebyshev(self, other: Cell) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    /// Moves one cell, clamped to the grid.
    pub fn moved(self, action: Action) -> Cell {
        match action {
            Action::Up => Cell::new(self.x, self.y.saturating_sub(1)),
            Action::Down => Cell::new(self.x, (self.y + 1).min(GRID - 1)),
            Action::Left => Cell::new(self.x.saturating_sub(1), self.y),
            Action::Right => Cell::new((self.x + 1).min(GRID - 1), self.y),
            Action::Interact => self,
        }
    }

    pub fn index(self) -> usize {
        self.y * GRID + self.x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Deflect,
    Reach,
    Cut,
    Thread,
    Place,
}

impl EnvKind {
    pub const ALL: [EnvKind; 5] = [
        EnvKind::Deflect,
        EnvKind::Reach,
        EnvKind::Cut,
        EnvKind::Thread,
        EnvKind::Place,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Deflect => "deflect",
            EnvKind::Reach => "reach",
            EnvKind::Cut => "cut",
            EnvKind::Thread => "thread",
            EnvKind::Place => "place",
        }
    }

    /// Number of instructable objects.
    pub fn object_count(self) -> usize {
        match self {
            EnvKind::Deflect | EnvKind::Cut => 4,
            EnvKind::Reach | EnvKind::Thread => 3,
            EnvKind::Place => 8,
        }
    }

    pub fn sequence_len(self) -> usize {
        match self {
            EnvKind::Deflect | EnvKind::Reach | EnvKind::Place => 1,
            EnvKind::Cut => 2,
            EnvKind::Thread => 3,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName {
                what: "environment",
                name: s.to_string(),
            })
    }
}

/// What the operator asks for; fixed at reset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub task: EnvKind,
    pub target_sequence: Vec<usize>,
    pub object_count: usize,
}

impl Instruction {
    pub fn validate(&self) -> Result<()> {
        let k = self.task;
        let ok = self.object_count == k.object_count()
            && self.target_sequence.len() == k.sequence_len()
            && self.target_sequence.iter().all(|&t| t < self.object_count)
            && {
                let mut s = self.target_sequence.clone();
                s.sort_unstable();
                s.dedup();
                s.len() == self.target_sequence.len()
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid instruction {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    Moved,
    Idle,
    /// Instruction sequence advanced by one object.
    Advanced,
    /// Picked up the torus / landmark.
    Grasped,
    /// Eyelet reached out of order; ignored.
    OutOfOrder,
    /// Wrong object acted on; episode failed.
    Failed,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub tool_cell: Cell,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub info: StepInfo,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in EnvKind::ALL {
            assert_eq!(k.name().parse::<EnvKind>().unwrap(), k);
        }
        assert!("suture".parse::<EnvKind>().is_err());
    }

    #[test]
    fn moves_clamp() {
        assert_eq!(Cell::new(3, 3).moved(Action::Right), Cell::new(4, 3));
        assert_eq!(Cell::new(0, 0).moved(Action::Up), Cell::new(0, 0));
        assert_eq!(Cell::new(0, 0).moved(Action::Left), Cell::new(0, 0));
        assert_eq!(Cell::new(11, 11).moved(Action::Down), Cell::new(11, 11));
        assert_eq!(Cell::new(11, 5).moved(Action::Right), Cell::new(11, 5));
    }

    #[test]
    fn action_indices() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
        }
        assert_eq!(Action::from_index(5), None);
    }
}
