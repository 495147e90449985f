use crate::error::{Error, Result};
use crate::mathcore::{Rng, Tensor};

use super::{
    Action, Cell, EnvKind, Instruction, Observation, StepEvent, StepInfo, StepResult, CELL_PX,
    FAIL_REWARD, GOAL_REWARD, GRASP_REWARD, GRID, HORIZON, OBS_CHANNELS, OBS_SIZE, SHAPING_BETA,
    STEP_COST,
};

const TOOL: usize = 0;
const OBJECTS: usize = 1;
const MARKERS: usize = 2;

/// Ring offsets of the eight pegs around the board centre, row-major.
const PEG_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const PEG_SPACING: isize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rope {
    x: usize,
    top: usize,
    bottom: usize,
}

impl Rope {
    fn contains(&self, c: Cell) -> bool {
        c.x == self.x && (self.top..=self.bottom).contains(&c.y)
    }

    fn nearest(&self, from: Cell) -> Cell {
        Cell::new(self.x, from.y.clamp(self.top, self.bottom))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scene {
    Deflect {
        spheres: [Cell; 4],
    },
    Reach {
        landmarks: [Cell; 3],
        goal: Cell,
        carrying: bool,
    },
    Cut {
        ropes: [Rope; 4],
        cut: [bool; 4],
    },
    Thread {
        eyelets: [Cell; 3],
        visited: [bool; 3],
    },
    Place {
        torus: Cell,
        pegs: [Cell; 8],
        holding: bool,
    },
}

#[derive(Debug, Clone)]
struct Episode {
    scene: Scene,
    instruction: Instruction,
    tool: Cell,
    progress: usize,
    steps: u32,
    done: bool,
}

/// One environment instance; single owner.
#[derive(Debug, Clone)]
pub struct SurgEnv {
    kind: EnvKind,
    shaping: bool,
    episode: Option<Episode>,
}

fn random_cell(rng: &mut Rng, x0: usize, x_span: usize, y0: usize, y_span: usize) -> Cell {
    Cell::new(x0 + rng.below(x_span), y0 + rng.below(y_span))
}

/// Random cell in the 4×4 interior of quadrant `q` (row-major).
fn quadrant_cell(rng: &mut Rng, q: usize) -> Cell {
    random_cell(rng, (q % 2) * 6 + 1, 4, (q / 2) * 6 + 1, 4)
}

fn layout(kind: EnvKind, rng: &mut Rng) -> Scene {
    match kind {
        EnvKind::Deflect => {
            let spheres = std::array::from_fn(|i| quadrant_cell(rng, i));
            Scene::Deflect { spheres }
        }
        EnvKind::Reach => {
            // landmark i in quadrant i, the goal in the last quadrant
            let landmarks: [Cell; 3] = std::array::from_fn(|i| quadrant_cell(rng, i));
            let goal = quadrant_cell(rng, 3);
            Scene::Reach {
                landmarks,
                goal,
                carrying: false,
            }
        }
        EnvKind::Cut => {
            // rope i hangs the full height of column 3i+1; only the tool start varies
            let ropes = std::array::from_fn(|i| Rope {
                x: 3 * i + 1,
                top: 0,
                bottom: GRID - 1,
            });
            Scene::Cut {
                ropes,
                cut: [false; 4],
            }
        }
        EnvKind::Thread => {
            let eyelets = std::array::from_fn(|i| quadrant_cell(rng, i));
            Scene::Thread {
                eyelets,
                visited: [false; 3],
            }
        }
        EnvKind::Place => {
            // torus in the top-left corner, peg board centred lower right
            let torus = random_cell(rng, 0, 3, 0, 3);
            let centre = random_cell(rng, 6, 3, 6, 3);
            let pegs = PEG_OFFSETS.map(|(dx, dy)| {
                Cell::new(
                    (centre.x as isize + dx * PEG_SPACING) as usize,
                    (centre.y as isize + dy * PEG_SPACING) as usize,
                )
            });
            Scene::Place {
                torus,
                pegs,
                holding: false,
            }
        }
    }
}

fn kind_stream(kind: EnvKind) -> u64 {
    EnvKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64
}

fn draw_instruction(kind: EnvKind, seed: u64) -> Instruction {
    let mut rng = Rng::substream(seed, "instruction", kind_stream(kind));
    let mut pool: Vec<usize> = (0..kind.object_count()).collect();
    rng.shuffle(&mut pool);
    pool.truncate(kind.sequence_len());
    Instruction {
        task: kind,
        target_sequence: pool,
        object_count: kind.object_count(),
    }
}

impl Scene {
    fn occupied(&self, c: Cell) -> bool {
        match self {
            Scene::Deflect { spheres } => spheres.contains(&c),
            Scene::Reach {
                landmarks, goal, ..
            } => landmarks.contains(&c) || *goal == c,
            Scene::Cut { ropes, .. } => ropes.iter().any(|r| r.contains(c)),
            Scene::Thread { eyelets, .. } => eyelets.contains(&c),
            Scene::Place { torus, pegs, .. } => *torus == c || pegs.contains(&c),
        }
    }
}

impl SurgEnv {
    pub fn new(kind: EnvKind, shaping: bool) -> Self {
        SurgEnv {
            kind,
            shaping,
            episode: None,
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    /// Starts an episode. The layout and the instruction come from independent
    /// substreams of `seed`.
    pub fn reset(&mut self, seed: u64) -> (Observation, Instruction) {
        let instruction = draw_instruction(self.kind, seed);
        self.reset_with_instruction(seed, instruction)
            .expect("drawn instruction is valid")
    }

    /// Starts an episode with the layout of `seed` and an explicit instruction.
    pub fn reset_with_instruction(
        &mut self,
        seed: u64,
        instruction: Instruction,
    ) -> Result<(Observation, Instruction)> {
        if instruction.task != self.kind {
            return Err(Error::Config(format!(
                "instruction for {} given to {}",
                instruction.task, self.kind
            )));
        }
        instruction.validate()?;
        let mut rng = Rng::substream(seed, "layout", kind_stream(self.kind));
        let scene = layout(self.kind, &mut rng);
        let mut tool = random_cell(&mut rng, 0, GRID, 0, GRID);
        while scene.occupied(tool) {
            tool = random_cell(&mut rng, 0, GRID, 0, GRID);
        }
        self.episode = Some(Episode {
            scene,
            instruction: instruction.clone(),
            tool,
            progress: 0,
            steps: 0,
            done: false,
        });
        Ok((self.render(), instruction))
    }

    fn ep(&self) -> &Episode {
        self.episode.as_ref().expect("reset before use")
    }

    /// False until the first reset.
    pub fn has_episode(&self) -> bool {
        self.episode.is_some()
    }

    pub fn instruction(&self) -> &Instruction {
        &self.ep().instruction
    }

    pub fn tool_cell(&self) -> Cell {
        self.ep().tool
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn steps(&self) -> u32 {
        self.ep().steps
    }

    /// Cell the tool must reach next, nearest to the tool when the goal spans
    /// several cells.
    pub fn current_goal(&self) -> Cell {
        let ep = self.ep();
        let seq = &ep.instruction.target_sequence;
        let next = seq[ep.progress.min(seq.len() - 1)];
        match &ep.scene {
            Scene::Deflect { spheres } => spheres[next],
            Scene::Cut { ropes, .. } => ropes[next].nearest(ep.tool),
            Scene::Thread { eyelets, .. } => eyelets[next],
            Scene::Reach {
                landmarks,
                goal,
                carrying,
            } => {
                if *carrying {
                    *goal
                } else {
                    landmarks[next]
                }
            }
            Scene::Place {
                torus,
                pegs,
                holding,
            } => {
                if *holding {
                    pegs[next]
                } else {
                    *torus
                }
            }
        }
    }

    /// Every cell the instruction requires the tool to act on, in this layout.
    pub fn goal_cells(&self) -> Vec<Cell> {
        let ep = self.ep();
        let seq = &ep.instruction.target_sequence;
        match &ep.scene {
            Scene::Deflect { spheres } => seq.iter().map(|&i| spheres[i]).collect(),
            Scene::Cut { ropes, .. } => seq
                .iter()
                .flat_map(|&i| {
                    let r = ropes[i];
                    (r.top..=r.bottom).map(move |y| Cell::new(r.x, y))
                })
                .collect(),
            Scene::Thread { eyelets, .. } => seq.iter().map(|&i| eyelets[i]).collect(),
            Scene::Reach {
                landmarks, goal, ..
            } => vec![landmarks[seq[0]], *goal],
            Scene::Place { torus, pegs, .. } => vec![*torus, pegs[seq[0]]],
        }
    }

    fn goal_distance(&self) -> f64 {
        self.ep().tool.manhattan(self.current_goal()) as f64
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        let d_prev = self.goal_distance();
        let ep = self.episode.as_mut().expect("checked above");
        ep.steps += 1;

        let (mut reward, event) = if action == Action::Interact {
            interact(ep)
        } else {
            ep.tool = ep.tool.moved(action);
            carry(ep);
            match &ep.scene {
                // the thread head passes through an eyelet by entering it
                Scene::Thread { .. } => match interact(ep) {
                    (_, StepEvent::Idle | StepEvent::OutOfOrder) => (STEP_COST, StepEvent::Moved),
                    hit => hit,
                },
                _ => (STEP_COST, StepEvent::Moved),
            }
        };
        let success = ep.progress == ep.instruction.target_sequence.len();
        let mut done = success || event == StepEvent::Failed;
        let mut event = event;
        if !done && ep.steps >= HORIZON {
            done = true;
            event = StepEvent::TimedOut;
        }
        ep.done = done;

        if self.shaping && !done {
            reward += SHAPING_BETA * (d_prev - self.goal_distance());
        }
        Ok(StepResult {
            observation: self.render(),
            reward,
            done,
            success,
            info: StepInfo {
                tool_cell: self.tool_cell(),
                event,
            },
        })
    }

    /// Action of a scripted agent that reads the instruction; solves every layout.
    pub fn oracle_action(&self) -> Action {
        let ep = self.ep();
        let tool = ep.tool;
        let goal = self.current_goal();
        let ready = match &ep.scene {
            Scene::Reach { carrying: true, .. } => tool.chebyshev(goal) <= 1,
            _ => tool == goal,
        };
        if ready {
            return Action::Interact;
        }
        if tool.x < goal.x {
            Action::Right
        } else if tool.x > goal.x {
            Action::Left
        } else if tool.y < goal.y {
            Action::Down
        } else {
            Action::Up
        }
    }

    /// Rasterizes the current state: 2×2 pixels per cell.
    pub fn render(&self) -> Observation {
        let ep = self.ep();
        let mut obs = Tensor::zeros(&[OBS_CHANNELS, OBS_SIZE, OBS_SIZE]);
        let data = obs.data_mut();
        let mut paint = |channel: usize, c: Cell, value: f64| {
            for dy in 0..CELL_PX {
                for dx in 0..CELL_PX {
                    let (py, px) = (c.y * CELL_PX + dy, c.x * CELL_PX + dx);
                    let slot = &mut data[(channel * OBS_SIZE + py) * OBS_SIZE + px];
                    *slot = slot.max(value);
                }
            }
        };
        paint(TOOL, ep.tool, 1.0);
        match &ep.scene {
            Scene::Deflect { spheres } => spheres.iter().for_each(|&s| paint(OBJECTS, s, 1.0)),
            Scene::Reach {
                landmarks,
                goal,
                carrying,
            } => {
                let carried = ep.instruction.target_sequence[0];
                for (i, &l) in landmarks.iter().enumerate() {
                    let value = if *carrying && i == carried { 0.5 } else { 1.0 };
                    paint(OBJECTS, l, value);
                }
                paint(MARKERS, *goal, 1.0);
            }
            Scene::Cut { ropes, cut } => {
                // a severed rope stays visible as a marker
                for (r, &c) in ropes.iter().zip(cut) {
                    let channel = if c { MARKERS } else { OBJECTS };
                    for y in r.top..=r.bottom {
                        paint(channel, Cell::new(r.x, y), 1.0);
                    }
                }
            }
            Scene::Thread { eyelets, visited } => {
                for (&e, &v) in eyelets.iter().zip(visited) {
                    paint(OBJECTS, e, if v { 0.5 } else { 1.0 });
                }
            }
            Scene::Place {
                torus,
                pegs,
                holding,
            } => {
                paint(OBJECTS, *torus, if *holding { 0.5 } else { 1.0 });
                pegs.iter().for_each(|&p| paint(MARKERS, p, 1.0));
            }
        }
        obs
    }
}

/// Drags a held object along with the tool.
fn carry(ep: &mut Episode) {
    let tool = ep.tool;
    let target = ep.instruction.target_sequence[0];
    match &mut ep.scene {
        Scene::Reach {
            landmarks,
            carrying: true,
            ..
        } => landmarks[target] = tool,
        Scene::Place {
            torus,
            holding: true,
            ..
        } => *torus = tool,
        _ => {}
    }
}

fn interact(ep: &mut Episode) -> (f64, StepEvent) {
    let tool = ep.tool;
    let seq = ep.instruction.target_sequence.clone();
    let next = seq.get(ep.progress).copied();
    let advance = |ep: &mut Episode| {
        ep.progress += 1;
        (GOAL_REWARD, StepEvent::Advanced)
    };
    match &mut ep.scene {
        Scene::Deflect { spheres } => match spheres.iter().position(|&s| s == tool) {
            Some(i) if Some(i) == next => advance(ep),
            Some(_) => (FAIL_REWARD, StepEvent::Failed),
            None => (STEP_COST, StepEvent::Idle),
        },
        Scene::Cut { ropes, cut } => match (0..4).find(|&i| !cut[i] && ropes[i].contains(tool)) {
            Some(i) if Some(i) == next => {
                cut[i] = true;
                advance(ep)
            }
            Some(_) => (FAIL_REWARD, StepEvent::Failed),
            None => (STEP_COST, StepEvent::Idle),
        },
        Scene::Thread { eyelets, visited } => match eyelets.iter().position(|&e| e == tool) {
            Some(i) if Some(i) == next => {
                visited[i] = true;
                advance(ep)
            }
            Some(_) => (STEP_COST, StepEvent::OutOfOrder),
            None => (STEP_COST, StepEvent::Idle),
        },
        Scene::Reach {
            landmarks,
            goal,
            carrying,
        } => {
            let target = seq[0];
            if *carrying {
                if tool.chebyshev(*goal) <= 1 {
                    advance(ep)
                } else {
                    (STEP_COST, StepEvent::Idle)
                }
            } else if landmarks[target] == tool {
                *carrying = true;
                (GRASP_REWARD, StepEvent::Grasped)
            } else {
                (STEP_COST, StepEvent::Idle)
            }
        }
        Scene::Place {
            torus,
            pegs,
            holding,
        } => {
            if !*holding {
                if *torus == tool {
                    *holding = true;
                    (GRASP_REWARD, StepEvent::Grasped)
                } else {
                    (STEP_COST, StepEvent::Idle)
                }
            } else {
                match pegs.iter().position(|&p| p == tool) {
                    Some(i) if Some(i) == next => advance(ep),
                    Some(_) => (FAIL_REWARD, StepEvent::Failed),
                    None => (STEP_COST, StepEvent::Idle),
                }
            }
        }
    }
}
