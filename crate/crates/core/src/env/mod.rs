//! Gridworld navigation: maps, motion, the A* expert, egocentric rendering,
//! templated instructions, closed-loop episodes and the evaluation metrics.
//!
//! Coordinates are in cells. `y` grows upward, so the first text row of a map
//! file is the top (largest `y`). Heading `h` is `15°·h`, `h = 0` points `+x`
//! and positive turns are counterclockwise.

mod generate;
mod instruction;
mod map;
mod metrics;
mod planner;
mod render;

use std::fmt;

use thiserror::Error;

pub use generate::{generate_map, GeneratorConfig};
pub use instruction::{decode_instruction, gen_instruction, vocabulary, VOCAB_SIZE};
pub use map::{parse_map, Cell, Color, GridMap};
pub use metrics::{
    compute_metrics, dtw_distance, ndtw, stratify, EvalReference, Metrics, Stratum, StratumMetrics,
};
pub use planner::{expert_plan, plan_reference};
pub use render::{render_obs, FOV_DEGREES, MAX_VIEW_DISTANCE, RAYS};

use crate::encoders::ToyObservation;

pub const HEADINGS: u8 = 24;
pub const STEP_LENGTH: f64 = 0.25;
pub const SUCCESS_RADIUS: f64 = 0.36;
pub const MAX_STEPS: usize = 200;
pub const CHUNK: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("map line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no path from start to goal")]
    Unsolvable,
    #[error("start pose is not on the quarter-cell lattice")]
    OffLattice,
    #[error("results and references differ in length ({results} vs {references})")]
    LengthMismatch { results: usize, references: usize },
    #[error("metrics need at least one episode")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Forward = 0,
    Left = 1,
    Right = 2,
    Stop = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::Left, Action::Right, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Forward => "F",
            Action::Left => "L",
            Action::Right => "R",
            Action::Stop => "S",
        };
        f.write_str(s)
    }
}

/// Exactly four atomic actions emitted by one policy turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ActionChunk(pub [Action; CHUNK]);

impl ActionChunk {
    /// Chunk a plan into turns, padding the final chunk with `Stop`.
    pub fn chunk_plan(plan: &[Action]) -> Vec<ActionChunk> {
        plan.chunks(CHUNK)
            .map(|c| {
                let mut out = [Action::Stop; CHUNK];
                out[..c.len()].copy_from_slice(c);
                ActionChunk(out)
            })
            .collect()
    }

    pub fn indices(&self) -> [usize; CHUNK] {
        self.0.map(Action::index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub heading: u8,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, heading: u8) -> Self {
        AgentPose {
            x,
            y,
            heading: heading % HEADINGS,
        }
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        (self.x - p.0).hypot(self.y - p.1)
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Unit vector for a heading index; exact at the four cardinal headings.
pub fn heading_vector(h: u8) -> (f64, f64) {
    match h % HEADINGS {
        0 => (1.0, 0.0),
        6 => (0.0, 1.0),
        12 => (-1.0, 0.0),
        18 => (0.0, -1.0),
        h => {
            let a = (f64::from(h) * 15.0).to_radians();
            (a.cos(), a.sin())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub pose: AgentPose,
    pub blocked: bool,
}

pub fn step_env(map: &GridMap, pose: AgentPose, action: Action) -> StepOutcome {
    let turned = |h: u8| StepOutcome {
        pose: AgentPose { heading: h, ..pose },
        blocked: false,
    };
    match action {
        Action::Left => turned((pose.heading + 1) % HEADINGS),
        Action::Right => turned((pose.heading + HEADINGS - 1) % HEADINGS),
        Action::Stop => turned(pose.heading),
        Action::Forward => {
            let (dx, dy) = heading_vector(pose.heading);
            let (nx, ny) = (pose.x + STEP_LENGTH * dx, pose.y + STEP_LENGTH * dy);
            if map.is_free_point(nx, ny) {
                turned(pose.heading).with_position(nx, ny)
            } else {
                StepOutcome { pose, blocked: true }
            }
        }
    }
}

impl StepOutcome {
    fn with_position(mut self, x: f64, y: f64) -> Self {
        self.pose.x = x;
        self.pose.y = y;
        self
    }
}

/// Anything that maps an observation stream to action chunks.
pub trait NavPolicy {
    type Error;

    fn begin(&mut self, instruction: &[u32]) -> Result<(), Self::Error>;
    fn act(&mut self, obs: &ToyObservation) -> Result<ActionChunk, Self::Error>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub path: Vec<AgentPose>,
    pub steps: usize,
    pub stop_issued: bool,
    pub collided: bool,
    pub final_distance: f64,
    /// Goal distance at every pose of `path`.
    pub distances: Vec<f64>,
    pub success: bool,
}

impl EpisodeResult {
    /// Executed path length in cells.
    pub fn path_length(&self) -> f64 {
        self.path
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

pub fn run_episode<P: NavPolicy>(
    policy: &mut P,
    map: &GridMap,
    instruction: &[u32],
    max_steps: usize,
    success_radius: f64,
) -> Result<EpisodeResult, P::Error> {
    policy.begin(instruction)?;
    let goal = map.goal();
    let mut pose = map.start();
    let mut path = vec![pose];
    let (mut stop_issued, mut collided) = (false, false);
    'outer: while path.len() - 1 < max_steps {
        let chunk = policy.act(&render_obs(map, pose))?;
        for action in chunk.0 {
            if path.len() - 1 >= max_steps {
                break 'outer;
            }
            let out = step_env(map, pose, action);
            pose = out.pose;
            path.push(pose);
            if action == Action::Stop {
                stop_issued = true;
                break 'outer;
            }
            if out.blocked {
                collided = true;
                break 'outer;
            }
        }
    }
    let distances: Vec<f64> = path.iter().map(|p| p.distance_to(goal)).collect();
    let final_distance = *distances.last().expect("path holds the start pose");
    Ok(EpisodeResult {
        steps: path.len() - 1,
        success: stop_issued && !collided && final_distance <= success_radius,
        path,
        stop_issued,
        collided,
        final_distance,
        distances,
    })
}

/// Replays a fixed action list, four actions per turn.
pub struct ScriptedPolicy {
    actions: Vec<Action>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        ScriptedPolicy { actions, cursor: 0 }
    }

    pub fn always(action: Action) -> Self {
        ScriptedPolicy::new(vec![action; MAX_STEPS.max(1) * 8])
    }
}

impl NavPolicy for ScriptedPolicy {
    type Error = std::convert::Infallible;

    fn begin(&mut self, _instruction: &[u32]) -> Result<(), Self::Error> {
        self.cursor = 0;
        Ok(())
    }

    fn act(&mut self, _obs: &ToyObservation) -> Result<ActionChunk, Self::Error> {
        let mut chunk = [Action::Stop; CHUNK];
        for slot in &mut chunk {
            if let Some(&a) = self.actions.get(self.cursor) {
                *slot = a;
            }
            self.cursor += 1;
        }
        Ok(ActionChunk(chunk))
    }
}

#[cfg(test)]
mod tests;
