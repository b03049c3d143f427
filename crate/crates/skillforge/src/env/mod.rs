//! Deterministic gridworld domains.
//!
//! Seven canonical rooms mirror the tasks the learning stack is evaluated
//! on: two navigation rooms (`nav1` with identical walls everywhere, so
//! distinct states can look alike; `nav2` with occluding interior
//! obstacles), single-skill `pickup`, `break`, and `placement` rooms, a
//! `two_room` transfer domain, and a three-room `complex` domain chaining
//! navigate -> pickup -> break -> place behind one sparse terminal reward.
//!
//! Dynamics are pure: `(state, action)` fully determines the next state,
//! and an episode replays bit-identically from a seed and action list.

mod maps;
mod observe;
pub mod planner;

pub use maps::{load_map_file, parse_map};
pub use observe::{Frame, Observation, CHANNELS, CROP, FRAME_LEN, OBS_LEN, STACK};

use rand::Rng;

use crate::error::{Error, Result};

/// Default per-step penalty.
pub const STEP_REWARD: f64 = -0.04;
/// Default terminal success reward.
pub const GOAL_REWARD: f64 = 1.0;

/// Static tile categories. Spawn-region markers in map files normalize to
/// `Floor` and are tracked separately in the spec's spawn list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tile {
    Wall,
    Floor,
    Exit,
    Item,
    Door,
    Goal,
}

/// The six primitive actions, in fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Break,
    Pickup,
    Place,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Break,
        Action::Pickup,
        Action::Place,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::TurnLeft => 1,
            Action::TurnRight => 2,
            Action::Break => 3,
            Action::Pickup => 4,
            Action::Place => 5,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }
}

/// Axis-aligned facing direction. Rotations move in 90-degree steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }

    pub fn from_index(i: usize) -> Heading {
        Heading::ALL[i]
    }

    /// World-space (row, col) delta one step ahead.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn left(self) -> Heading {
        Heading::from_index((self.index() + 3) % 4)
    }

    pub fn right(self) -> Heading {
        Heading::from_index((self.index() + 1) % 4)
    }
}

/// What ends an episode successfully.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Stand on the designated exit cell.
    ReachExit { row: usize, col: usize },
    /// Hold the item.
    Pickup,
    /// Break the door.
    Break,
    /// Place the carried block on the goal pad.
    Place,
}

/// A fully resolved domain: layout, rewards, limits, and task.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    tiles: Vec<Tile>,
    /// Cells the agent may start on.
    pub spawn_cells: Vec<(usize, usize)>,
    pub step_limit: u32,
    pub step_reward: f64,
    pub goal_reward: f64,
    /// Extra reward for a forward step that strictly reduces Manhattan
    /// distance to the item. Zero in all domains except `pickup`.
    pub approach_bonus: f64,
    pub task: TaskKind,
    /// Whether episodes start with the block already in hand.
    pub spawn_carrying: bool,
    pub item_cell: Option<(usize, usize)>,
    pub door_cell: Option<(usize, usize)>,
    pub goal_cell: Option<(usize, usize)>,
}

impl DomainSpec {
    pub fn tile(&self, row: usize, col: usize) -> Tile {
        self.tiles[row * self.cols + col]
    }

    /// Tile as it currently looks: out-of-bounds is wall, a consumed item
    /// or broken door is floor.
    fn effective_tile(&self, state: &WorldState, row: i64, col: i64) -> Tile {
        if row < 0 || col < 0 || row >= self.rows as i64 || col >= self.cols as i64 {
            return Tile::Wall;
        }
        let (row, col) = (row as usize, col as usize);
        match self.tile(row, col) {
            Tile::Item if !state.item_present => Tile::Floor,
            Tile::Door if state.door_broken => Tile::Floor,
            t => t,
        }
    }

    fn passable(&self, state: &WorldState, row: i64, col: i64) -> bool {
        matches!(
            self.effective_tile(state, row, col),
            Tile::Floor | Tile::Exit
        )
    }

    fn task_met(&self, state: &WorldState) -> bool {
        match self.task {
            TaskKind::ReachExit { row, col } => state.row == row && state.col == col,
            TaskKind::Pickup => state.carrying && self.item_cell.is_some(),
            TaskKind::Break => state.door_broken,
            TaskKind::Place => state.placed,
        }
    }
}

/// The complete dynamic state of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub row: usize,
    pub col: usize,
    pub heading: Heading,
    pub carrying: bool,
    pub door_broken: bool,
    pub item_present: bool,
    pub placed: bool,
    pub steps: u32,
}

/// Outcome of one primitive step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
    pub success: bool,
}

/// Position, heading, and flags after an action; step counting, rewards,
/// and termination live in [`GridEnv::step`]. Shared with the planner.
pub(crate) fn apply_dynamics(spec: &DomainSpec, s: &WorldState, action: Action) -> WorldState {
    let mut next = *s;
    let (dr, dc) = s.heading.delta();
    let (fr, fc) = (s.row as i64 + dr, s.col as i64 + dc);
    // The cell the agent faces, if it is on the grid.
    let facing = (fr >= 0 && fc >= 0 && fr < spec.rows as i64 && fc < spec.cols as i64)
        .then_some((fr as usize, fc as usize));
    match action {
        Action::Forward => {
            if spec.passable(s, fr, fc) {
                next.row = fr as usize;
                next.col = fc as usize;
            }
        }
        Action::TurnLeft => next.heading = s.heading.left(),
        Action::TurnRight => next.heading = s.heading.right(),
        Action::Break => {
            if !s.door_broken && facing.is_some() && facing == spec.door_cell {
                next.door_broken = true;
            }
        }
        Action::Pickup => {
            if s.item_present && !s.carrying && facing.is_some() && facing == spec.item_cell {
                next.item_present = false;
                next.carrying = true;
            }
        }
        Action::Place => {
            if s.carrying && facing.is_some() && facing == spec.goal_cell {
                next.carrying = false;
                next.placed = true;
            }
        }
    }
    next
}

pub(crate) fn task_met(spec: &DomainSpec, state: &WorldState) -> bool {
    spec.task_met(state)
}

/// The episode-start state for a given spawn cell and heading.
pub fn initial_state(spec: &DomainSpec, (row, col): (usize, usize), heading: Heading) -> WorldState {
    WorldState {
        row,
        col,
        heading,
        carrying: spec.spawn_carrying,
        door_broken: false,
        item_present: spec.item_cell.is_some(),
        placed: false,
        steps: 0,
    }
}

/// Loads one of the seven canonical domains by name.
pub fn make_domain(name: &str) -> Result<DomainSpec> {
    let text = match name {
        "nav1" => include_str!("../../assets/domains/nav1.map"),
        "nav2" => include_str!("../../assets/domains/nav2.map"),
        "pickup" => include_str!("../../assets/domains/pickup.map"),
        "break" => include_str!("../../assets/domains/break.map"),
        "placement" => include_str!("../../assets/domains/placement.map"),
        "two_room" => include_str!("../../assets/domains/two_room.map"),
        "complex" => include_str!("../../assets/domains/complex.map"),
        other => return Err(Error::UnknownDomain(other.to_string())),
    };
    parse_map(text, &format!("<builtin:{name}>"))
}

/// One running episode: a spec plus the current state and frame history.
#[derive(Debug, Clone)]
pub struct GridEnv {
    spec: DomainSpec,
    state: Option<WorldState>,
    history: Option<Observation>,
    terminal: bool,
}

impl GridEnv {
    pub fn new(spec: DomainSpec) -> Self {
        GridEnv {
            spec,
            state: None,
            history: None,
            terminal: false,
        }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn state(&self) -> &WorldState {
        self.state.as_ref().expect("environment not reset yet")
    }

    /// Starts an episode at a random spawn cell and heading.
    pub fn reset<R: Rng>(&mut self, rng: &mut R) -> Observation {
        let cell = self.spec.spawn_cells[rng.gen_range(0..self.spec.spawn_cells.len())];
        let heading = Heading::from_index(rng.gen_range(0..4));
        self.reset_to(cell, heading)
    }

    /// Starts an episode at an explicit cell and heading. The cell must be
    /// a spawnable floor cell.
    pub fn reset_to(&mut self, (row, col): (usize, usize), heading: Heading) -> Observation {
        assert!(
            self.spec.spawn_cells.contains(&(row, col)),
            "({row}, {col}) is not a spawnable cell of {}",
            self.spec.name
        );
        let state = initial_state(&self.spec, (row, col), heading);
        let obs = Observation::initial(observe::render_frame(&self.spec, &state));
        self.state = Some(state);
        self.history = Some(obs);
        self.terminal = false;
        obs
    }

    /// Current four-frame observation.
    pub fn observation(&self) -> Observation {
        *self.history.as_ref().expect("environment not reset yet")
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Applies one primitive action. Panics if the episode is over.
    pub fn step(&mut self, action: Action) -> StepResult {
        assert!(!self.terminal, "episode is over; call reset");
        let s = *self.state.as_ref().expect("environment not reset yet");
        let mut next = apply_dynamics(&self.spec, &s, action);
        next.steps = s.steps + 1;

        let mut reward = self.spec.step_reward;
        if self.spec.approach_bonus != 0.0 && action == Action::Forward && s.item_present {
            let (ir, ic) = self.spec.item_cell.expect("bonus requires an item");
            let before = s.row.abs_diff(ir) + s.col.abs_diff(ic);
            let after = next.row.abs_diff(ir) + next.col.abs_diff(ic);
            if after < before {
                reward += self.spec.approach_bonus;
            }
        }

        let success = self.spec.task_met(&next);
        if success {
            reward = self.spec.goal_reward;
        }
        let terminal = success || next.steps >= self.spec.step_limit;

        let obs = self
            .history
            .expect("environment not reset yet")
            .push(observe::render_frame(&self.spec, &next));
        self.state = Some(next);
        self.history = Some(obs);
        self.terminal = terminal;
        StepResult {
            observation: obs,
            reward,
            terminal,
            success,
        }
    }
}

#[cfg(test)]
mod tests;
