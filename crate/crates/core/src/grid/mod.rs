//! Partially observable gridworld: empty rooms, a random-goal room, and the
//! key / locked-door tasks.
//!
//! Coordinates are `(x, y)` with `x` growing east and `y` growing south; the
//! outer ring of cells is always wall.

mod layout;
mod view;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use view::{GridObservation, GRID_CHANNELS, GRID_OBS_DIM, GRID_OBS_LAYOUT, VIEW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Empty,
    EmptyRandom,
    Unlock,
    Doorkey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub variant: Variant,
    pub width: usize,
    pub height: usize,
    /// Episode step limit; `4 * width * height` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl GridConfig {
    pub fn new(variant: Variant, width: usize, height: usize) -> Self {
        Self {
            variant,
            width,
            height,
            max_steps: None,
        }
    }

    /// Named environments: `empty-5x5`, `empty-random-5x5`, `empty-16x16`,
    /// `unlock`, `doorkey-5x5`, `doorkey-8x8`.
    pub fn preset(name: &str) -> Result<Self> {
        let (v, w, h) = match name {
            "empty-5x5" => (Variant::Empty, 5, 5),
            "empty-random-5x5" => (Variant::EmptyRandom, 5, 5),
            "empty-16x16" => (Variant::Empty, 16, 16),
            "unlock" => (Variant::Unlock, 6, 6),
            "doorkey-5x5" => (Variant::Doorkey, 5, 5),
            "doorkey-8x8" => (Variant::Doorkey, 8, 8),
            _ => return Err(Error::config(alloc::format!("unknown grid environment `{name}`"))),
        };
        Ok(Self::new(v, w, h))
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps.unwrap_or(4 * self.width * self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 5 || self.height < 5 {
            return Err(Error::config(alloc::format!(
                "grid must be at least 5x5, got {}x{}",
                self.width,
                self.height
            )));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Grey,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Purple,
        Color::Yellow,
        Color::Grey,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Cell {
    Empty,
    Wall,
    Door { color: Color, state: DoorState },
    Key { color: Color },
    Goal,
}

impl Cell {
    pub fn is_opaque(self) -> bool {
        matches!(
            self,
            Cell::Wall
                | Cell::Door {
                    state: DoorState::Closed | DoorState::Locked,
                    ..
                }
        )
    }

    pub fn is_passable(self) -> bool {
        matches!(
            self,
            Cell::Empty
                | Cell::Goal
                | Cell::Door {
                    state: DoorState::Open,
                    ..
                }
        )
    }

    pub fn color(self) -> Option<Color> {
        match self {
            Cell::Empty => None,
            Cell::Wall => Some(Color::Grey),
            Cell::Goal => Some(Color::Green),
            Cell::Door { color, .. } | Cell::Key { color } => Some(color),
        }
    }
}

/// Agent heading; the discriminant is the number of clockwise quarter turns from east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    East = 0,
    South = 1,
    West = 2,
    North = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::East, Direction::South, Direction::West, Direction::North];

    pub fn forward(self) -> (i64, i64) {
        match self {
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
            Direction::North => (0, -1),
        }
    }

    /// Unit vector pointing to the agent's right.
    pub fn right(self) -> (i64, i64) {
        self.turn_right().forward()
    }

    pub fn turn_right(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    pub fn turn_left(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAction {
    TurnLeft = 0,
    TurnRight = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
    Done = 6,
}

impl GridAction {
    pub const COUNT: usize = 7;
    pub const ALL: [GridAction; 7] = [
        GridAction::TurnLeft,
        GridAction::TurnRight,
        GridAction::Forward,
        GridAction::Pickup,
        GridAction::Drop,
        GridAction::Toggle,
        GridAction::Done,
    ];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::usage(alloc::format!("grid action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Notable transitions, logged so traces can be aligned with what happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridEvent {
    PickedUpKey,
    DroppedKey,
    OpenedDoor,
    ClosedDoor,
    ReachedGoal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStep {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub event: Option<GridEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub width: usize,
    pub height: usize,
    pub variant: Variant,
    pub max_steps: usize,
    cells: Vec<Cell>,
    pub agent: (usize, usize),
    pub dir: Direction,
    /// Color of the carried key, if any.
    pub carrying: Option<Color>,
    pub step: usize,
    pub done: bool,
}

impl GridState {
    /// Generates the layout for `config` from `seed`.
    pub fn reset(config: &GridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        layout::generate(config, &mut crate::rng::seeded(seed))
    }

    pub(crate) fn blank(config: &GridConfig) -> Self {
        let (w, h) = (config.width, config.height);
        let mut cells = alloc::vec![Cell::Empty; w * h];
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    cells[y * w + x] = Cell::Wall;
                }
            }
        }
        Self {
            width: w,
            height: h,
            variant: config.variant,
            max_steps: config.max_steps(),
            cells,
            agent: (1, 1),
            dir: Direction::East,
            carrying: None,
            step: 0,
            done: false,
        }
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    /// Cell at signed coordinates; anything outside the grid reads as `None`.
    pub fn cell_at(&self, x: i64, y: i64) -> Option<Cell> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.cell(x as usize, y as usize))
        }
    }

    pub fn set_cell(&mut self, x: usize, y: usize, cell: Cell) {
        self.cells[y * self.width + x] = cell;
    }

    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), Cell)> + '_ {
        let w = self.width;
        self.cells.iter().enumerate().map(move |(i, c)| ((i % w, i / w), *c))
    }

    pub fn front(&self) -> (usize, usize) {
        let (dx, dy) = self.dir.forward();
        ((self.agent.0 as i64 + dx) as usize, (self.agent.1 as i64 + dy) as usize)
    }

    /// Number of keys in the world plus in hand.
    pub fn key_count(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, Cell::Key { .. })).count() + self.carrying.is_some() as usize
    }

    pub fn success_reward(&self) -> f64 {
        1.0 - 0.9 * (self.step as f64 / self.max_steps as f64)
    }

    pub fn step(&mut self, action: GridAction) -> Result<GridStep> {
        if self.done {
            return Err(Error::usage("step called on a finished grid episode"));
        }
        self.step += 1;
        let (fx, fy) = self.front();
        let ahead = self.cell(fx, fy);
        let mut event = None;
        let mut success = false;
        match action {
            GridAction::TurnLeft => self.dir = self.dir.turn_left(),
            GridAction::TurnRight => self.dir = self.dir.turn_right(),
            GridAction::Forward => {
                if ahead.is_passable() {
                    self.agent = (fx, fy);
                    if ahead == Cell::Goal {
                        success = true;
                        event = Some(GridEvent::ReachedGoal);
                    }
                }
            }
            GridAction::Pickup => {
                if let (Cell::Key { color }, None) = (ahead, self.carrying) {
                    self.carrying = Some(color);
                    self.set_cell(fx, fy, Cell::Empty);
                    event = Some(GridEvent::PickedUpKey);
                }
            }
            GridAction::Drop => {
                if let (Some(color), Cell::Empty) = (self.carrying, ahead) {
                    self.carrying = None;
                    self.set_cell(fx, fy, Cell::Key { color });
                    event = Some(GridEvent::DroppedKey);
                }
            }
            GridAction::Toggle => {
                if let Cell::Door { color, state } = ahead {
                    let next = match state {
                        DoorState::Locked if self.carrying == Some(color) => DoorState::Open,
                        DoorState::Locked => DoorState::Locked,
                        DoorState::Closed => DoorState::Open,
                        DoorState::Open => DoorState::Closed,
                    };
                    if next != state {
                        event = Some(if next == DoorState::Open {
                            GridEvent::OpenedDoor
                        } else {
                            GridEvent::ClosedDoor
                        });
                    }
                    self.set_cell(fx, fy, Cell::Door { color, state: next });
                    if self.variant == Variant::Unlock && next == DoorState::Open {
                        success = true;
                    }
                }
            }
            GridAction::Done => {}
        }
        let reward = if success { self.success_reward() } else { 0.0 };
        self.done = success || self.step >= self.max_steps;
        Ok(GridStep {
            reward,
            done: self.done,
            success,
            event,
        })
    }

    pub fn observe(&self) -> GridObservation {
        view::observe(self)
    }

    /// One line per row; see [`GridState::render`] for the character map.
    pub fn render(&self) -> String {
        alloc::format!("{self}")
    }
}

/// `#` wall, `.` empty, `G` goal, `K` key, `D` locked door, `d` closed door,
/// `/` open door, agent `>` `v` `<` `^` by heading.
impl fmt::Display for GridState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                let ch = if (x, y) == self.agent {
                    match self.dir {
                        Direction::East => '>',
                        Direction::South => 'v',
                        Direction::West => '<',
                        Direction::North => '^',
                    }
                } else {
                    match self.cell(x, y) {
                        Cell::Empty => '.',
                        Cell::Wall => '#',
                        Cell::Goal => 'G',
                        Cell::Key { .. } => 'K',
                        Cell::Door {
                            state: DoorState::Locked,
                            ..
                        } => 'D',
                        Cell::Door {
                            state: DoorState::Closed,
                            ..
                        } => 'd',
                        Cell::Door {
                            state: DoorState::Open, ..
                        } => '/',
                    }
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
