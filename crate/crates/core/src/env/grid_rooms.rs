//! Grid world whose floor is divided into `k` room types. Navigation has
//! three primitives (turn left, turn right, forward) duplicated once per
//! room type; only the copy belonging to the room the agent stands in is
//! accepted.
//!
//! Action index `3 * j + m` is primitive `m` of room type `j`, so in room
//! type `j` exactly `{3j, 3j + 1, 3j + 2}` are valid.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec, Environment, Feedback, FeedbackStep, ValidityOracle, DEFAULT_GAMMA};
use crate::nn::Tensor;

pub const DEFAULT_GRID_MAX_STEPS: u32 = 200;
pub const VIEW_SIZE: usize = 7;
pub const STACKED_FRAMES: usize = 3;

const DEFAULT_8X8: &str = include_str!("../../data/grid_rooms_8x8.txt");
const DEFAULT_5X5: &str = include_str!("../../data/grid_rooms_5x5.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Floor(u8),
    Goal,
}

/// Facing direction; `x` grows to the east, `y` to the south.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    East,
    South,
    West,
    North,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::East, Direction::South, Direction::West, Direction::North];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn left(self) -> Self {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
            Direction::North => (0, -1),
        }
    }
}

/// The three navigation primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    TurnLeft,
    TurnRight,
    Forward,
}

impl Move {
    pub const ALL: [Move; 3] = [Move::TurnLeft, Move::TurnRight, Move::Forward];

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 3]
    }
}

/// Static map: walls, floor room types and the goal cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    room_types: usize,
    goal: (usize, usize),
}

impl GridLayout {
    /// Parses the plain-text map format: one character per cell, `#` wall,
    /// `.` floor of room type 0, `0`-`9` floor of that room type, `G` goal.
    /// Blank lines are ignored. The number of room types is one more than
    /// the largest digit used.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(EnvError::Layout("map is empty".into()));
        }
        let width = rows[0].chars().count();
        let mut cells = Vec::with_capacity(width * rows.len());
        let mut goal = None;
        let mut max_room = 0u8;
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::Layout(format!(
                    "row {y} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, ch) in row.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Floor(0),
                    'G' => {
                        if goal.replace((x, y)).is_some() {
                            return Err(EnvError::Layout("more than one goal cell".into()));
                        }
                        Cell::Goal
                    }
                    d if d.is_ascii_digit() => {
                        let r = d as u8 - b'0';
                        max_room = max_room.max(r);
                        Cell::Floor(r)
                    }
                    other => {
                        return Err(EnvError::Layout(format!("unknown cell {other:?} at ({x}, {y})")));
                    }
                };
                cells.push(cell);
            }
        }
        let goal = goal.ok_or_else(|| EnvError::Layout("no goal cell".into()))?;
        let layout = Self {
            width,
            height: rows.len(),
            cells,
            room_types: max_room as usize + 1,
            goal,
        };
        layout.check_reachability()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// 8x8, five room types.
    pub fn default_8x8() -> Self {
        Self::parse(DEFAULT_8X8).expect("built-in layout is valid")
    }

    /// 5x5, two room types; small enough for exact value iteration.
    pub fn small_5x5() -> Self {
        Self::parse(DEFAULT_5X5).expect("built-in layout is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn room_types(&self) -> usize {
        self.room_types
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    /// Cell at signed coordinates; anything outside the map is a wall.
    pub fn cell(&self, x: isize, y: isize) -> Cell {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            Cell::Wall
        } else {
            self.cells[y as usize * self.width + x as usize]
        }
    }

    pub fn room_at(&self, pos: (usize, usize)) -> Option<usize> {
        match self.cell(pos.0 as isize, pos.1 as isize) {
            Cell::Floor(r) => Some(r as usize),
            _ => None,
        }
    }

    /// Floor cells, excluding the goal, in row-major order.
    pub fn start_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| matches!(self.cells[y * self.width + x], Cell::Floor(_)))
            .collect()
    }

    /// Every floor cell must connect to the goal through non-wall cells;
    /// since turning is always possible, that makes the goal reachable with
    /// valid actions only from every start.
    fn check_reachability(&self) -> Result<(), EnvError> {
        let starts = self.start_cells();
        if starts.is_empty() {
            return Err(EnvError::Layout("no free start cell".into()));
        }
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([self.goal]);
        seen[self.goal.1 * self.width + self.goal.0] = true;
        while let Some((x, y)) = queue.pop_front() {
            for d in Direction::ALL {
                let (dx, dy) = d.delta();
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if let Cell::Floor(_) = self.cell(nx, ny) {
                    let i = ny as usize * self.width + nx as usize;
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back((nx as usize, ny as usize));
                    }
                }
            }
        }
        if let Some(&(x, y)) = starts.iter().find(|&&(x, y)| !seen[y * self.width + x]) {
            return Err(EnvError::Layout(format!("cell ({x}, {y}) cannot reach the goal")));
        }
        Ok(())
    }

    /// Deterministic dynamics of one accepted primitive:
    /// returns the new pose and whether the goal was entered.
    pub fn apply(&self, pos: (usize, usize), dir: Direction, mv: Move) -> ((usize, usize), Direction, bool) {
        match mv {
            Move::TurnLeft => (pos, dir.left(), false),
            Move::TurnRight => (pos, dir.right(), false),
            Move::Forward => {
                let (dx, dy) = dir.delta();
                let (nx, ny) = (pos.0 as isize + dx, pos.1 as isize + dy);
                match self.cell(nx, ny) {
                    Cell::Wall => (pos, dir, false),
                    Cell::Floor(_) => ((nx as usize, ny as usize), dir, false),
                    Cell::Goal => ((nx as usize, ny as usize), dir, true),
                }
            }
        }
    }

    /// Channels of one encoded view: wall, goal, floor, one per room type,
    /// orientation.
    pub fn frame_channels(&self) -> usize {
        3 + self.room_types + 1
    }

    /// Egocentric 7x7 view, agent at the bottom centre looking "up".
    /// Returns `[channels, 7, 7]` flattened.
    pub fn encode_view(&self, pos: (usize, usize), dir: Direction) -> Vec<f32> {
        let c = self.frame_channels();
        let plane = VIEW_SIZE * VIEW_SIZE;
        let mut out = vec![0.0f32; c * plane];
        let (fx, fy) = dir.delta();
        let (rx, ry) = dir.right().delta();
        let agent_row = VIEW_SIZE - 1;
        let agent_col = VIEW_SIZE / 2;
        for vr in 0..VIEW_SIZE {
            for vc in 0..VIEW_SIZE {
                let f = (agent_row - vr) as isize;
                let l = vc as isize - agent_col as isize;
                let wx = pos.0 as isize + f * fx + l * rx;
                let wy = pos.1 as isize + f * fy + l * ry;
                let at = vr * VIEW_SIZE + vc;
                match self.cell(wx, wy) {
                    Cell::Wall => out[at] = 1.0,
                    Cell::Goal => out[plane + at] = 1.0,
                    Cell::Floor(r) => {
                        out[2 * plane + at] = 1.0;
                        out[(3 + r as usize) * plane + at] = 1.0;
                    }
                }
            }
        }
        out[(c - 1) * plane + agent_row * VIEW_SIZE + agent_col] = (dir.index() + 1) as f32 / 4.0;
        out
    }
}

impl fmt::Display for GridLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                let ch = match self.cells[y * self.width + x] {
                    Cell::Wall => '#',
                    Cell::Goal => 'G',
                    Cell::Floor(r) => (b'0' + r) as char,
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Mutable part of a grid episode.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRoomsState {
    pub pos: (usize, usize),
    pub dir: Direction,
    pub steps: u32,
    pub done: bool,
    /// Last three encoded views, oldest first.
    pub frames: VecDeque<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct GridRooms {
    layout: Arc<GridLayout>,
    max_steps: u32,
    state: GridRoomsState,
    rejections: u64,
}

impl GridRooms {
    pub fn new(layout: GridLayout, max_steps: u32) -> Result<Self, EnvError> {
        if max_steps == 0 {
            return Err(EnvError::Layout("max_steps must be positive".into()));
        }
        let start = layout.start_cells()[0];
        let view = layout.encode_view(start, Direction::East);
        let state = GridRoomsState {
            pos: start,
            dir: Direction::East,
            steps: 0,
            done: false,
            frames: VecDeque::from(vec![view; STACKED_FRAMES]),
        };
        let mut env = Self {
            layout: Arc::new(layout),
            max_steps,
            state,
            rejections: 0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn state(&self) -> &GridRoomsState {
        &self.state
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    /// Starts an episode at an explicit pose (frame stack filled with the
    /// first view, step counter zero).
    pub fn start_at(&mut self, pos: (usize, usize), dir: Direction) -> Result<Tensor<f32>, EnvError> {
        if !matches!(self.layout.cell(pos.0 as isize, pos.1 as isize), Cell::Floor(_)) {
            return Err(EnvError::Layout(format!("({}, {}) is not a free floor cell", pos.0, pos.1)));
        }
        let view = self.layout.encode_view(pos, dir);
        self.state = GridRoomsState {
            pos,
            dir,
            steps: 0,
            done: false,
            frames: VecDeque::from(vec![view; STACKED_FRAMES]),
        };
        Ok(self.observation())
    }

    /// Valid action group for the agent's current cell.
    pub fn current_room(&self) -> usize {
        self.layout.room_at(self.state.pos).unwrap_or(0)
    }
}

impl Environment for GridRooms {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            action_count: 3 * self.layout.room_types,
            observation_shape: vec![STACKED_FRAMES * self.layout.frame_channels(), VIEW_SIZE, VIEW_SIZE],
            max_steps: self.max_steps,
            gamma: DEFAULT_GAMMA,
        }
    }

    /// Uniformly random free cell and heading, fully determined by `seed`.
    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let starts = self.layout.start_cells();
        let pos = starts[rng.gen_range(0..starts.len())];
        let dir = Direction::from_index(rng.gen_range(0..4));
        self.start_at(pos, dir).expect("start cells are free floor")
    }

    fn step(&mut self, action: usize) -> Result<FeedbackStep, EnvError> {
        let count = 3 * self.layout.room_types;
        if action >= count {
            return Err(EnvError::ActionOutOfRange { action, count });
        }
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        self.state.steps += 1;
        let timeout = self.state.steps >= self.max_steps;
        if action / 3 != self.current_room() {
            self.rejections += 1;
            self.state.done = timeout;
            return Ok(FeedbackStep {
                observation: self.observation(),
                reward: 0.0,
                done: timeout,
                feedback: Feedback::Rejected,
            });
        }
        let (pos, dir, goal) = self.layout.apply(self.state.pos, self.state.dir, Move::from_index(action));
        self.state.pos = pos;
        self.state.dir = dir;
        self.state.frames.pop_front();
        self.state.frames.push_back(self.layout.encode_view(pos, dir));
        self.state.done = goal || timeout;
        Ok(FeedbackStep {
            observation: self.observation(),
            reward: if goal { 1.0 } else { 0.0 },
            done: self.state.done,
            feedback: Feedback::Valid,
        })
    }

    fn observation(&self) -> Tensor<f32> {
        let data: Vec<f32> = self.state.frames.iter().flatten().copied().collect();
        let shape = self.spec().observation_shape;
        Tensor::new(shape, data).expect("frame stack matches observation shape")
    }

    fn rejection_count(&self) -> u64 {
        self.rejections
    }
}

impl ValidityOracle for GridRooms {
    fn valid_actions(&self) -> Vec<usize> {
        let j = self.current_room();
        vec![3 * j, 3 * j + 1, 3 * j + 2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> GridRooms {
        GridRooms::new(GridLayout::default_8x8(), DEFAULT_GRID_MAX_STEPS).unwrap()
    }

    #[test]
    fn default_layout_has_fifteen_actions() {
        let e = env();
        assert_eq!(e.layout().room_types(), 5);
        assert_eq!(e.spec().action_count, 15);
        assert_eq!(e.spec().observation_shape, vec![27, 7, 7]);
        assert_eq!(e.spec().max_steps, 200);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = env();
        let mut b = env();
        assert_eq!(a.reset(17), b.reset(17));
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn resets_cover_every_start_cell() {
        let mut e = env();
        let starts = e.layout().start_cells();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..1000 {
            e.reset(seed);
            seen.insert(e.state().pos);
        }
        assert_eq!(seen.len(), starts.len());
    }

    #[test]
    fn foreign_group_is_rejected_without_side_effects() {
        let mut e = env();
        // (1, 1) is room type 0.
        let before = e.start_at((1, 1), Direction::South).unwrap();
        let s = e.step(5).unwrap();
        assert_eq!(s.feedback, Feedback::Rejected);
        assert_eq!(s.reward, 0.0);
        assert_eq!(s.observation, before);
        assert_eq!(e.state().pos, (1, 1));
        assert_eq!(e.state().steps, 1);
        assert_eq!(e.rejection_count(), 1);
    }

    #[test]
    fn room_type_three_accepts_nine_to_eleven() {
        let mut e = env();
        // (4, 3) is room type 3.
        let mut accepted = Vec::new();
        for a in 0..15 {
            e.start_at((4, 3), Direction::North).unwrap();
            if e.step(a).unwrap().feedback == Feedback::Valid {
                accepted.push(a);
            }
        }
        assert_eq!(accepted, vec![9, 10, 11]);
        e.start_at((4, 3), Direction::North).unwrap();
        assert_eq!(e.valid_actions(), vec![9, 10, 11]);
    }

    #[test]
    fn forward_into_goal_ends_with_reward() {
        let mut e = env();
        // Goal at (6, 6); (5, 6) is room type 3, facing east.
        e.start_at((5, 6), Direction::East).unwrap();
        let s = e.step(3 * 3 + 2).unwrap();
        assert_eq!(s.feedback, Feedback::Valid);
        assert_eq!(s.reward, 1.0);
        assert!(s.done);
        assert!(matches!(e.step(9), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn out_of_range_action_is_an_error() {
        let mut e = env();
        assert!(matches!(e.step(15), Err(EnvError::ActionOutOfRange { action: 15, count: 15 })));
    }

    #[test]
    fn step_cap_forces_done() {
        let mut e = GridRooms::new(GridLayout::default_8x8(), 5).unwrap();
        e.start_at((1, 1), Direction::North).unwrap();
        for i in 0..5 {
            let s = e.step(14).unwrap();
            assert_eq!(s.done, i == 4);
        }
    }

    #[test]
    fn view_outside_grid_is_wall() {
        let layout = GridLayout::default_8x8();
        let v = layout.encode_view((1, 1), Direction::North);
        // Looking north from the top row: everything two or more cells ahead
        // is outside the map.
        assert!(v[..VIEW_SIZE].iter().all(|&x| x == 1.0));
        let c = layout.frame_channels();
        assert_eq!(c * 3, 27);
        // Agent cell shows floor of room type 0 and the heading.
        let plane = VIEW_SIZE * VIEW_SIZE;
        let at = 6 * VIEW_SIZE + 3;
        assert_eq!(v[2 * plane + at], 1.0);
        assert_eq!(v[3 * plane + at], 1.0);
        assert_eq!(v[(c - 1) * plane + at], 1.0);
    }

    #[test]
    fn frame_stack_order() {
        let mut e = env();
        let layout = e.layout().clone();
        e.start_at((1, 1), Direction::East).unwrap();
        let v0 = layout.encode_view((1, 1), Direction::East);
        e.step(1).unwrap(); // turn right
        let v1 = layout.encode_view((1, 1), Direction::South);
        e.step(2).unwrap(); // forward
        let v2 = layout.encode_view((1, 2), Direction::South);
        let obs = e.observation();
        let n = v0.len();
        assert_eq!(&obs.data()[..n], v0.as_slice());
        assert_eq!(&obs.data()[n..2 * n], v1.as_slice());
        assert_eq!(&obs.data()[2 * n..], v2.as_slice());
    }

    #[test]
    fn layout_errors() {
        assert!(GridLayout::parse("###\n#0#\n###\n").is_err()); // no goal
        assert!(GridLayout::parse("#####\n#0#G#\n#####\n").is_err()); // unreachable
        assert!(GridLayout::parse("####\n#GG#\n####\n").is_err());
        assert!(GridLayout::parse("###\n#G#\n###\n").is_err()); // no start cell
        assert!(GridLayout::parse("#####\n#0x1G\n").is_err());
        let small = GridLayout::small_5x5();
        assert_eq!(small.room_types(), 2);
        assert_eq!(small.to_string(), DEFAULT_5X5);
    }
}
