//! DoorKey gridworld with a fully observable symbolic encoding.
//!
//! The grid is `size × size` with a border of walls and one interior wall
//! column. The door sits on that column and starts locked; the key and the
//! agent start in the left chamber, the goal is somewhere in the right one.
//!
//! Observation channels, per cell:
//!
//! | object | id | color  | id | state                              |
//! |--------|----|--------|----|------------------------------------|
//! | empty  | 0  | none   | 0  | 0                                  |
//! | wall   | 1  | grey   | 1  | 0                                  |
//! | door   | 2  | yellow | 2  | 0 open, 1 closed, 2 locked         |
//! | key    | 3  | yellow | 2  | 0                                  |
//! | goal   | 4  | green  | 3  | 0                                  |
//! | agent  | 5  | red    | 4  | facing: 0 east, 1 south, 2 west, 3 north |
//!
//! The agent overwrites whatever is under it (only empty floor or an open
//! door can be under the agent).

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorers::EventTag;

pub const NUM_ACTIONS: usize = 5;
pub const SUPPORTED_SIZES: [usize; 4] = [6, 8, 12, 16];

pub mod ids {
    pub const EMPTY: u8 = 0;
    pub const WALL: u8 = 1;
    pub const DOOR: u8 = 2;
    pub const KEY: u8 = 3;
    pub const GOAL: u8 = 4;
    pub const AGENT: u8 = 5;

    pub const COLOR_NONE: u8 = 0;
    pub const COLOR_GREY: u8 = 1;
    pub const COLOR_YELLOW: u8 = 2;
    pub const COLOR_GREEN: u8 = 3;
    pub const COLOR_RED: u8 = 4;

    pub const DOOR_OPEN: u8 = 0;
    pub const DOOR_CLOSED: u8 = 1;
    pub const DOOR_LOCKED: u8 = 2;
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("unsupported grid size {0}; expected one of 6, 8, 12, 16")]
    InvalidSize(usize),
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error("no action sequence reaches the goal")]
    Unsolvable,
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Left = 0,
    Right = 1,
    Forward = 2,
    Pickup = 3,
    Toggle = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Left,
        Action::Right,
        Action::Forward,
        Action::Pickup,
        Action::Toggle,
    ];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    East = 0,
    South = 1,
    West = 2,
    North = 3,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::East, Direction::South, Direction::West, Direction::North];

    fn from_index(i: usize) -> Direction {
        Self::ALL[i % 4]
    }

    pub fn turn_left(self) -> Direction {
        Self::from_index(self as usize + 3)
    }

    pub fn turn_right(self) -> Direction {
        Self::from_index(self as usize + 1)
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
            Direction::North => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }

    fn ahead(self, dir: Direction) -> Pos {
        let (dr, dc) = dir.delta();
        // Border walls keep the agent away from row/col 0, so this never wraps.
        Pos {
            row: (self.row as isize + dr) as usize,
            col: (self.col as isize + dc) as usize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Pos,
    pub dir: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoorState {
    Locked,
    ClosedUnlocked,
    Open,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Door {
    pub pos: Pos,
    pub state: DoorState,
}

/// Full world state. Serializes to JSON for regression fixtures.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub size: usize,
    pub wall_col: usize,
    pub agent: Pose,
    pub key_pos: Option<Pos>,
    pub door: Door,
    pub goal_pos: Pos,
    pub carrying_key: bool,
    pub step: u32,
    pub max_steps: u32,
    #[serde(default)]
    pub ended: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    size: usize,
    data: Vec<u8>,
}

impl Observation {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.size, self.size, 3]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.data[(row * self.size + col) * 3 + channel]
    }

    pub fn cell(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.size + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 64-bit FNV-1a digest of the encoding; stable across platforms and runs.
    pub fn key(&self) -> StateKey {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in &self.data {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        StateKey(h)
    }
}

/// Hashed observation; the key used by tabular learners and the replay store.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey(pub u64);

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub events: EventTag,
}

pub fn default_max_steps(size: usize) -> u32 {
    (10 * size * size) as u32
}

fn check_size(size: usize) -> Result<(), EnvError> {
    if SUPPORTED_SIZES.contains(&size) {
        Ok(())
    } else {
        Err(EnvError::InvalidSize(size))
    }
}

/// Seeded layout: every random choice comes from `seed`.
pub fn reset(seed: u64, size: usize) -> Result<(GridState, Observation), EnvError> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = generate_layout(&mut rng, size);
    place_agent(&mut state, &mut rng);
    let obs = state.encode();
    Ok((state, obs))
}

/// Walls, door, key and goal drawn from `layout_seed`; the agent's start pose
/// from `start_seed`. Used when training over a fixed pool of layouts.
pub fn reset_in_layout(layout_seed: u64, start_seed: u64, size: usize) -> Result<(GridState, Observation), EnvError> {
    check_size(size)?;
    let mut layout_rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let mut state = generate_layout(&mut layout_rng, size);
    let mut start_rng = ChaCha8Rng::seed_from_u64(start_seed ^ 0x5DEE_CE66_D1CE_5EED);
    place_agent(&mut state, &mut start_rng);
    let obs = state.encode();
    Ok((state, obs))
}

fn generate_layout(rng: &mut ChaCha8Rng, size: usize) -> GridState {
    // Interior spans 1..=size-2; the wall column leaves at least one column
    // on each side.
    let wall_col = rng.gen_range(2..=size - 3);
    let door_row = rng.gen_range(1..=size - 2);
    let key_pos = Pos::new(rng.gen_range(1..=size - 2), rng.gen_range(1..wall_col));
    let goal_pos = Pos::new(rng.gen_range(1..=size - 2), rng.gen_range(wall_col + 1..=size - 2));
    GridState {
        size,
        wall_col,
        agent: Pose {
            pos: Pos::new(1, 1),
            dir: Direction::East,
        },
        key_pos: Some(key_pos),
        door: Door {
            pos: Pos::new(door_row, wall_col),
            state: DoorState::Locked,
        },
        goal_pos,
        carrying_key: false,
        step: 0,
        max_steps: default_max_steps(size),
        ended: false,
    }
}

fn place_agent(state: &mut GridState, rng: &mut ChaCha8Rng) {
    let key = state.key_pos.expect("fresh layout has a key");
    let pos = loop {
        let p = Pos::new(rng.gen_range(1..=state.size - 2), rng.gen_range(1..state.wall_col));
        if p != key {
            break p;
        }
    };
    state.agent = Pose {
        pos,
        dir: Direction::from_index(rng.gen_range(0..4)),
    };
}

impl GridState {
    pub fn with_max_steps(mut self, max_steps: u32) -> Self {
        self.max_steps = max_steps;
        self
    }

    fn is_wall(&self, p: Pos) -> bool {
        p.row == 0
            || p.col == 0
            || p.row + 1 >= self.size
            || p.col + 1 >= self.size
            || (p.col == self.wall_col && p != self.door.pos)
    }

    pub fn is_over(&self) -> bool {
        self.ended
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.ended {
            return Err(EnvError::EpisodeOver);
        }
        self.step += 1;
        let mut events = EventTag::default();
        let mut reward = 0.0;
        let mut terminated = false;
        let front = self.agent.pos.ahead(self.agent.dir);

        match action {
            Action::Left => self.agent.dir = self.agent.dir.turn_left(),
            Action::Right => self.agent.dir = self.agent.dir.turn_right(),
            Action::Forward => {
                let blocked = self.is_wall(front)
                    || (front == self.door.pos && self.door.state != DoorState::Open)
                    || self.key_pos == Some(front);
                if !blocked {
                    self.agent.pos = front;
                    if front == self.goal_pos {
                        terminated = true;
                        reward = 1.0 - 0.9 * (self.step as f64 / self.max_steps as f64);
                        events.goal_reached = true;
                    }
                }
            }
            Action::Pickup => {
                if self.key_pos == Some(front) && !self.carrying_key {
                    self.key_pos = None;
                    self.carrying_key = true;
                    events.key_picked_up = true;
                } else {
                    events.distractor = true;
                }
            }
            Action::Toggle => {
                if front == self.door.pos {
                    match self.door.state {
                        DoorState::Locked if self.carrying_key => {
                            self.door.state = DoorState::Open;
                            events.door_opened = true;
                        }
                        DoorState::Locked => events.distractor = true,
                        DoorState::Open => self.door.state = DoorState::ClosedUnlocked,
                        DoorState::ClosedUnlocked => {
                            self.door.state = DoorState::Open;
                            events.door_opened = true;
                        }
                    }
                } else {
                    events.distractor = true;
                }
            }
        }

        let truncated = !terminated && self.step >= self.max_steps;
        self.ended = terminated || truncated;
        Ok(StepResult {
            obs: self.encode(),
            reward,
            terminated,
            truncated,
            events,
        })
    }

    pub fn encode(&self) -> Observation {
        use ids::*;
        let n = self.size;
        let mut data = vec![0u8; n * n * 3];
        let mut put = |p: Pos, cell: [u8; 3]| {
            let i = (p.row * n + p.col) * 3;
            data[i..i + 3].copy_from_slice(&cell);
        };
        for r in 0..n {
            for c in 0..n {
                let p = Pos::new(r, c);
                if self.is_wall(p) {
                    put(p, [WALL, COLOR_GREY, 0]);
                }
            }
        }
        let door_state = match self.door.state {
            DoorState::Open => DOOR_OPEN,
            DoorState::ClosedUnlocked => DOOR_CLOSED,
            DoorState::Locked => DOOR_LOCKED,
        };
        put(self.door.pos, [DOOR, COLOR_YELLOW, door_state]);
        if let Some(k) = self.key_pos {
            put(k, [KEY, COLOR_YELLOW, 0]);
        }
        put(self.goal_pos, [GOAL, COLOR_GREEN, 0]);
        put(self.agent.pos, [AGENT, COLOR_RED, self.agent.dir as u8]);
        Observation { size: n, data }
    }

    /// Checks the structural invariants of a loaded or hand-built state.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidLayout(m.to_string()));
        check_size(self.size)?;
        let n = self.size;
        let interior = |p: Pos| p.row >= 1 && p.col >= 1 && p.row + 2 <= n && p.col + 2 <= n;
        if self.wall_col < 2 || self.wall_col > n - 3 {
            return bad("wall column out of range");
        }
        if self.door.pos.col != self.wall_col || !interior(self.door.pos) {
            return bad("door must lie on the wall column");
        }
        if !interior(self.goal_pos) || self.goal_pos.col <= self.wall_col {
            return bad("goal must be in the right chamber");
        }
        if !interior(self.agent.pos) || self.is_wall(self.agent.pos) {
            return bad("agent must stand on a free interior cell");
        }
        if self.key_pos.is_some() == self.carrying_key {
            return bad("key must be either on the floor or carried");
        }
        if let Some(k) = self.key_pos {
            if !interior(k) || self.is_wall(k) || k == self.agent.pos {
                return bad("key must be on a free interior cell");
            }
        }
        if self.door.state != DoorState::Locked && !self.carrying_key {
            return bad("door can only be unlocked with the key");
        }
        if self.step > self.max_steps {
            return bad("step counter exceeds the step limit");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid state serializes")
    }

    pub fn from_json(s: &str) -> Result<GridState, EnvError> {
        let state: GridState = serde_json::from_str(s).map_err(|e| EnvError::InvalidLayout(e.to_string()))?;
        state.validate()?;
        Ok(state)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct SearchNode {
    pos: Pos,
    dir: Direction,
    carrying: bool,
    door: DoorState,
}

/// Shortest action sequence to the goal, by breadth-first search over
/// (pose, carrying, door state). Ignores the step limit.
pub fn solve_optimal(state: &GridState) -> Result<Vec<Action>, EnvError> {
    use std::collections::HashMap;

    let start = SearchNode {
        pos: state.agent.pos,
        dir: state.agent.dir,
        carrying: state.carrying_key,
        door: state.door.state,
    };
    let key_at = |n: &SearchNode| if n.carrying { None } else { state.key_pos };

    let mut parent: HashMap<SearchNode, (SearchNode, Action)> = HashMap::new();
    let mut queue = VecDeque::from([start]);
    let mut seen = std::collections::HashSet::from([start]);

    while let Some(node) = queue.pop_front() {
        for action in Action::ALL {
            let mut next = node;
            let front = node.pos.ahead(node.dir);
            let mut reached_goal = false;
            match action {
                Action::Left => next.dir = node.dir.turn_left(),
                Action::Right => next.dir = node.dir.turn_right(),
                Action::Forward => {
                    let blocked = state.is_wall(front)
                        || (front == state.door.pos && node.door != DoorState::Open)
                        || key_at(&node) == Some(front);
                    if blocked {
                        continue;
                    }
                    next.pos = front;
                    reached_goal = front == state.goal_pos;
                }
                Action::Pickup => {
                    if node.carrying || key_at(&node) != Some(front) {
                        continue;
                    }
                    next.carrying = true;
                }
                Action::Toggle => {
                    if front != state.door.pos {
                        continue;
                    }
                    next.door = match node.door {
                        DoorState::Locked if node.carrying => DoorState::Open,
                        DoorState::Locked => continue,
                        DoorState::Open => DoorState::ClosedUnlocked,
                        DoorState::ClosedUnlocked => DoorState::Open,
                    };
                }
            }
            if reached_goal {
                let mut plan = vec![action];
                let mut cur = node;
                while let Some(&(prev, a)) = parent.get(&cur) {
                    plan.push(a);
                    cur = prev;
                }
                plan.reverse();
                return Ok(plan);
            }
            if seen.insert(next) {
                parent.insert(next, (node, action));
                queue.push_back(next);
            }
        }
    }
    Err(EnvError::Unsolvable)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_state() -> GridState {
        // 6x6, wall at column 3, door at (2,3), key at (3,1), goal at (4,4).
        GridState {
            size: 6,
            wall_col: 3,
            agent: Pose {
                pos: Pos::new(1, 1),
                dir: Direction::East,
            },
            key_pos: Some(Pos::new(3, 1)),
            door: Door {
                pos: Pos::new(2, 3),
                state: DoorState::Locked,
            },
            goal_pos: Pos::new(4, 4),
            carrying_key: false,
            step: 0,
            max_steps: default_max_steps(6),
            ended: false,
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let (a, oa) = reset(7, 8).unwrap();
        let (b, ob) = reset(7, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert_eq!(oa.shape(), [8, 8, 3]);
        assert_eq!(oa.as_slice().len(), 8 * 8 * 3);
    }

    #[test]
    fn reset_rejects_unsupported_size() {
        assert_eq!(reset(0, 7).unwrap_err(), EnvError::InvalidSize(7));
        assert_eq!(reset(0, 5).unwrap_err(), EnvError::InvalidSize(5));
    }

    #[test]
    fn fresh_layouts_satisfy_invariants() {
        for size in SUPPORTED_SIZES {
            for seed in 0..200 {
                let (s, _) = reset(seed, size).unwrap();
                s.validate().unwrap();
                assert_eq!(s.door.state, DoorState::Locked);
                assert!(!s.carrying_key);
                assert!(s.agent.pos.col < s.wall_col);
                assert!(s.goal_pos.col > s.wall_col);
            }
        }
    }

    #[test]
    fn toggle_locked_door_without_key_does_nothing() {
        let mut s = fixed_state();
        s.agent = Pose {
            pos: Pos::new(2, 2),
            dir: Direction::East,
        };
        let r = s.step(Action::Toggle).unwrap();
        assert_eq!(s.door.state, DoorState::Locked);
        assert!(!r.events.door_opened && !r.events.key_picked_up && !r.events.goal_reached);
        assert!(r.events.distractor);
    }

    #[test]
    fn door_cycle_with_key() {
        let mut s = fixed_state();
        s.key_pos = None;
        s.carrying_key = true;
        s.agent = Pose {
            pos: Pos::new(2, 2),
            dir: Direction::East,
        };
        assert!(s.step(Action::Toggle).unwrap().events.door_opened);
        assert_eq!(s.door.state, DoorState::Open);
        assert!(!s.step(Action::Toggle).unwrap().events.door_opened);
        assert_eq!(s.door.state, DoorState::ClosedUnlocked);
        // Closed door blocks movement.
        s.step(Action::Forward).unwrap();
        assert_eq!(s.agent.pos, Pos::new(2, 2));
        assert!(s.step(Action::Toggle).unwrap().events.door_opened);
        s.step(Action::Forward).unwrap();
        assert_eq!(s.agent.pos, Pos::new(2, 3));
        // The door is still recorded as carried-through.
        assert!(s.carrying_key);
    }

    #[test]
    fn key_blocks_forward_and_pickup_clears_it() {
        let mut s = fixed_state();
        s.agent = Pose {
            pos: Pos::new(2, 1),
            dir: Direction::South,
        };
        s.step(Action::Forward).unwrap();
        assert_eq!(s.agent.pos, Pos::new(2, 1));
        let r = s.step(Action::Pickup).unwrap();
        assert!(r.events.key_picked_up);
        assert!(s.carrying_key && s.key_pos.is_none());
        let r = s.step(Action::Pickup).unwrap();
        assert!(!r.events.key_picked_up);
        s.step(Action::Forward).unwrap();
        assert_eq!(s.agent.pos, Pos::new(3, 1));
    }

    #[test]
    fn goal_reward_decays_with_steps() {
        let mut s = fixed_state().with_max_steps(640);
        s.key_pos = None;
        s.carrying_key = true;
        s.door.state = DoorState::Open;
        s.agent = Pose {
            pos: Pos::new(3, 4),
            dir: Direction::South,
        };
        s.step = 99;
        let r = s.step(Action::Forward).unwrap();
        assert!(r.terminated && !r.truncated);
        assert!(r.events.goal_reached);
        // 1 - 0.9 * 100 / 640
        assert_eq!(r.reward, 0.859375);
        assert_eq!(s.step(Action::Left).unwrap_err(), EnvError::EpisodeOver);
    }

    #[test]
    fn step_limit_truncates_with_zero_reward() {
        let mut s = fixed_state().with_max_steps(3);
        assert!(!s.step(Action::Left).unwrap().truncated);
        assert!(!s.step(Action::Left).unwrap().truncated);
        let r = s.step(Action::Left).unwrap();
        assert!(r.truncated && !r.terminated);
        assert_eq!(r.reward, 0.0);
        assert!(s.is_over());
    }

    #[test]
    fn goal_on_last_step_terminates_not_truncates() {
        let mut s = fixed_state().with_max_steps(5);
        s.key_pos = None;
        s.carrying_key = true;
        s.door.state = DoorState::Open;
        s.agent = Pose {
            pos: Pos::new(3, 4),
            dir: Direction::South,
        };
        s.step = 4;
        let r = s.step(Action::Forward).unwrap();
        assert!(r.terminated && !r.truncated);
    }

    #[test]
    fn encoding_locality_of_door_state() {
        let locked = fixed_state();
        let mut open = fixed_state();
        open.door.state = DoorState::Open;
        let (a, b) = (locked.encode(), open.encode());
        let mut diffs = vec![];
        for r in 0..6 {
            for c in 0..6 {
                if a.cell(r, c) != b.cell(r, c) {
                    diffs.push((r, c));
                }
            }
        }
        assert_eq!(diffs, vec![(2, 3)]);
        assert_eq!(a.cell(2, 3), [ids::DOOR, ids::COLOR_YELLOW, ids::DOOR_LOCKED]);
        assert_eq!(b.cell(2, 3), [ids::DOOR, ids::COLOR_YELLOW, ids::DOOR_OPEN]);
    }

    #[test]
    fn encoding_cells() {
        let s = fixed_state();
        let o = s.encode();
        assert_eq!(o.cell(2, 2), [ids::EMPTY, 0, 0]);
        assert_eq!(o.cell(0, 0), [ids::WALL, ids::COLOR_GREY, 0]);
        assert_eq!(o.cell(1, 1), [ids::AGENT, ids::COLOR_RED, Direction::East as u8]);
        assert_eq!(o.cell(3, 1), [ids::KEY, ids::COLOR_YELLOW, 0]);
        assert_eq!(o.cell(4, 4), [ids::GOAL, ids::COLOR_GREEN, 0]);
        assert_eq!(s.clone().encode(), o);
        assert_eq!(s.encode().key(), o.key());
    }

    #[test]
    fn plan_structure() {
        let s = fixed_state();
        let plan = solve_optimal(&s).unwrap();
        assert_eq!(plan.iter().filter(|a| **a == Action::Pickup).count(), 1);
        assert!(plan.contains(&Action::Toggle));
        let mut sim = s.clone();
        let mut last = None;
        for a in &plan {
            last = Some(sim.step(*a).unwrap());
        }
        let last = last.unwrap();
        assert!(last.terminated && last.reward > 0.0);
    }

    #[test]
    fn hand_counted_plan_length() {
        // Agent (1,1) facing east. Key at (3,1): right (face south), forward to
        // (2,1), pickup. Then left (east), forward to (2,2), toggle door at
        // (2,3), forward x2 to (2,4), right (south), forward x2 to (4,4).
        let plan = solve_optimal(&fixed_state()).unwrap();
        assert_eq!(plan.len(), 11);
    }

    #[test]
    fn json_round_trip() {
        let (s, _) = reset(3, 8).unwrap();
        let back = GridState::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
        let mut broken = s.clone();
        broken.door.pos.col = 1;
        assert!(GridState::from_json(&broken.to_json()).is_err());
    }
}
