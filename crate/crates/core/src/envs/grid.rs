use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{discrete_action, one_hot, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::nn::Action;
use crate::rng::{self, StreamRng};

const STEP_PENALTY: f64 = 0.05;
const GOAL_REWARD: f64 = 1.0;
/// Row and column offsets for up, right, down, left.
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridLayout {
    /// −0.05 per step, +1 on the step that reaches the goal.
    Dense,
    /// +1 on reaching the goal, nothing otherwise.
    Sparse,
    /// Sparse reward with a wall down the middle column and one door.
    TwoRoom,
}

impl GridLayout {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" => Ok(Self::Sparse),
            "two_room" => Ok(Self::TwoRoom),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown grid layout '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Sparse => "sparse",
            Self::TwoRoom => "two_room",
        }
    }
}

/// Square grid, start in the top-left corner, goal in the bottom-right.
/// Moves into walls or off the grid leave the agent in place. With
/// probability `slip` the chosen action is replaced by a uniformly random one.
pub struct Gridworld {
    size: usize,
    layout: GridLayout,
    slip: f64,
    wall: Vec<bool>,
    pos: usize,
    steps: usize,
    spec: EnvSpec,
    rng: StreamRng,
}

impl Gridworld {
    pub fn new(size: usize, layout: GridLayout, slip: f64, seed: u64) -> Result<Self> {
        if size < 3 {
            return Err(Error::InvalidArgument("grid size must be at least 3".into()));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::InvalidArgument("slip must lie in [0, 1]".into()));
        }
        let mut wall = vec![false; size * size];
        if layout == GridLayout::TwoRoom {
            if size < 5 {
                return Err(Error::InvalidArgument("two-room layout needs size at least 5".into()));
            }
            let col = size / 2;
            for row in (0..size).filter(|&r| r != size / 2) {
                wall[row * size + col] = true;
            }
        }
        let spec = EnvSpec {
            obs_dim: size * size,
            action_space: ActionSpace::Discrete(4),
            step_cap: 4 * size * size,
            obs_range: (0.0, 1.0),
            reward_range: Some(match layout {
                GridLayout::Dense => (-STEP_PENALTY, GOAL_REWARD),
                _ => (0.0, GOAL_REWARD),
            }),
        };
        Ok(Self { size, layout, slip, wall, pos: 0, steps: 0, spec, rng: rng::stream(seed, 0) })
    }

    pub fn with_step_cap(mut self, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("step cap must be positive".into()));
        }
        self.spec.step_cap = cap;
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn goal(&self) -> usize {
        self.size * self.size - 1
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn moved(&self, pos: usize, a: usize) -> usize {
        let (dr, dc) = MOVES[a];
        let r = (pos / self.size) as isize + dr;
        let c = (pos % self.size) as isize + dc;
        let n = self.size as isize;
        if r < 0 || c < 0 || r >= n || c >= n {
            return pos;
        }
        let next = (r * n + c) as usize;
        if self.wall[next] {
            pos
        } else {
            next
        }
    }

    fn reward(&self, next: usize) -> f64 {
        match (next == self.goal(), self.layout) {
            (true, _) => GOAL_REWARD,
            (false, GridLayout::Dense) => -STEP_PENALTY,
            (false, _) => 0.0,
        }
    }

    /// Fewest moves from start to goal, ignoring slip.
    pub fn shortest_path(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.size * self.size];
        let mut queue = VecDeque::from([0usize]);
        dist[0] = 0;
        while let Some(p) = queue.pop_front() {
            if p == self.goal() {
                return Some(dist[p]);
            }
            for a in 0..4 {
                let q = self.moved(p, a);
                if dist[q] == usize::MAX {
                    dist[q] = dist[p] + 1;
                    queue.push_back(q);
                }
            }
        }
        None
    }

    /// Best expected undiscounted return from the start within the step cap,
    /// by backward induction over the remaining-steps horizon.
    pub fn optimal_return(&self) -> f64 {
        let cells = self.size * self.size;
        let mut v = vec![0.0; cells];
        for _ in 0..self.spec.step_cap {
            let mut next = vec![0.0; cells];
            for (p, slot) in next.iter_mut().enumerate() {
                if p == self.goal() || self.wall[p] {
                    continue;
                }
                let outcome = |a: usize| {
                    let q = self.moved(p, a);
                    self.reward(q) + if q == self.goal() { 0.0 } else { v[q] }
                };
                let slipped = (0..4).map(outcome).sum::<f64>() / 4.0;
                *slot = (0..4)
                    .map(|a| (1.0 - self.slip) * outcome(a) + self.slip * slipped)
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v = next;
        }
        v[0]
    }
}

impl Environment for Gridworld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.pos = 0;
        self.steps = 0;
        one_hot(self.size * self.size, 0)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let mut a = discrete_action(action, 4)?;
        if self.slip > 0.0 && self.rng.random::<f64>() < self.slip {
            a = self.rng.random_range(0..4);
        }
        self.pos = self.moved(self.pos, a);
        self.steps += 1;
        let terminal = self.pos == self.goal();
        Ok(StepResult {
            obs: one_hot(self.size * self.size, self.pos),
            reward: self.reward(self.pos),
            terminal,
            truncated: !terminal && self.steps >= self.spec.step_cap,
        })
    }
}
