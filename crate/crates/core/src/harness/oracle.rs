use std::collections::HashMap;

use serde::Serialize;

use super::HarnessError;
use crate::agent::greedy_action;
use crate::env::{Direction, Environment, GridLayout, GridRooms, Move};
use crate::nn::{Network, Real};

/// Largest state space the tabular oracle will enumerate.
pub const ORACLE_STATE_LIMIT: usize = 100_000;
/// Value iteration stops once no entry moves by more than this.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

pub type Pose = ((usize, usize), Direction);

/// Dense `state × action` table over the poses of a grid layout (every
/// non-goal floor cell in each of the four orientations).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QTable {
    pub states: Vec<Pose>,
    pub action_count: usize,
    pub values: Vec<f64>,
    pub sweeps: usize,
    #[serde(skip)]
    index: HashMap<Pose, usize>,
}

impl QTable {
    pub fn state_index(&self, pose: Pose) -> Option<usize> {
        self.index.get(&pose).copied()
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.action_count..(state + 1) * self.action_count]
    }

    pub fn q(&self, pose: Pose, action: usize) -> Option<f64> {
        self.state_index(pose).map(|s| self.row(s)[action])
    }
}

fn valid_group(layout: &GridLayout, pos: (usize, usize)) -> usize {
    layout.room_at(pos).expect("poses sit on floor cells")
}

/// Exact `Q*` by value iteration over valid actions only. Rejected actions
/// are filled in afterwards with the self-loop relation
/// `Q(s, a⁻) = γ · max_a Q(s, a)`.
pub fn value_iteration_oracle(layout: &GridLayout, gamma: f64) -> Result<QTable, HarnessError> {
    let cells = layout.start_cells();
    let n = cells.len() * 4;
    if n > ORACLE_STATE_LIMIT {
        return Err(HarnessError::TooLarge {
            states: n,
            limit: ORACLE_STATE_LIMIT,
        });
    }
    let actions = 3 * layout.room_types();
    let states: Vec<Pose> = cells
        .iter()
        .flat_map(|&c| Direction::ALL.into_iter().map(move |d| (c, d)))
        .collect();
    let index: HashMap<Pose, usize> = states.iter().enumerate().map(|(i, p)| (*p, i)).collect();

    // Successor of every (state, move): Some(next state) or None for the goal.
    let successors: Vec<[Option<usize>; 3]> = states
        .iter()
        .map(|&(pos, dir)| {
            Move::ALL.map(|mv| {
                let (p, d, goal) = layout.apply(pos, dir, mv);
                (!goal).then(|| index[&(p, d)])
            })
        })
        .collect();

    let mut v = vec![0.0f64; n];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut residual: f64 = 0.0;
        for s in 0..n {
            let best = successors[s]
                .iter()
                .map(|next| next.map_or(1.0, |t| gamma * v[t]))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - v[s]).abs());
            v[s] = best;
        }
        if residual < ORACLE_TOLERANCE {
            break;
        }
    }

    let mut values = vec![0.0; n * actions];
    for (s, &(pos, _)) in states.iter().enumerate() {
        let j = valid_group(layout, pos);
        let row = &mut values[s * actions..(s + 1) * actions];
        row.fill(gamma * v[s]);
        for (m, next) in successors[s].iter().enumerate() {
            row[3 * j + m] = next.map_or(1.0, |t| gamma * v[t]);
        }
    }
    Ok(QTable {
        states,
        action_count: actions,
        values,
        sweeps,
        index,
    })
}

/// Length of the greedy path under `table` from `start`, or `None` if it
/// does not reach the goal within `limit` steps.
pub fn table_path_length(layout: &GridLayout, table: &QTable, start: Pose, limit: u32) -> Option<u32> {
    let (mut pos, mut dir) = start;
    for step in 1..=limit {
        let row = table.row(table.state_index((pos, dir))?);
        let a = greedy_action(row).ok()?;
        let j = valid_group(layout, pos);
        if a / 3 != j {
            return None;
        }
        let (p, d, goal) = layout.apply(pos, dir, Move::from_index(a % 3));
        if goal {
            return Some(step);
        }
        pos = p;
        dir = d;
    }
    None
}

/// Shortest valid-action path lengths to the goal from every pose, by
/// breadth-first search backwards from the goal.
pub fn optimal_path_lengths(layout: &GridLayout) -> HashMap<Pose, u32> {
    let cells = layout.start_cells();
    let states: Vec<Pose> = cells
        .iter()
        .flat_map(|&c| Direction::ALL.into_iter().map(move |d| (c, d)))
        .collect();
    let mut dist: HashMap<Pose, u32> = HashMap::new();
    let mut frontier: Vec<Pose> = states
        .iter()
        .copied()
        .filter(|&(pos, dir)| layout.apply(pos, dir, Move::Forward).2)
        .collect();
    for p in &frontier {
        dist.insert(*p, 1);
    }
    let mut depth = 1;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for &s in &states {
            if dist.contains_key(&s) {
                continue;
            }
            let reaches = Move::ALL.iter().any(|&mv| {
                let (p, d, goal) = layout.apply(s.0, s.1, mv);
                !goal && frontier.contains(&(p, d))
            });
            if reaches {
                next.push(s);
            }
        }
        for p in &next {
            dist.insert(*p, depth);
        }
        frontier = next;
    }
    dist
}

/// Steps a greedy (ε = 0) network needs from `start`, or `None` if the
/// episode ends without reaching the goal.
pub fn greedy_path_length<T: Real>(qnet: &Network<T>, env: &mut GridRooms, start: Pose) -> Result<Option<u32>, HarnessError> {
    let mut obs = env.start_at(start.0, start.1)?;
    loop {
        let q = qnet.predict(&obs.to_precision::<T>().unsqueeze())?;
        let a = greedy_action(q.row(0))?;
        let step = env.step(a)?;
        if step.done {
            return Ok((step.reward > 0.0).then_some(env.state().steps));
        }
        obs = step.observation;
    }
}
