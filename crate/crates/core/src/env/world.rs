use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::grid::{Cell, GridMap};
use crate::error::{Error, Result};
use crate::rng;

/// Joint agent positions plus per-agent goals.
///
/// Construction validates that positions are pairwise distinct and free;
/// `step` preserves both properties.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub(crate) positions: Vec<Cell>,
    pub(crate) goals: Vec<Cell>,
    pub(crate) starts: Vec<Cell>,
    pub(crate) step_count: u32,
    pub(crate) step_limit: Option<u32>,
}

impl WorldState {
    pub fn new(map: &GridMap, starts: Vec<Cell>, goals: Vec<Cell>) -> Result<Self> {
        if starts.len() != goals.len() {
            return Err(Error::InvalidState(format!(
                "{} starts but {} goals",
                starts.len(),
                goals.len()
            )));
        }
        let state = WorldState {
            positions: starts.clone(),
            goals,
            starts,
            step_count: 0,
            step_limit: None,
        };
        state.validate(map)?;
        Ok(state)
    }

    pub fn with_step_limit(mut self, limit: u32) -> Self {
        self.step_limit = Some(limit);
        self
    }

    /// Same goals, different positions; used for hypothetical evaluation.
    pub fn with_positions(&self, map: &GridMap, positions: Vec<Cell>) -> Result<Self> {
        let mut s = self.clone();
        if positions.len() != s.goals.len() {
            return Err(Error::InvalidState("position count mismatch".into()));
        }
        s.positions = positions;
        s.validate(map)?;
        Ok(s)
    }

    pub fn validate(&self, map: &GridMap) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.positions.len());
        for (i, &p) in self.positions.iter().enumerate() {
            if map.is_blocked(p) {
                return Err(Error::InvalidState(format!("agent {i} at {p} is on an obstacle")));
            }
            if !seen.insert(p) {
                return Err(Error::InvalidState(format!("two agents share {p}")));
            }
        }
        for (i, &g) in self.goals.iter().enumerate() {
            if map.is_blocked(g) {
                return Err(Error::InvalidState(format!("goal of agent {i} at {g} is blocked")));
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Cell] {
        &self.positions
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    pub fn starts(&self) -> &[Cell] {
        &self.starts
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn step_limit(&self) -> Option<u32> {
        self.step_limit
    }

    pub fn reached(&self, agent: usize) -> bool {
        self.positions[agent] == self.goals[agent]
    }

    pub fn all_reached(&self) -> bool {
        (0..self.n_agents()).all(|i| self.reached(i))
    }

    pub fn limit_hit(&self) -> bool {
        self.step_limit.is_some_and(|l| self.step_count >= l)
    }

    pub fn done(&self) -> bool {
        self.all_reached() || self.limit_hit()
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;

/// Samples `n` distinct starts and `n` distinct goals (all `2n` cells
/// distinct), each goal in the same connected component as its start.
/// Agents are placed one at a time: a start uniformly from the unused free
/// cells, then a goal uniformly from the unused cells reachable from it.
/// If some start has no available goal the whole draw is repeated.
pub fn place_agents(map: &GridMap, n: usize, seed: u64) -> Result<WorldState> {
    let free: Vec<Cell> = map.free_cells().collect();
    if free.len() < 2 * n {
        return Err(Error::Generation {
            seed,
            message: format!("{} free cells, need {}", free.len(), 2 * n),
        });
    }
    let mut rng = rng::seeded(rng::derive(seed, rng::stream::AGENTS));
    'attempt: for _ in 0..PLACEMENT_ATTEMPTS {
        let mut used: HashSet<Cell> = HashSet::with_capacity(2 * n);
        let mut starts = Vec::with_capacity(n);
        let mut goals = Vec::with_capacity(n);
        for _ in 0..n {
            let candidates: Vec<Cell> = free.iter().copied().filter(|c| !used.contains(c)).collect();
            let &start = candidates.choose(&mut rng).expect("free cells counted above");
            used.insert(start);
            let reachable: Vec<Cell> = free
                .iter()
                .copied()
                .filter(|&c| !used.contains(&c))
                .filter(|&c| matches!(map.distance(start, c), Ok(Some(_))))
                .collect();
            let Some(&goal) = reachable.choose(&mut rng) else {
                continue 'attempt;
            };
            used.insert(goal);
            starts.push(start);
            goals.push(goal);
        }
        return WorldState::new(map, starts, goals);
    }
    Err(Error::Generation {
        seed,
        message: format!("no connected start/goal assignment for {n} agents after {PLACEMENT_ATTEMPTS} attempts"),
    })
}
