//! JSON scenario files: `{map_text, agents: [{start: [x, y], goal: [x, y]}], seed, step_limit}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{generate_map, load_map, Cell, GridMap};
use super::world::{place_agents, WorldState};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: Cell,
    pub goal: Cell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub map_text: String,
    pub agents: Vec<AgentSpec>,
    pub seed: u64,
    pub step_limit: u32,
}

impl Scenario {
    pub fn from_world(map: &GridMap, state: &WorldState, seed: u64, step_limit: u32) -> Self {
        Scenario {
            map_text: map.to_text(),
            agents: state
                .starts()
                .iter()
                .zip(state.goals())
                .map(|(&start, &goal)| AgentSpec { start, goal })
                .collect(),
            seed,
            step_limit,
        }
    }

    /// Parses the map and builds the initial state, checking that every
    /// goal is reachable from its start.
    pub fn instantiate(&self) -> Result<(GridMap, WorldState)> {
        let map = load_map(&self.map_text)?;
        let starts = self.agents.iter().map(|a| a.start).collect();
        let goals = self.agents.iter().map(|a| a.goal).collect();
        let state = WorldState::new(&map, starts, goals)?.with_step_limit(self.step_limit);
        for (i, a) in self.agents.iter().enumerate() {
            if map.distance(a.goal, a.start)?.is_none() {
                return Err(Error::InvalidState(format!("agent {i}: goal {} unreachable from {}", a.goal, a.start)));
            }
        }
        Ok((map, state))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }
}

/// Default episode step limit for a map of the given size: 256 up to
/// 40x40, 386 beyond.
pub fn default_step_limit(width: usize, height: usize) -> u32 {
    if width.max(height) <= 40 {
        256
    } else {
        386
    }
}

const MAP_REDRAWS: u64 = 32;

/// Random map plus agent placement from one seed. The map comes from the
/// `MAP` sub-stream; if no valid placement exists on it, a fresh map is
/// drawn from a re-derived seed, up to a fixed number of times.
pub fn generate_scenario(
    width: usize,
    height: usize,
    density: f64,
    n_agents: usize,
    seed: u64,
    step_limit: u32,
) -> Result<Scenario> {
    if n_agents == 0 {
        return Err(Error::param("n_agents", "must be >= 1"));
    }
    let mut last = None;
    for redraw in 0..MAP_REDRAWS {
        let s = if redraw == 0 { seed } else { rng::derive(seed, redraw) };
        let map = generate_map(width, height, density, rng::derive(s, rng::stream::MAP))?;
        match place_agents(&map, n_agents, s) {
            Ok(state) => return Ok(Scenario::from_world(&map, &state, seed, step_limit)),
            Err(e @ Error::Generation { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation {
        seed,
        message: format!(
            "no valid placement on {MAP_REDRAWS} maps: {}",
            last.map(|e| e.to_string()).unwrap_or_default()
        ),
    })
}
