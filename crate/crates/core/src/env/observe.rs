use serde::{Deserialize, Serialize};

use super::action::Action;
use super::grid::GridMap;
use super::world::WorldState;

pub const FOV: usize = 9;
const HALF: i32 = (FOV / 2) as i32;

/// Local view of one agent: a 9x9 window centred on it.
///
/// `heuristic[a]` is set for a move `a` that strictly shortens the BFS
/// distance to the agent's goal; the `Stop` slot is set when the agent
/// already sits on its goal. `goal_distance` is that BFS distance, capped
/// at [`DISTANCE_CAP`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub obstacles: [[bool; FOV]; FOV],
    pub agents: [[bool; FOV]; FOV],
    pub heuristic: [bool; Action::COUNT],
    pub goal_distance: u32,
}

pub const DISTANCE_CAP: u32 = 31;

/// Hashable table key derived from an [`Observation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationKey(pub u64);

/// How an observation is reduced to a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyScheme {
    /// Exact packing of the heuristic bits, the four adjacent cells
    /// (free / obstacle / agent), agent presence on the eight cells at
    /// Manhattan distance 2 and the capped goal distance. Transfers across
    /// maps.
    #[default]
    Local,
    /// FNV-1a over the whole channel stack.
    Full,
}

impl Observation {
    /// Channel value at window offset `(dx, dy)` from the centre.
    pub fn at(&self, dx: i32, dy: i32) -> (bool, bool) {
        let (r, c) = ((dy + HALF) as usize, (dx + HALF) as usize);
        (self.obstacles[r][c], self.agents[r][c])
    }

    pub fn key(&self, scheme: KeyScheme) -> ObservationKey {
        match scheme {
            KeyScheme::Local => self.local_key(),
            KeyScheme::Full => self.full_key(),
        }
    }

    fn local_key(&self) -> ObservationKey {
        let mut k = 0u64;
        let mut bit = 0;
        for &h in &self.heuristic {
            k |= (h as u64) << bit;
            bit += 1;
        }
        for a in Action::MOVES {
            let (dx, dy) = a.displacement();
            let code = match self.at(dx, dy) {
                (true, _) => 1,
                (false, true) => 2,
                _ => 0,
            };
            k |= code << bit;
            bit += 2;
        }
        for (dx, dy) in RING2 {
            k |= (self.at(dx, dy).1 as u64) << bit;
            bit += 1;
        }
        k |= (self.goal_distance as u64) << bit;
        ObservationKey(k)
    }

    fn full_key(&self) -> ObservationKey {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let bytes = self
            .obstacles
            .iter()
            .flatten()
            .chain(self.agents.iter().flatten())
            .chain(self.heuristic.iter())
            .map(|&b| b as u8)
            .chain([self.goal_distance as u8]);
        ObservationKey(bytes.fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME)))
    }
}

const RING2: [(i32, i32); 8] = [(0, -2), (1, -1), (2, 0), (1, 1), (0, 2), (-1, 1), (-2, 0), (-1, -1)];

pub fn observe(map: &GridMap, state: &WorldState, agent: usize) -> Observation {
    let me = state.positions()[agent];
    let mut obs = Observation {
        obstacles: [[false; FOV]; FOV],
        agents: [[false; FOV]; FOV],
        heuristic: [false; Action::COUNT],
        goal_distance: DISTANCE_CAP,
    };
    for r in 0..FOV {
        for c in 0..FOV {
            let cell = me.offset(c as i32 - HALF, r as i32 - HALF);
            obs.obstacles[r][c] = map.is_blocked(cell);
        }
    }
    for (j, &p) in state.positions().iter().enumerate() {
        let (dx, dy) = (p.x - me.x, p.y - me.y);
        if j != agent && dx.abs() <= HALF && dy.abs() <= HALF {
            obs.agents[(dy + HALF) as usize][(dx + HALF) as usize] = true;
        }
    }
    let goal = state.goals()[agent];
    let field = map.distance_field(goal).expect("goals are free cells");
    if let Some(here) = field.get(me) {
        obs.goal_distance = here.min(DISTANCE_CAP);
        for a in Action::MOVES {
            if field.get(a.apply(me)).is_some_and(|d| d < here) {
                obs.heuristic[a.index()] = true;
            }
        }
    }
    obs.heuristic[Action::Stop.index()] = me == goal;
    obs
}
