//! Hand-built two-agent layouts used by `verify` and the tests.
//!
//! Maps use `x` to the right and `y` downward; agent 0 is the focal agent.

use crate::env::{load_map, Action, Cell, GridMap, WorldState};

pub struct Layout {
    pub map: GridMap,
    pub state: WorldState,
}

fn layout(text: &str, starts: [(i32, i32); 2], goals: [(i32, i32); 2]) -> Layout {
    let map = load_map(text).expect("fixture map parses");
    let c = |v: [(i32, i32); 2]| v.iter().map(|&(x, y)| Cell::new(x, y)).collect();
    let state = WorldState::new(&map, c(starts), c(goals)).expect("fixture state is valid");
    Layout { map, state }
}

/// Agent 0 at (2,2) has two shortest moves, `Up` and `Right`, toward its
/// goal at (3,1). Agent 1 at (1,1), walled in above and below, needs the
/// cell above agent 0 to head right toward (4,1); `Up` takes that cell.
///
/// ```text
/// .#...
/// .1G..      1 = agent 1, G = goal of agent 0
/// .#0..      0 = agent 0
/// .....
/// ```
pub fn shared_cell_choice() -> Layout {
    layout(".#...\n.....\n.#...\n.....\n", [(2, 2), (1, 1)], [(3, 1), (4, 1)])
}

/// Agent 0 at (1,1) heads right along the middle row; agent 1 at (2,0)
/// heads right along the top row. If agent 1 instead steps down it lands on
/// the cell agent 0 is entering.
pub fn mean_instability() -> Layout {
    layout(".....\n.....\n.....\n", [(1, 1), (2, 0)], [(4, 1), (4, 0)])
}

/// The joint action both agents should take in [`mean_instability`], and
/// the alternative for agent 1 that collides with agent 0.
pub const MEAN_INSTABILITY_PAIRS: [[Action; 2]; 2] = [[Action::Right, Action::Right], [Action::Right, Action::Down]];

/// Agent 0 at (1,0) must reach (0,2), three steps away by two routes.
/// Agent 1 at (0,1) must cross the middle row to (3,1). Going down first
/// puts agent 0 on agent 1's path for a step; going left first does not.
pub fn crossing_corridor() -> Layout {
    layout("....\n....\n....\n", [(1, 0), (0, 1)], [(0, 2), (3, 1)])
}

/// Route for [`crossing_corridor`] where agent 0 stays out of agent 1's way.
pub fn crossing_yield() -> Vec<Vec<Action>> {
    use Action::*;
    vec![vec![Left, Right], vec![Down, Right], vec![Down, Right]]
}

/// Route for [`crossing_corridor`] where agent 0 blocks agent 1 for a step.
pub fn crossing_block() -> Vec<Vec<Action>> {
    use Action::*;
    vec![vec![Down, Stop], vec![Down, Right], vec![Left, Right], vec![Stop, Right]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{step, Event};

    fn replay(l: &Layout, plan: &[Vec<Action>]) -> (WorldState, Vec<Vec<Event>>) {
        let mut s = l.state.clone();
        let mut events = Vec::new();
        for joint in plan {
            let out = step(&l.map, &s, joint);
            events.push(out.events);
            s = out.next_state;
        }
        (s, events)
    }

    #[test]
    fn crossing_routes_end_on_goals() {
        let l = crossing_corridor();
        for plan in [crossing_yield(), crossing_block()] {
            let (end, events) = replay(&l, &plan);
            assert!(end.all_reached());
            assert!(events.iter().flatten().all(|e| *e != Event::Collision));
        }
        let (_, events) = replay(&l, &crossing_block());
        assert_eq!(events[0][1], Event::StayOffGoal);
    }

    #[test]
    fn shared_cell_has_two_shortest_moves() {
        let l = shared_cell_choice();
        let g = l.state.goals()[0];
        let here = l.map.distance(g, l.state.positions()[0]).unwrap().unwrap();
        for a in [Action::Up, Action::Right] {
            let d = l.map.distance(g, a.apply(l.state.positions()[0])).unwrap().unwrap();
            assert_eq!(d + 1, here);
        }
    }
}
