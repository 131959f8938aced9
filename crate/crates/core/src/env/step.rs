//! Simultaneous-move transition function.
//!
//! Conflicts are resolved by iterated cancellation. Each round computes, over
//! the agents still moving:
//!
//! 1. both parties of every swap (edge conflict),
//! 2. every agent whose target is shared with another mover (vertex conflict),
//! 3. every agent whose target is occupied by an agent that is not moving
//!    (it chose `Stop` or was cancelled earlier),
//!
//! and cancels the union at once. Rounds repeat until nothing changes. Moves
//! into obstacles or off the map are cancelled before the first round.
//! Because each round acts on whole sets, the outcome does not depend on
//! agent order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::action::Action;
use super::grid::{Cell, GridMap};
use super::world::WorldState;

/// Reward table.
pub mod reward {
    pub const MOVE_TOWARD: f64 = -0.070;
    pub const MOVE_AWAY: f64 = -0.075;
    pub const STAY_ON_GOAL: f64 = 0.0;
    pub const STAY_OFF_GOAL: f64 = -0.075;
    pub const COLLISION: f64 = -0.5;
    pub const FINISH: f64 = 3.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    MovedToward,
    MovedAway,
    StayOnGoal,
    StayOffGoal,
    Collision,
    /// Moved onto the goal from elsewhere: the move-toward reward plus the
    /// finish bonus.
    Finish,
}

impl Event {
    pub fn reward(self) -> f64 {
        match self {
            Event::MovedToward => reward::MOVE_TOWARD,
            Event::MovedAway => reward::MOVE_AWAY,
            Event::StayOnGoal => reward::STAY_ON_GOAL,
            Event::StayOffGoal => reward::STAY_OFF_GOAL,
            Event::Collision => reward::COLLISION,
            Event::Finish => reward::MOVE_TOWARD + reward::FINISH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: WorldState,
    pub base_rewards: Vec<f64>,
    pub events: Vec<Event>,
    pub done: bool,
}

/// Which agents end up moving. `false` entries hold position.
pub fn resolve_moves(map: &GridMap, positions: &[Cell], actions: &[Action]) -> Vec<bool> {
    assert_eq!(positions.len(), actions.len(), "one action per agent");
    let n = positions.len();
    let targets: Vec<Cell> = positions.iter().zip(actions).map(|(&p, a)| a.apply(p)).collect();
    let mut moving: Vec<bool> = (0..n)
        .map(|i| actions[i].is_move() && map.is_free(targets[i]))
        .collect();
    let occupant: HashMap<Cell, usize> = positions.iter().enumerate().map(|(i, &p)| (p, i)).collect();

    loop {
        let mut cancel = vec![false; n];
        let mut claims: HashMap<Cell, u32> = HashMap::new();
        for i in (0..n).filter(|&i| moving[i]) {
            *claims.entry(targets[i]).or_default() += 1;
        }
        for i in (0..n).filter(|&i| moving[i]) {
            if claims[&targets[i]] > 1 {
                cancel[i] = true;
            }
            if let Some(&j) = occupant.get(&targets[i]) {
                if !moving[j] {
                    cancel[i] = true;
                } else if targets[j] == positions[i] {
                    cancel[i] = true;
                    cancel[j] = true;
                }
            }
        }
        if !cancel.iter().any(|&c| c) {
            return moving;
        }
        for (m, c) in moving.iter_mut().zip(cancel) {
            if c {
                *m = false;
            }
        }
    }
}

/// Advances the world by one tick.
///
/// # Panics
/// If `actions.len()` differs from the agent count.
pub fn step(map: &GridMap, state: &WorldState, actions: &[Action]) -> StepOutcome {
    let moving = resolve_moves(map, &state.positions, actions);
    let mut next = state.clone();
    let mut events = Vec::with_capacity(actions.len());
    for (i, &a) in actions.iter().enumerate() {
        let from = state.positions[i];
        let goal = state.goals[i];
        let event = if !a.is_move() {
            if from == goal {
                Event::StayOnGoal
            } else {
                Event::StayOffGoal
            }
        } else if !moving[i] {
            Event::Collision
        } else {
            let to = a.apply(from);
            next.positions[i] = to;
            if to == goal {
                Event::Finish
            } else {
                let field = map.distance_field(goal).expect("goals are free cells");
                match (field.get(from), field.get(to)) {
                    (Some(d0), Some(d1)) if d1 < d0 => Event::MovedToward,
                    _ => Event::MovedAway,
                }
            }
        };
        events.push(event);
    }
    next.step_count += 1;
    debug_assert!(next.validate(map).is_ok());
    StepOutcome {
        base_rewards: events.iter().map(|e| e.reward()).collect(),
        done: next.done(),
        next_state: next,
        events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::grid::load_map;
    use Action::*;

    fn world(map: &GridMap, starts: &[(i32, i32)], goals: &[(i32, i32)]) -> WorldState {
        let c = |v: &[(i32, i32)]| v.iter().map(|&(x, y)| Cell::new(x, y)).collect();
        WorldState::new(map, c(starts), c(goals)).unwrap()
    }

    #[test]
    fn swap_is_collision_for_both() {
        let m = load_map("....").unwrap();
        let s = world(&m, &[(1, 0), (2, 0)], &[(3, 0), (0, 0)]);
        let out = step(&m, &s, &[Right, Left]);
        assert_eq!(out.events, vec![Event::Collision, Event::Collision]);
        assert_eq!(out.base_rewards, vec![-0.5, -0.5]);
        assert_eq!(out.next_state.positions(), s.positions());
    }

    #[test]
    fn stay_rewards() {
        let m = load_map("...").unwrap();
        let on = world(&m, &[(1, 0)], &[(1, 0)]);
        let out = step(&m, &on, &[Stop]);
        assert_eq!((out.events[0], out.base_rewards[0]), (Event::StayOnGoal, 0.0));
        let off = world(&m, &[(0, 0)], &[(2, 0)]);
        assert_eq!(step(&m, &off, &[Stop]).base_rewards[0], -0.075);
    }

    #[test]
    fn move_rewards() {
        let m = load_map("....").unwrap();
        let s = world(&m, &[(1, 0)], &[(3, 0)]);
        let out = step(&m, &s, &[Right]);
        assert_eq!((out.events[0], out.base_rewards[0]), (Event::MovedToward, -0.070));
        assert_eq!(step(&m, &s, &[Left]).base_rewards[0], -0.075);
        // boundary counts as an obstacle
        let edge = world(&m, &[(0, 0)], &[(3, 0)]);
        assert_eq!(step(&m, &edge, &[Up]).events[0], Event::Collision);
        assert_eq!(step(&m, &edge, &[Left]).base_rewards[0], -0.5);
    }

    #[test]
    fn finish_pays_bonus_on_each_arrival() {
        let m = load_map("...").unwrap();
        let s = world(&m, &[(1, 0)], &[(2, 0)]);
        let out = step(&m, &s, &[Right]);
        assert_eq!(out.events[0], Event::Finish);
        assert!((out.base_rewards[0] - 2.93).abs() < 1e-12);
        assert!(out.done);
        let left = step(&m, &out.next_state, &[Left]);
        assert_eq!(left.events[0], Event::MovedAway);
        assert_eq!(step(&m, &left.next_state, &[Right]).events[0], Event::Finish);
    }

    #[test]
    fn convoy_follows_leader() {
        let m = load_map(".....").unwrap();
        let s = world(&m, &[(0, 0), (1, 0), (2, 0)], &[(4, 0), (3, 0), (1, 0)]);
        let out = step(&m, &s, &[Right, Right, Right]);
        assert!(out.events.iter().all(|e| *e != Event::Collision), "{:?}", out.events);
        assert_eq!(
            out.next_state.positions(),
            &[Cell::new(1, 0), Cell::new(2, 0), Cell::new(3, 0)]
        );
    }

    #[test]
    fn blocked_leader_stops_convoy() {
        let m = load_map("...#").unwrap();
        let s = world(&m, &[(0, 0), (1, 0), (2, 0)], &[(2, 0), (0, 0), (1, 0)]);
        let out = step(&m, &s, &[Right, Right, Right]);
        assert_eq!(out.events, vec![Event::Collision; 3]);
        assert_eq!(out.next_state.positions(), s.positions());
    }

    #[test]
    fn vertex_conflict_cancels_all_claimants() {
        let m = load_map("...\n...").unwrap();
        let s = world(&m, &[(0, 0), (2, 0), (1, 1)], &[(0, 1), (2, 1), (0, 0)]);
        let out = step(&m, &s, &[Right, Left, Up]);
        assert_eq!(out.events, vec![Event::Collision; 3]);
    }

    #[test]
    fn rotation_cycle_succeeds() {
        let m = load_map("..\n..").unwrap();
        let s = world(&m, &[(0, 0), (1, 0), (1, 1), (0, 1)], &[(0, 0), (1, 0), (1, 1), (0, 1)]);
        let out = step(&m, &s, &[Right, Down, Left, Up]);
        assert!(out.events.iter().all(|e| *e != Event::Collision));
    }

    #[test]
    fn moving_into_stopped_agent_fails() {
        let m = load_map("...").unwrap();
        let s = world(&m, &[(0, 0), (1, 0)], &[(2, 0), (1, 0)]);
        let out = step(&m, &s, &[Right, Stop]);
        assert_eq!(out.events, vec![Event::Collision, Event::StayOnGoal]);
    }

    #[test]
    fn step_limit_marks_done() {
        let m = load_map("...").unwrap();
        let s = world(&m, &[(0, 0)], &[(2, 0)]).with_step_limit(1);
        assert!(step(&m, &s, &[Stop]).done);
    }
}
