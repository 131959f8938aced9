use std::collections::HashSet;

use cors_core::env::{generate_map, joint_actions, place_agents, step, Action, Event, GridMap, WorldState};
use proptest::prelude::*;

fn world(w: usize, h: usize, density: f64, n: usize, seed: u64) -> Option<(GridMap, WorldState)> {
    let map = generate_map(w, h, density, seed).ok()?;
    let st = place_agents(&map, n, seed ^ 0x5eed).ok()?;
    Some((map, st))
}

/// Conflict safety and no-teleport for one joint action.
fn check(map: &GridMap, st: &WorldState, joint: &[Action]) -> Result<(), String> {
    let out = step(map, st, joint);
    let before = st.positions();
    let after = out.next_state.positions();
    let distinct: HashSet<_> = after.iter().collect();
    if distinct.len() != after.len() {
        return Err(format!("vertex conflict: {after:?}"));
    }
    for (i, (&p, &q)) in before.iter().zip(after).enumerate() {
        if !map.is_free(q) {
            return Err(format!("agent {i} on blocked cell {q}"));
        }
        if q != p && q != joint[i].apply(p) {
            return Err(format!("agent {i} jumped {p} -> {q}"));
        }
        if !joint[i].is_move() && q != p {
            return Err(format!("agent {i} moved while stopping"));
        }
        for (j, (&pj, &qj)) in before.iter().zip(after).enumerate() {
            if i != j && q == pj && qj == p && p != q {
                return Err(format!("agents {i} and {j} swapped"));
            }
        }
        let moved = q != p;
        if moved && out.events[i] == Event::Collision {
            return Err(format!("agent {i} moved but was charged a collision"));
        }
        if joint[i].is_move() && !moved && out.events[i] != Event::Collision {
            return Err(format!("agent {i} blocked without a collision event"));
        }
        if (out.base_rewards[i] - out.events[i].reward()).abs() > 1e-12 {
            return Err(format!("agent {i} reward does not match its event"));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_joint_action_is_safe(w in 2usize..6, h in 2usize..6, density in 0.0f64..0.4, seed in any::<u64>()) {
        let Some((map, st)) = world(w, h, density, 3, seed) else { return Ok(()) };
        for joint in joint_actions(3) {
            prop_assert!(check(&map, &st, &joint).is_ok(), "{:?}", check(&map, &st, &joint));
        }
    }

    #[test]
    fn random_walks_stay_safe(seed in any::<u64>(), n in 2usize..7, picks in proptest::collection::vec(0usize..5, 60)) {
        let Some((map, mut st)) = world(7, 7, 0.2, n, seed) else { return Ok(()) };
        for chunk in picks.chunks(n).take(20) {
            if chunk.len() < n {
                break;
            }
            let joint: Vec<Action> = chunk.iter().map(|&k| Action::ALL[k]).collect();
            prop_assert!(check(&map, &st, &joint).is_ok());
            st = step(&map, &st, &joint).next_state;
        }
    }
}

#[test]
fn rotation_cycle_is_safe() {
    // four agents rotating around a 2x2 block
    let map = GridMap::empty(2, 2).unwrap();
    let c = cors_core::env::Cell::new;
    let st = WorldState::new(&map, vec![c(0, 0), c(1, 0), c(1, 1), c(0, 1)], vec![c(1, 1), c(0, 1), c(0, 0), c(1, 0)]).unwrap();
    let joint = [Action::Right, Action::Down, Action::Left, Action::Up];
    check(&map, &st, &joint).unwrap();
}
