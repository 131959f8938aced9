//! Exhaustive finite-horizon analysis of one focal agent against a virtual
//! agent made of every other agent.
//!
//! Agent 0 is the focal agent. The virtual agent's action is the joint action
//! of agents `1..n`, restricted to joint actions under which those agents do
//! not obstruct each other. Its reward is their mean reward.
//!
//! Three action-value tables are built by backward induction over the
//! reachable joint states:
//!
//! * `q_tot(s, a_i, a_v)` accumulates `r_i + r_v`,
//! * `q_i(s, a_i)` accumulates `(1 - alpha) r_i + alpha max_{a_v} r_v`,
//! * `q_v(s, a_v)` accumulates `(1 - alpha) r_v + alpha max_{a_i} r_i`,
//!
//! each maximised over the joint continuation, so `q_i` is the best shaped
//! return the focal agent can reach when the whole trajectory is chosen in
//! its favour.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::{joint_actions, resolve_moves, step, Action, Cell, Event, GridMap, WorldState};
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_AGENTS: usize = 3;
pub const MAX_HORIZON: usize = 8;
pub const MAX_STATES: usize = 1_000_000;
const TOL: f64 = 1e-9;

/// Uniform reward model: every step off the goal costs `r_move`, a collision
/// costs `r_collision`, staying on the goal pays `r_goal_stay`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRewardSpec {
    pub r_move: f64,
    pub r_collision: f64,
    pub r_goal_stay: f64,
}

impl Default for OracleRewardSpec {
    fn default() -> Self {
        OracleRewardSpec {
            r_move: -0.075,
            r_collision: -0.5,
            r_goal_stay: 0.0,
        }
    }
}

impl OracleRewardSpec {
    pub fn satisfies_assumption(&self) -> bool {
        self.r_collision < self.r_move && self.r_move < 0.0 && self.r_goal_stay == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Uniform(OracleRewardSpec),
    /// Environment reward table with the finish bonus removed.
    Table,
}

impl RewardMode {
    pub fn reward(&self, event: Event) -> f64 {
        match self {
            RewardMode::Uniform(spec) => match event {
                Event::Collision => spec.r_collision,
                Event::StayOnGoal => spec.r_goal_stay,
                _ => spec.r_move,
            },
            RewardMode::Table => match event {
                Event::Finish => Event::MovedToward.reward(),
                e => e.reward(),
            },
        }
    }

    fn satisfies_assumption(&self) -> bool {
        matches!(self, RewardMode::Uniform(spec) if spec.satisfies_assumption())
    }
}

/// Whether the co-agents can execute `actions` without getting in each
/// other's way: each must fare exactly as it would alone on the map.
pub fn internally_feasible(map: &GridMap, positions: &[Cell], actions: &[Action]) -> bool {
    let together = resolve_moves(map, positions, actions);
    positions
        .iter()
        .zip(actions)
        .zip(together)
        .all(|((&p, &a), moved)| resolve_moves(map, &[p], &[a])[0] == moved)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    next: usize,
    r_focal: f64,
    r_virtual: f64,
}

#[derive(Debug, Clone)]
struct Transitions {
    /// Indices into `JointMdp::virtual_actions`.
    feasible: Vec<usize>,
    /// `outcomes[a_i * feasible.len() + m]`.
    outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone)]
pub struct JointMdp {
    map: GridMap,
    goals: Vec<Cell>,
    horizon: usize,
    mode: RewardMode,
    states: Vec<Vec<Cell>>,
    index: HashMap<Vec<Cell>, usize>,
    /// `layers[d]`: states reachable in exactly `d` steps.
    layers: Vec<Vec<usize>>,
    transitions: HashMap<usize, Transitions>,
    virtual_actions: Vec<Vec<Action>>,
    goal_free: bool,
}

/// Rewards of one joint step: focal reward, mean co-agent reward, next positions.
fn joint_step(map: &GridMap, goals: &[Cell], positions: &[Cell], joint: &[Action], mode: &RewardMode) -> (Vec<Cell>, f64, f64) {
    let state = WorldState {
        positions: positions.to_vec(),
        goals: goals.to_vec(),
        starts: positions.to_vec(),
        step_count: 0,
        step_limit: None,
    };
    let out = step(map, &state, joint);
    let r: Vec<f64> = out.events.iter().map(|&e| mode.reward(e)).collect();
    let r_virtual = r[1..].iter().sum::<f64>() / (r.len() - 1) as f64;
    (out.next_state.positions, r[0], r_virtual)
}

pub fn build_joint_mdp(
    map: &GridMap,
    starts: &[Cell],
    goals: &[Cell],
    horizon: usize,
    mode: RewardMode,
) -> Result<JointMdp> {
    let n = starts.len();
    if n < 2 {
        return Err(Error::param("agents", "need a focal agent and at least one co-agent"));
    }
    if n > MAX_AGENTS {
        return Err(Error::Tractability(format!("{n} agents; the oracle handles at most {MAX_AGENTS}")));
    }
    if horizon > MAX_HORIZON {
        return Err(Error::Tractability(format!("horizon {horizon} exceeds {MAX_HORIZON}")));
    }
    WorldState::new(map, starts.to_vec(), goals.to_vec())?;

    let virtual_actions: Vec<Vec<Action>> = joint_actions(n - 1).collect();
    let mut mdp = JointMdp {
        map: map.clone(),
        goals: goals.to_vec(),
        horizon,
        mode,
        states: vec![starts.to_vec()],
        index: HashMap::from([(starts.to_vec(), 0)]),
        layers: vec![vec![0]],
        transitions: HashMap::new(),
        virtual_actions,
        goal_free: true,
    };

    for d in 0..horizon {
        let mut next_layer = Vec::new();
        let mut in_layer = std::collections::HashSet::new();
        for &s in &mdp.layers[d].clone() {
            let positions = mdp.states[s].clone();
            if positions.iter().zip(goals).any(|(p, g)| p == g) {
                mdp.goal_free = false;
            }
            if !mdp.transitions.contains_key(&s) {
                let t = mdp.expand(&positions)?;
                mdp.transitions.insert(s, t);
            }
            for o in &mdp.transitions[&s].outcomes {
                if in_layer.insert(o.next) {
                    next_layer.push(o.next);
                }
            }
        }
        next_layer.sort_unstable();
        mdp.layers.push(next_layer);
    }
    Ok(mdp)
}

impl JointMdp {
    fn intern(&mut self, positions: Vec<Cell>) -> Result<usize> {
        if let Some(&i) = self.index.get(&positions) {
            return Ok(i);
        }
        if self.states.len() >= MAX_STATES {
            return Err(Error::Tractability(format!("more than {MAX_STATES} joint states")));
        }
        let i = self.states.len();
        self.index.insert(positions.clone(), i);
        self.states.push(positions);
        Ok(i)
    }

    fn expand(&mut self, positions: &[Cell]) -> Result<Transitions> {
        let feasible: Vec<usize> = (0..self.virtual_actions.len())
            .filter(|&m| internally_feasible(&self.map, &positions[1..], &self.virtual_actions[m]))
            .collect();
        let mut outcomes = Vec::with_capacity(Action::COUNT * feasible.len());
        let mut joint = vec![Action::Stop; positions.len()];
        for a in Action::ALL {
            joint[0] = a;
            for &m in &feasible {
                joint[1..].copy_from_slice(&self.virtual_actions[m]);
                let (next, r_focal, r_virtual) = joint_step(&self.map, &self.goals, positions, &joint, &self.mode);
                let next = self.intern(next)?;
                outcomes.push(Outcome {
                    next,
                    r_focal,
                    r_virtual,
                });
            }
        }
        Ok(Transitions { feasible, outcomes })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn layer(&self, depth: usize) -> impl Iterator<Item = &[Cell]> {
        self.layers[depth].iter().map(|&s| self.states[s].as_slice())
    }

    pub fn contains(&self, depth: usize, positions: &[Cell]) -> bool {
        self.index
            .get(positions)
            .is_some_and(|s| self.layers[depth].binary_search(s).is_ok())
    }

    /// No agent stands on its goal in any state from which a reward is collected.
    pub fn goal_free(&self) -> bool {
        self.goal_free
    }

    pub fn mode(&self) -> &RewardMode {
        &self.mode
    }
}

#[derive(Debug, Clone)]
pub struct StateValues {
    pub positions: Vec<Cell>,
    /// Feasible co-agent joint actions, aligned with `q_virtual` and the
    /// inner dimension of `q_tot`.
    pub virtual_actions: Vec<Vec<Action>>,
    pub q_tot: Vec<[f64; Action::COUNT]>,
    pub q_focal: [f64; Action::COUNT],
    pub q_virtual: Vec<f64>,
}

impl StateValues {
    /// `q_tot` for focal action `a` and co-agent action index `m`.
    pub fn total(&self, a: Action, m: usize) -> f64 {
        self.q_tot[m][a.index()]
    }

    fn max_total(&self) -> f64 {
        self.q_tot.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct JointValueTables {
    pub horizon: usize,
    pub gamma: f64,
    pub alpha: f64,
    /// `by_depth[d]`: one entry per state reachable in exactly `d` steps,
    /// valued with `horizon - d` steps to go.
    pub by_depth: Vec<Vec<StateValues>>,
    pub uniform_rewards: bool,
    pub goal_free: bool,
}

pub fn value_iterate(mdp: &JointMdp, gamma: f64, alpha: f64) -> Result<JointValueTables> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("{alpha} not in [0, 1]")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param("gamma", format!("{gamma} not in (0, 1]")));
    }
    let h = mdp.horizon;
    // next-step values (tot, focal, virtual) keyed by state id
    let mut next: HashMap<usize, (f64, f64, f64)> = mdp.layers[h].iter().map(|&s| (s, (0.0, 0.0, 0.0))).collect();
    let mut by_depth = vec![Vec::new(); h];
    for d in (0..h).rev() {
        let mut current = HashMap::with_capacity(mdp.layers[d].len());
        let mut entries = Vec::with_capacity(mdp.layers[d].len());
        for &s in &mdp.layers[d] {
            let t = &mdp.transitions[&s];
            let k = t.feasible.len();
            let o = |a: usize, m: usize| &t.outcomes[a * k + m];
            let best_virtual: Vec<f64> = (0..Action::COUNT)
                .map(|a| (0..k).map(|m| o(a, m).r_virtual).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let best_focal: Vec<f64> = (0..k)
                .map(|m| (0..Action::COUNT).map(|a| o(a, m).r_focal).fold(f64::NEG_INFINITY, f64::max))
                .collect();

            let mut q_tot = vec![[f64::NEG_INFINITY; Action::COUNT]; k];
            let mut q_focal = [f64::NEG_INFINITY; Action::COUNT];
            let mut q_virtual = vec![f64::NEG_INFINITY; k];
            for a in 0..Action::COUNT {
                for m in 0..k {
                    let out = o(a, m);
                    let (v_tot, v_focal, v_virtual) = next[&out.next];
                    q_tot[m][a] = out.r_focal + out.r_virtual + gamma * v_tot;
                    let shaped_focal = (1.0 - alpha) * out.r_focal + alpha * best_virtual[a];
                    q_focal[a] = q_focal[a].max(shaped_focal + gamma * v_focal);
                    let shaped_virtual = (1.0 - alpha) * out.r_virtual + alpha * best_focal[m];
                    q_virtual[m] = q_virtual[m].max(shaped_virtual + gamma * v_virtual);
                }
            }
            let entry = StateValues {
                positions: mdp.states[s].clone(),
                virtual_actions: t.feasible.iter().map(|&m| mdp.virtual_actions[m].clone()).collect(),
                q_tot,
                q_focal,
                q_virtual,
            };
            let v = (
                entry.max_total(),
                entry.q_focal.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                entry.q_virtual.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            );
            current.insert(s, v);
            entries.push(entry);
        }
        by_depth[d] = entries;
        next = current;
    }
    Ok(JointValueTables {
        horizon: h,
        gamma,
        alpha,
        by_depth,
        uniform_rewards: mdp.mode.satisfies_assumption(),
        goal_free: mdp.goal_free,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgmWitness {
    pub depth: usize,
    pub positions: Vec<Cell>,
    pub focal_argmax: Vec<Action>,
    pub virtual_argmax: Vec<Vec<Action>>,
    pub best_joint: (Action, Vec<Action>),
    pub best_total: f64,
    pub best_pair_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgmCertificate {
    pub holds: bool,
    pub alpha: f64,
    pub states_checked: usize,
    pub uniform_reward_assumption: bool,
    pub goal_free_assumption: bool,
    pub witness: Option<IgmWitness>,
}

fn argmax_set(values: &[f64]) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&i| values[i] >= best - TOL).collect()
}

/// Checks, at every tabulated state, that some pair from the individual
/// argmax sets attains the joint maximum of `q_tot`.
pub fn check_igm(tables: &JointValueTables) -> IgmCertificate {
    let mut checked = 0;
    for (depth, layer) in tables.by_depth.iter().enumerate() {
        for sv in layer {
            checked += 1;
            let focal = argmax_set(&sv.q_focal);
            let virt = argmax_set(&sv.q_virtual);
            let best = sv.max_total();
            let best_pair = focal
                .iter()
                .flat_map(|&a| virt.iter().map(move |&m| sv.q_tot[m][a]))
                .fold(f64::NEG_INFINITY, f64::max);
            if best_pair < best - TOL {
                let (bm, ba) = (0..sv.q_tot.len())
                    .flat_map(|m| (0..Action::COUNT).map(move |a| (m, a)))
                    .find(|&(m, a)| sv.q_tot[m][a] >= best - TOL)
                    .expect("maximum is attained");
                return IgmCertificate {
                    holds: false,
                    alpha: tables.alpha,
                    states_checked: checked,
                    uniform_reward_assumption: tables.uniform_rewards,
                    goal_free_assumption: tables.goal_free,
                    witness: Some(IgmWitness {
                        depth,
                        positions: sv.positions.clone(),
                        focal_argmax: focal.iter().map(|&a| Action::ALL[a]).collect(),
                        virtual_argmax: virt.iter().map(|&m| sv.virtual_actions[m].clone()).collect(),
                        best_joint: (Action::ALL[ba], sv.virtual_actions[bm].clone()),
                        best_total: best,
                        best_pair_total: best_pair,
                    }),
                };
            }
        }
    }
    IgmCertificate {
        holds: true,
        alpha: tables.alpha,
        states_checked: checked,
        uniform_reward_assumption: tables.uniform_rewards,
        goal_free_assumption: tables.goal_free,
        witness: None,
    }
}

/// Largest violation of `q_i(s, a_i) >= q_tot(s, a_i, a_v) / 2` over all
/// tabulated state-action tuples; non-positive when the bound holds.
pub fn half_q_violation(tables: &JointValueTables) -> f64 {
    tables
        .by_depth
        .iter()
        .flatten()
        .flat_map(|sv| {
            sv.q_tot
                .iter()
                .flat_map(move |row| (0..Action::COUNT).map(move |a| 0.5 * row[a] - sv.q_focal[a]))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Rewards of one step along an explicit joint trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub r_focal: f64,
    pub r_virtual: f64,
    /// Best co-agent mean reward given the focal action.
    pub best_virtual: f64,
    /// Best focal reward given the co-agent action.
    pub best_focal: f64,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReturns {
    pub steps: Vec<TrajectoryStep>,
    pub focal: f64,
    pub focal_shaped: f64,
    pub total: f64,
}

/// Replays `joint` (one joint action per step, focal agent first) from
/// `starts` and accumulates focal returns, shaped with `alpha`.
pub fn trajectory_returns(
    map: &GridMap,
    starts: &[Cell],
    goals: &[Cell],
    joint: &[Vec<Action>],
    mode: RewardMode,
    alpha: f64,
    gamma: f64,
) -> Result<TrajectoryReturns> {
    if starts.len() < 2 {
        return Err(Error::param("agents", "need a focal agent and at least one co-agent"));
    }
    WorldState::new(map, starts.to_vec(), goals.to_vec())?;
    let k = starts.len() - 1;
    let candidates: Vec<Vec<Action>> = joint_actions(k).collect();
    let mut positions = starts.to_vec();
    let mut out = TrajectoryReturns {
        steps: Vec::with_capacity(joint.len()),
        focal: 0.0,
        focal_shaped: 0.0,
        total: 0.0,
    };
    let mut discount = 1.0;
    for actions in joint {
        if actions.len() != starts.len() {
            return Err(Error::param("joint", "one action per agent at every step"));
        }
        if !internally_feasible(map, &positions[1..], &actions[1..]) {
            return Err(Error::param("joint", "co-agents obstruct each other"));
        }
        let (next, r_focal, r_virtual) = joint_step(map, goals, &positions, actions, &mode);
        let mut probe = actions.clone();
        let best_virtual = candidates
            .iter()
            .filter(|c| internally_feasible(map, &positions[1..], c))
            .map(|c| {
                probe[1..].copy_from_slice(c);
                joint_step(map, goals, &positions, &probe, &mode).2
            })
            .fold(f64::NEG_INFINITY, f64::max);
        probe[1..].copy_from_slice(&actions[1..]);
        let best_focal = Action::ALL
            .iter()
            .map(|&a| {
                probe[0] = a;
                joint_step(map, goals, &positions, &probe, &mode).1
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let collided = positions
            .iter()
            .zip(actions)
            .zip(&next)
            .any(|((p, a), n)| a.is_move() && p == n);
        out.focal += discount * r_focal;
        out.focal_shaped += discount * ((1.0 - alpha) * r_focal + alpha * best_virtual);
        out.total += discount * (r_focal + r_virtual);
        out.steps.push(TrajectoryStep {
            r_focal,
            r_virtual,
            best_virtual,
            best_focal,
            collision: collided,
        });
        positions = next;
        discount *= gamma;
    }
    Ok(out)
}

/// Follows the first `q_tot` maximiser (focal action in tie-break order,
/// then co-agent enumeration order) from the start state.
pub fn greedy_joint_trajectory(mdp: &JointMdp, tables: &JointValueTables) -> Vec<Vec<Action>> {
    let mut positions = mdp.states[0].clone();
    let mut plan = Vec::with_capacity(tables.horizon);
    for layer in &tables.by_depth {
        let sv = layer
            .iter()
            .find(|sv| sv.positions == positions)
            .expect("successor states are tabulated");
        let best = sv.max_total();
        let (m, a) = (0..Action::COUNT)
            .flat_map(|a| (0..sv.q_tot.len()).map(move |m| (m, a)))
            .find(|&(m, a)| sv.q_tot[m][a] >= best - TOL)
            .expect("maximum is attained");
        let mut joint = vec![Action::ALL[a]];
        joint.extend_from_slice(&sv.virtual_actions[m]);
        positions = joint_step(&mdp.map, &mdp.goals, &positions, &joint, &mdp.mode).0;
        plan.push(joint);
    }
    plan
}

/// A small randomly generated instance for the theorem suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleInstance {
    pub map_text: String,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
    pub horizon: usize,
    pub seed: u64,
}

impl OracleInstance {
    pub fn map(&self) -> Result<GridMap> {
        crate::env::load_map(&self.map_text)
    }
}

/// Draws an instance whose goals are all farther than `horizon` steps from
/// their starts, so no agent can reach its goal inside the window. Map sides
/// are drawn from `2..=max_side`, the horizon is as long as allowed up to
/// `max_horizon` (and at least 1).
pub fn random_instance(seed: u64, n_agents: usize, max_side: usize, density: f64, max_horizon: usize) -> Result<OracleInstance> {
    use rand::Rng;
    let mut rng = rng::seeded(rng::derive(seed, rng::stream::ORACLE));
    for _ in 0..10_000 {
        let w = rng.gen_range(2..=max_side);
        let h = rng.gen_range(2..=max_side);
        let map = crate::env::generate_map(w, h, density, rng.gen())?;
        let Ok(state) = crate::env::place_agents(&map, n_agents, rng.gen()) else {
            continue;
        };
        let min_dist = state
            .starts()
            .iter()
            .zip(state.goals())
            .map(|(&s, &g)| map.distance(g, s).ok().flatten().unwrap_or(0) as usize)
            .min()
            .unwrap_or(0);
        let horizon = min_dist.saturating_sub(1).min(max_horizon);
        if horizon >= 1 {
            return Ok(OracleInstance {
                map_text: map.to_text(),
                starts: state.starts().to_vec(),
                goals: state.goals().to_vec(),
                horizon,
                seed,
            });
        }
    }
    Err(Error::Generation {
        seed,
        message: "no instance with goals beyond a one-step horizon".into(),
    })
}

/// Builds, solves and certifies one instance.
pub fn certify(instance: &OracleInstance, mode: RewardMode, gamma: f64, alpha: f64) -> Result<(IgmCertificate, f64)> {
    let map = instance.map()?;
    let mdp = build_joint_mdp(&map, &instance.starts, &instance.goals, instance.horizon, mode)?;
    let tables = value_iterate(&mdp, gamma, alpha)?;
    Ok((check_igm(&tables), half_q_violation(&tables)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::load_map;
    use Action::*;

    fn cells(v: &[(i32, i32)]) -> Vec<Cell> {
        v.iter().map(|&(x, y)| Cell::new(x, y)).collect()
    }

    const UNIFORM: RewardMode = RewardMode::Uniform(OracleRewardSpec {
        r_move: -0.075,
        r_collision: -0.5,
        r_goal_stay: 0.0,
    });

    #[test]
    fn rejects_single_agent_and_oversize() {
        let m = load_map("...\n...\n...").unwrap();
        assert!(build_joint_mdp(&m, &cells(&[(0, 0)]), &cells(&[(2, 2)]), 2, UNIFORM).is_err());
        let four = cells(&[(0, 0), (1, 0), (2, 0), (0, 1)]);
        assert!(matches!(
            build_joint_mdp(&m, &four, &four, 2, UNIFORM),
            Err(Error::Tractability(_))
        ));
        let two = cells(&[(0, 0), (2, 2)]);
        assert!(matches!(
            build_joint_mdp(&m, &two, &cells(&[(2, 0), (0, 2)]), 9, UNIFORM),
            Err(Error::Tractability(_))
        ));
    }

    #[test]
    fn counting_on_open_3x3() {
        let m = load_map("...\n...\n...").unwrap();
        let mdp = build_joint_mdp(&m, &cells(&[(0, 0), (2, 2)]), &cells(&[(2, 0), (0, 2)]), 2, UNIFORM).unwrap();
        // ordered pairs of distinct cells
        assert!(mdp.n_states() <= 9 * 8);
        for d in 0..2 {
            for s in &mdp.layers[d] {
                assert_eq!(mdp.transitions[s].feasible.len(), 5);
                assert_eq!(mdp.transitions[s].outcomes.len(), 25);
            }
        }
    }

    #[test]
    fn horizon_zero_is_all_zero() {
        let m = load_map("...\n...\n...").unwrap();
        let mdp = build_joint_mdp(&m, &cells(&[(0, 0), (2, 2)]), &cells(&[(2, 0), (0, 2)]), 0, UNIFORM).unwrap();
        let t = value_iterate(&mdp, 1.0, 0.5).unwrap();
        assert!(t.by_depth.is_empty());
        assert!(check_igm(&t).holds);
    }

    #[test]
    fn one_step_without_collisions_costs_two_moves() {
        // far apart: no joint action can make them collide in one step
        let m = load_map(".....\n.....\n.....").unwrap();
        let starts = cells(&[(0, 1), (4, 1)]);
        let goals = cells(&[(0, 0), (4, 0)]);
        let mode = RewardMode::Uniform(OracleRewardSpec {
            r_move: -0.075,
            r_collision: -0.5,
            r_goal_stay: 0.0,
        });
        let mdp = build_joint_mdp(&m, &starts, &goals, 1, mode).unwrap();
        let t = value_iterate(&mdp, 1.0, 0.5).unwrap();
        // moves into the map edge collide, everything else is r_m for both
        let sv = &t.by_depth[0][0];
        let free = |a: Action, p: Cell| m.is_free(a.apply(p));
        for a in Action::ALL {
            for (mi, va) in sv.virtual_actions.iter().enumerate() {
                if free(a, starts[0]) && free(va[0], starts[1]) {
                    assert!((sv.total(a, mi) + 0.15).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn virtual_agent_excludes_internal_collisions() {
        let m = load_map("....").unwrap();
        // co-agents at (1,0) and (2,0): swapping them is infeasible
        assert!(!internally_feasible(&m, &cells(&[(1, 0), (2, 0)]), &[Right, Left]));
        assert!(internally_feasible(&m, &cells(&[(1, 0), (2, 0)]), &[Left, Right]));
        // following into a vacated cell is fine; into the wall is not an internal conflict
        assert!(internally_feasible(&m, &cells(&[(1, 0), (2, 0)]), &[Right, Right]));
        assert!(internally_feasible(&m, &cells(&[(0, 0), (3, 0)]), &[Left, Right]));
    }

    #[test]
    fn decoupled_corridors_hold() {
        let m = load_map(".....\n#####\n.....").unwrap();
        let inst = OracleInstance {
            map_text: m.to_text(),
            starts: cells(&[(0, 0), (4, 2)]),
            goals: cells(&[(4, 0), (0, 2)]),
            horizon: 3,
            seed: 0,
        };
        let (cert, viol) = certify(&inst, UNIFORM, 1.0, 0.5).unwrap();
        assert!(cert.holds);
        assert!(cert.goal_free_assumption && cert.uniform_reward_assumption);
        assert!(viol <= 1e-9);
    }

    #[test]
    fn goal_reached_flags_assumption() {
        let m = load_map("...").unwrap();
        let mdp = build_joint_mdp(&m, &cells(&[(0, 0), (2, 0)]), &cells(&[(1, 0), (0, 0)]), 2, UNIFORM).unwrap();
        assert!(!mdp.goal_free());
    }

    #[test]
    fn random_instances_are_goal_free() {
        for seed in 0..10 {
            let inst = random_instance(seed, 2, 4, 0.2, 6).unwrap();
            let m = inst.map().unwrap();
            let mdp = build_joint_mdp(&m, &inst.starts, &inst.goals, inst.horizon, UNIFORM).unwrap();
            assert!(mdp.goal_free(), "seed {seed}");
        }
    }
}
