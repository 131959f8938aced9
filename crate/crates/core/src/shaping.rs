//! Cooperativeness metrics and the shaped reward
//! `r~_i = (1 - alpha) * r_i + alpha * I_i`.
//!
//! All metrics read the full world state, goals included, so they are only
//! usable on the training side.

use serde::{Deserialize, Serialize};

use crate::env::{joint_actions, reward, step, Action, Event, GridMap, StepOutcome, WorldState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean realised reward of every other agent under the actual joint action.
    MeanAll,
    /// Best achievable mean reward of every other agent given this agent's
    /// action, by exhaustive search over their joint actions.
    ExactMax,
    /// Per-neighbour best response, averaged over neighbours.
    #[default]
    NeighborFactoredMax,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::MeanAll => "mean_all",
            Metric::ExactMax => "exact_max",
            Metric::NeighborFactoredMax => "neighbor_factored_max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    pub alpha: f64,
    pub neighbor_radius: u32,
    pub metric: Metric,
    /// Largest co-agent population searched exhaustively by `ExactMax`.
    pub exhaustive_cap: usize,
    pub arrival_bonus: ArrivalBonus,
}

/// How the one-off arrival bonus enters the shaped reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalBonus {
    /// The bonus is part of every reward: co-agents' hypothetical arrivals
    /// count in the metric and an agent's own bonus is blended like any
    /// other reward.
    #[default]
    Blended,
    /// Co-agents are scored by step rewards only and an agent's own bonus
    /// is added after blending, unscaled. The metric then stays
    /// non-positive and arriving pays the same with or without neighbours.
    Separate,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            alpha: 0.1675,
            neighbor_radius: 2,
            metric: Metric::NeighborFactoredMax,
            exhaustive_cap: 6,
            arrival_bonus: ArrivalBonus::Blended,
        }
    }
}

impl ShapingConfig {
    pub fn unshaped() -> Self {
        ShapingConfig {
            alpha: 0.0,
            ..Default::default()
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        ShapingConfig { alpha, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", format!("{} not in [0, 1]", self.alpha)));
        }
        if self.neighbor_radius < 1 {
            return Err(Error::param("neighbor_radius", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    AllOthers,
    NeighborsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedStepRewards {
    pub base: Vec<f64>,
    /// `None` where the metric is undefined (no co-agents in scope).
    pub cooperativeness: Vec<Option<f64>>,
    pub shaped: Vec<f64>,
}

/// Agents within Manhattan distance `radius` of `agent`, excluding itself.
pub fn neighbors(state: &WorldState, agent: usize, radius: u32) -> Vec<usize> {
    let me = state.positions()[agent];
    state
        .positions()
        .iter()
        .enumerate()
        .filter(|&(j, &p)| j != agent && me.manhattan(p) <= radius)
        .map(|(j, _)| j)
        .collect()
}

fn co_reward(out: &StepOutcome, j: usize, finish: bool) -> f64 {
    if !finish && out.events[j] == Event::Finish {
        out.base_rewards[j] - reward::FINISH
    } else {
        out.base_rewards[j]
    }
}

fn mean_excluding(values: &[f64], agent: usize) -> Option<f64> {
    let n = values.len().checked_sub(1).filter(|&n| n > 0)?;
    let sum: f64 = values.iter().enumerate().filter(|&(j, _)| j != agent).map(|(_, v)| v).sum();
    Some(sum / n as f64)
}

/// Mean base reward of all other agents after stepping `joint`.
pub fn ic_mean(map: &GridMap, state: &WorldState, joint: &[Action], agent: usize) -> Result<f64> {
    let out = step(map, state, joint);
    mean_excluding(&out.base_rewards, agent).ok_or(Error::UndefinedMetric {
        agent,
        reason: "no other agents",
    })
}

/// Maximum over the joint actions of the co-agents in `scope` of their mean
/// base reward, with `agent` executing `own` and everyone else held still.
/// Joint actions that make the co-agents collide with each other are
/// evaluated like any other.
pub fn ic_exact_max(
    map: &GridMap,
    state: &WorldState,
    agent: usize,
    own: Action,
    scope: Scope,
    config: &ShapingConfig,
) -> Result<f64> {
    let others: Vec<usize> = match scope {
        Scope::AllOthers => {
            if state.n_agents() > config.exhaustive_cap {
                return Err(Error::Tractability(format!(
                    "{} agents exceed the exhaustive cap of {}; use the neighbor-factored metric",
                    state.n_agents(),
                    config.exhaustive_cap
                )));
            }
            (0..state.n_agents()).filter(|&j| j != agent).collect()
        }
        Scope::NeighborsOnly => {
            let n = neighbors(state, agent, config.neighbor_radius);
            if n.len() > config.exhaustive_cap {
                return Err(Error::Tractability(format!(
                    "{} neighbours exceed the exhaustive cap of {}; use the neighbor-factored metric",
                    n.len(),
                    config.exhaustive_cap
                )));
            }
            n
        }
    };
    if others.is_empty() {
        return Err(Error::UndefinedMetric {
            agent,
            reason: "no co-agents in scope",
        });
    }
    let mut joint = vec![Action::Stop; state.n_agents()];
    joint[agent] = own;
    let mut best = f64::NEG_INFINITY;
    for combo in joint_actions(others.len()) {
        for (&j, &a) in others.iter().zip(&combo) {
            joint[j] = a;
        }
        let out = step(map, state, &joint);
        let mean = others.iter().map(|&j| co_reward(&out, j, config.arrival_bonus == ArrivalBonus::Blended)).sum::<f64>() / others.len() as f64;
        best = best.max(mean);
    }
    Ok(best)
}

/// One neighbour's best response inside the factored metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    pub neighbor: usize,
    /// First maximiser in `Up < Down < Left < Right < Stop` order.
    pub action: Action,
    pub reward: f64,
}

/// Best response of each neighbour to `own`, considering that neighbour
/// alone: all agents other than `agent` and the neighbour stay in place.
pub fn best_responses(
    map: &GridMap,
    state: &WorldState,
    agent: usize,
    own: Action,
    radius: u32,
) -> Vec<BestResponse> {
    best_responses_with(map, state, agent, own, radius, true)
}

fn best_responses_with(
    map: &GridMap,
    state: &WorldState,
    agent: usize,
    own: Action,
    radius: u32,
    finish: bool,
) -> Vec<BestResponse> {
    let mut joint = vec![Action::Stop; state.n_agents()];
    joint[agent] = own;
    neighbors(state, agent, radius)
        .into_iter()
        .map(|j| {
            let mut best: Option<BestResponse> = None;
            for a in Action::ALL {
                joint[j] = a;
                let r = co_reward(&step(map, state, &joint), j, finish);
                if best.is_none_or(|b| r > b.reward) {
                    best = Some(BestResponse {
                        neighbor: j,
                        action: a,
                        reward: r,
                    });
                }
            }
            joint[j] = Action::Stop;
            best.expect("five candidate actions")
        })
        .collect()
}

/// Mean over neighbours of each neighbour's best-response reward.
pub fn ic_factored_max(map: &GridMap, state: &WorldState, agent: usize, own: Action, radius: u32) -> Result<f64> {
    factored_max_with(map, state, agent, own, radius, true)
}

fn factored_max_with(
    map: &GridMap,
    state: &WorldState,
    agent: usize,
    own: Action,
    radius: u32,
    finish: bool,
) -> Result<f64> {
    let responses = best_responses_with(map, state, agent, own, radius, finish);
    if responses.is_empty() {
        return Err(Error::UndefinedMetric {
            agent,
            reason: "no neighbours",
        });
    }
    Ok(responses.iter().map(|b| b.reward).sum::<f64>() / responses.len() as f64)
}

/// Blends base rewards with cooperativeness; agents with an undefined
/// metric keep their base reward.
pub fn shape(base: &[f64], ic: &[Option<f64>], alpha: f64) -> ShapedStepRewards {
    assert_eq!(base.len(), ic.len(), "one metric value per agent");
    let shaped = base
        .iter()
        .zip(ic)
        .map(|(&r, c)| match c {
            Some(c) => (1.0 - alpha) * r + alpha * c,
            None => r,
        })
        .collect();
    ShapedStepRewards {
        base: base.to_vec(),
        cooperativeness: ic.to_vec(),
        shaped,
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Shaped rewards for a transition already stepped with `joint`.
pub fn shape_transition(
    map: &GridMap,
    state: &WorldState,
    joint: &[Action],
    base: &[f64],
    config: &ShapingConfig,
) -> Result<ShapedStepRewards> {
    if config.alpha == 0.0 {
        return Ok(shape(base, &vec![None; base.len()], 0.0));
    }
    let blended = config.arrival_bonus == ArrivalBonus::Blended;
    let (step_part, bonus): (Vec<f64>, Vec<f64>) = if blended {
        (base.to_vec(), vec![0.0; base.len()])
    } else {
        let out = step(map, state, joint);
        (0..base.len())
            .map(|j| {
                let r = co_reward(&out, j, false);
                (r, base[j] - r)
            })
            .unzip()
    };
    let ic = (0..state.n_agents())
        .map(|i| match config.metric {
            Metric::MeanAll => Ok(mean_excluding(&step_part, i)),
            Metric::ExactMax => defined(ic_exact_max(map, state, i, joint[i], Scope::AllOthers, config)),
            Metric::NeighborFactoredMax => defined(factored_max_with(
                map,
                state,
                i,
                joint[i],
                config.neighbor_radius,
                blended,
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = shape(&step_part, &ic, config.alpha);
    for (j, b) in bonus.into_iter().enumerate() {
        out.base[j] += b;
        out.shaped[j] += b;
    }
    Ok(out)
}
