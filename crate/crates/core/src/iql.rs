//! Tabular independent Q-learning with one table shared by all agents.
//!
//! Agents act on their own observation keys only; shaping reads the full
//! state and is applied on the training side. Training runs a fixed stage
//! list, promoting on a rolling success rate. Episodes come from one or
//! more workers holding read-only table snapshots; a single learner owns
//! the writable table.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::{Arc, RwLock};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{
    default_step_limit, generate_scenario, observe, step, Action, Cell, GridMap, KeyScheme, ObservationKey, Scenario,
    WorldState,
};
use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};
use crate::shaping::{shape_transition, ShapingConfig};
#[cfg(test)]
use crate::shaping::ArrivalBonus;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct QStore {
    table: HashMap<ObservationKey, [f64; Action::COUNT]>,
    default_value: f64,
    scheme: KeyScheme,
}

impl Default for QStore {
    fn default() -> Self {
        QStore::new(0.0, KeyScheme::default())
    }
}

impl QStore {
    pub fn new(default_value: f64, scheme: KeyScheme) -> Self {
        QStore {
            table: HashMap::new(),
            default_value,
            scheme,
        }
    }

    pub fn scheme(&self) -> KeyScheme {
        self.scheme
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn values(&self, key: ObservationKey) -> [f64; Action::COUNT] {
        self.table.get(&key).copied().unwrap_or([self.default_value; Action::COUNT])
    }

    pub fn set(&mut self, key: ObservationKey, action: Action, value: f64) {
        let d = self.default_value;
        self.table.entry(key).or_insert([d; Action::COUNT])[action.index()] = value;
    }

    /// First maximiser in `Action::ALL` order.
    pub fn greedy(&self, key: ObservationKey) -> Action {
        let v = self.values(key);
        let mut best = 0;
        for a in 1..Action::COUNT {
            if v[a] > v[best] {
                best = a;
            }
        }
        Action::ALL[best]
    }

    pub fn max_value(&self, key: ObservationKey) -> f64 {
        self.values(key).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Entries sorted by key.
    pub fn entries(&self) -> Vec<(ObservationKey, [f64; Action::COUNT])> {
        let mut v: Vec<_> = self.table.iter().map(|(&k, &q)| (k, q)).collect();
        v.sort_by_key(|e| e.0);
        v
    }

    pub fn key_for(&self, map: &GridMap, state: &WorldState, agent: usize) -> ObservationKey {
        observe(map, state, agent).key(self.scheme)
    }
}

/// Epsilon-greedy choice. Always consumes one uniform draw, plus one more
/// when exploring.
pub fn select_action(q: &QStore, key: ObservationKey, epsilon: f64, rng: &mut Rng) -> Action {
    if rng.gen::<f64>() < epsilon {
        Action::ALL[rng.gen_range(0..Action::COUNT)]
    } else {
        q.greedy(key)
    }
}

/// One agent's experience from one step. `terminal` is set when the agent
/// starts or ends the step on its goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub agent: usize,
    pub obs_key: ObservationKey,
    pub action: Action,
    pub shaped_reward: f64,
    pub next_obs_key: ObservationKey,
    pub terminal: bool,
}

/// One-step Q-learning update. Returns the TD error before the update.
pub fn td_update(q: &mut QStore, t: &Transition, lr: f64, gamma: f64) -> f64 {
    let bootstrap = if t.terminal { 0.0 } else { gamma * q.max_value(t.next_obs_key) };
    let old = q.values(t.obs_key)[t.action.index()];
    let delta = t.shaped_reward + bootstrap - old;
    q.set(t.obs_key, t.action, old + lr * delta);
    delta
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub success: bool,
    /// Steps taken: the completion step on success, otherwise the limit.
    pub steps: u32,
    /// Undiscounted base reward per agent.
    pub base_returns: Vec<f64>,
}

/// Rolls out one episode with per-agent epsilon-greedy actions from the
/// shared table until every agent is on its goal or the state's step limit
/// is hit. Agents already on their goals keep choosing actions.
pub fn run_episode(
    map: &GridMap,
    start: &WorldState,
    q: &QStore,
    epsilon: f64,
    shaping: &ShapingConfig,
    rng: &mut Rng,
) -> Result<Episode> {
    let n = start.n_agents();
    let mut state = start.clone();
    let mut keys: Vec<_> = (0..n).map(|i| q.key_for(map, &state, i)).collect();
    let mut transitions = Vec::new();
    let mut base_returns = vec![0.0; n];
    while !state.done() {
        let joint: Vec<Action> = keys.iter().map(|&k| select_action(q, k, epsilon, rng)).collect();
        let out = step(map, &state, &joint);
        let shaped = shape_transition(map, &state, &joint, &out.base_rewards, shaping)?;
        let next_keys: Vec<_> = (0..n).map(|i| q.key_for(map, &out.next_state, i)).collect();
        for i in 0..n {
            // An agent's return stops at its goal. Steps taken from the goal
            // are valued by their immediate reward alone; otherwise leaving
            // and re-entering would be worth a fresh arrival bonus.
            let terminal = state.reached(i) || out.next_state.reached(i);
            base_returns[i] += out.base_rewards[i];
            transitions.push(Transition {
                agent: i,
                obs_key: keys[i],
                action: joint[i],
                shaped_reward: shaped.shaped[i],
                next_obs_key: next_keys[i],
                terminal,
            });
        }
        state = out.next_state;
        keys = next_keys;
    }
    let success = state.all_reached();
    Ok(Episode {
        transitions,
        success,
        steps: state.step_count(),
        base_returns,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub success: bool,
    pub steps: u32,
    /// Positions before the first step and after every step.
    pub positions: Vec<Vec<Cell>>,
    pub base_returns: Vec<f64>,
}

/// Greedy rollout of the shared table.
pub fn rollout(map: &GridMap, start: &WorldState, q: &QStore) -> Rollout {
    let mut state = start.clone();
    let mut positions = vec![state.positions().to_vec()];
    let mut base_returns = vec![0.0; state.n_agents()];
    while !state.done() {
        let joint: Vec<Action> = (0..state.n_agents()).map(|i| q.greedy(q.key_for(map, &state, i))).collect();
        let out = step(map, &state, &joint);
        for (r, b) in base_returns.iter_mut().zip(&out.base_rewards) {
            *r += b;
        }
        state = out.next_state;
        positions.push(state.positions().to_vec());
    }
    Rollout {
        success: state.all_reached(),
        steps: state.step_count(),
        positions,
        base_returns,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    /// Failed episodes count at the step limit.
    pub average_steps: f64,
    pub episodes: usize,
    /// Mean over episodes of the per-agent mean undiscounted base reward.
    pub mean_return: f64,
}

/// Greedy evaluation over `scenarios`. `step_limit` overrides the limit
/// stored in each scenario.
pub fn evaluate(q: &QStore, scenarios: &[Scenario], step_limit: Option<u32>) -> Result<EvalReport> {
    evaluate_with(q, scenarios, step_limit, |_, _| {})
}

/// [`evaluate`], passing each rollout to `visit` along with its index.
pub fn evaluate_with(
    q: &QStore,
    scenarios: &[Scenario],
    step_limit: Option<u32>,
    mut visit: impl FnMut(usize, &Rollout),
) -> Result<EvalReport> {
    if scenarios.is_empty() {
        return Err(Error::param("scenarios", "empty evaluation set"));
    }
    let (mut wins, mut steps, mut ret) = (0usize, 0f64, 0f64);
    for (i, sc) in scenarios.iter().enumerate() {
        let (map, mut state) = sc.instantiate()?;
        if let Some(limit) = step_limit {
            state = state.with_step_limit(limit);
        }
        let r = rollout(&map, &state, q);
        wins += r.success as usize;
        steps += r.steps as f64;
        ret += r.base_returns.iter().sum::<f64>() / r.base_returns.len() as f64;
        visit(i, &r);
    }
    let n = scenarios.len() as f64;
    Ok(EvalReport {
        success_rate: wins as f64 / n,
        average_steps: steps / n,
        episodes: scenarios.len(),
        mean_return: ret / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    #[serde(default)]
    pub density: f64,
    pub promote_at_success_rate: f64,
    /// Environment steps before the stage ends without promotion.
    pub step_budget: u64,
    /// Replay this layout every episode instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Scenario>,
}

impl Stage {
    fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRate {
    pub initial: f64,
    /// Global step counts at which the rate is multiplied by `factor`.
    pub milestones: Vec<u64>,
    pub factor: f64,
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate {
            initial: 0.05,
            milestones: vec![1_000_000, 2_000_000],
            factor: 0.5,
        }
    }
}

impl LearningRate {
    pub fn at(&self, step: u64) -> f64 {
        let k = self.milestones.iter().filter(|&&m| step >= m).count();
        self.initial * self.factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exploration {
    pub start: f64,
    pub end: f64,
    /// Linear decay length in stage steps; half the stage budget if unset.
    pub decay_steps: Option<u64>,
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration {
            start: 1.0,
            end: 0.05,
            decay_steps: None,
        }
    }
}

impl Exploration {
    pub fn at(&self, stage_step: u64, stage_budget: u64) -> f64 {
        let decay = self.decay_steps.unwrap_or(stage_budget / 2).max(1);
        let f = (stage_step as f64 / decay as f64).min(1.0);
        self.start + (self.end - self.start) * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnTimeout {
    #[default]
    Continue,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Sampled updates per transition received.
    pub samples_per_transition: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: LearningRate,
    pub epsilon: Exploration,
    /// Per-episode step limit; the size-based default if unset.
    pub episode_step_limit: Option<u32>,
    pub curriculum: Vec<Stage>,
    pub seed: u64,
    pub shaping: ShapingConfig,
    pub key_scheme: KeyScheme,
    pub workers: usize,
    pub queue_capacity: usize,
    /// Episodes absorbed between snapshot refreshes when `workers > 1`.
    pub refresh_every: usize,
    pub replay: Option<ReplayConfig>,
    /// Episodes in the rolling success window.
    pub success_window: usize,
    pub on_timeout: OnTimeout,
    /// Log a row every this many environment steps.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            learning_rate: LearningRate::default(),
            epsilon: Exploration::default(),
            episode_step_limit: None,
            curriculum: vec![Stage {
                width: 10,
                height: 10,
                n_agents: 4,
                density: 0.3,
                promote_at_success_rate: 0.9,
                step_budget: 1_000_000,
                fixed: None,
            }],
            seed: 0,
            shaping: ShapingConfig::default(),
            key_scheme: KeyScheme::default(),
            workers: 1,
            queue_capacity: 64,
            refresh_every: 4,
            replay: None,
            success_window: 100,
            on_timeout: OnTimeout::Continue,
            log_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.shaping.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", format!("{} not in [0, 1]", self.gamma)));
        }
        let lr = &self.learning_rate;
        if !(lr.initial > 0.0 && lr.initial <= 1.0) || !(lr.factor > 0.0 && lr.factor <= 1.0) {
            return Err(Error::param("learning_rate", "initial and factor must lie in (0, 1]"));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return Err(Error::param("epsilon", "start and end must lie in [0, 1]"));
        }
        if self.curriculum.is_empty() {
            return Err(Error::param("curriculum", "no stages"));
        }
        for (i, s) in self.curriculum.iter().enumerate() {
            if !(s.promote_at_success_rate > 0.0 && s.promote_at_success_rate <= 1.0) {
                return Err(Error::param("curriculum", format!("stage {i}: promote_at_success_rate not in (0, 1]")));
            }
            if s.n_agents == 0 || s.step_budget == 0 {
                return Err(Error::param("curriculum", format!("stage {i}: n_agents and step_budget must be >= 1")));
            }
            if i > 0 {
                let p = &self.curriculum[i - 1];
                if s.area() < p.area() || s.n_agents < p.n_agents {
                    return Err(Error::param("curriculum", format!("stage {i} is easier than stage {}", i - 1)));
                }
            }
        }
        if self.workers == 0 || self.queue_capacity == 0 || self.refresh_every == 0 || self.success_window == 0 {
            return Err(Error::param("workers", "workers, queue_capacity, refresh_every and success_window must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(Error::param("log_every", "must be >= 1"));
        }
        if let Some(r) = self.replay {
            if r.capacity == 0 {
                return Err(Error::param("replay", "capacity must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn step_limit(&self, stage: &Stage) -> u32 {
        self.episode_step_limit.unwrap_or_else(|| default_step_limit(stage.width, stage.height))
    }

    /// The scenario an episode is played on, from its seed.
    pub fn sample(&self, stage: &Stage, episode_seed: u64) -> Result<Scenario> {
        if let Some(sc) = &stage.fixed {
            return Ok(sc.clone());
        }
        generate_scenario(
            stage.width,
            stage.height,
            stage.density,
            stage.n_agents,
            episode_seed,
            self.step_limit(stage),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub stage: usize,
    pub success_rate: f64,
    pub mean_sq_td_error: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Promoted,
    Completed,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: usize,
    pub status: StageStatus,
    pub steps: u64,
    pub episodes: u64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub q: QStore,
    pub log: Vec<LogRow>,
    pub stages: Vec<StageOutcome>,
    /// Global step counter at the end, including any resumed steps.
    pub steps: u64,
    pub aborted: bool,
}

pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    train_from(config, QStore::new(0.0, config.key_scheme), 0)
}

/// Continues training `q`, numbering steps from `start_step`.
pub fn train_from(config: &TrainConfig, q: QStore, start_step: u64) -> Result<TrainReport> {
    config.validate()?;
    if q.scheme() != config.key_scheme {
        return Err(Error::Config(format!(
            "table uses {:?} keys, config asks for {:?}",
            q.scheme(),
            config.key_scheme
        )));
    }
    let learner = Learner::new(config, q, start_step);
    if config.workers == 1 {
        train_inline(config, learner)
    } else {
        train_parallel(config, learner)
    }
}

struct Played {
    stage: usize,
    episode: Episode,
}

fn play(config: &TrainConfig, stage: usize, q: &QStore, epsilon: f64, episode_seed: u64) -> Result<Played> {
    let sc = config.sample(&config.curriculum[stage], episode_seed)?;
    let (map, state) = sc.instantiate()?;
    let mut rng = rng::seeded(rng::derive(episode_seed, stream::ACTIONS));
    let episode = run_episode(&map, &state, q, epsilon, &config.shaping, &mut rng)?;
    Ok(Played { stage, episode })
}

fn train_inline(config: &TrainConfig, mut learner: Learner) -> Result<TrainReport> {
    let base = rng::derive(config.seed, stream::EPISODE);
    let mut k = 0u64;
    while !learner.finished {
        let p = play(config, learner.stage, &learner.q, learner.epsilon(), rng::derive(base, k))?;
        learner.absorb(p);
        k += 1;
    }
    Ok(learner.finish())
}

struct Shared {
    q: Arc<QStore>,
    stage: usize,
    epsilon: f64,
}

fn train_parallel(config: &TrainConfig, mut learner: Learner) -> Result<TrainReport> {
    let shared = RwLock::new(Shared {
        q: Arc::new(learner.q.clone()),
        stage: learner.stage,
        epsilon: learner.epsilon(),
    });
    let stop = AtomicBool::new(false);
    let (tx, rx) = sync_channel::<Result<Played>>(config.queue_capacity);
    let result = std::thread::scope(|scope| {
        for w in 0..config.workers {
            let tx = tx.clone();
            let (shared, stop) = (&shared, &stop);
            let base = rng::derive(rng::derive(config.seed, stream::WORKER), w as u64);
            scope.spawn(move || {
                let mut k = 0u64;
                while !stop.load(Ordering::Relaxed) {
                    let (q, stage, eps) = {
                        let s = shared.read().expect("snapshot lock");
                        (Arc::clone(&s.q), s.stage, s.epsilon)
                    };
                    let out = play(config, stage, &q, eps, rng::derive(base, k));
                    k += 1;
                    let failed = out.is_err();
                    if tx.send(out).is_err() || failed {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut since_refresh = 0;
        let outcome = loop {
            let Ok(msg) = rx.recv() else {
                break Err(Error::Config("all workers exited".into()));
            };
            match msg {
                Ok(p) => learner.absorb(p),
                Err(e) => break Err(e),
            }
            if learner.finished {
                break Ok(());
            }
            since_refresh += 1;
            if since_refresh >= config.refresh_every {
                since_refresh = 0;
                let mut s = shared.write().expect("snapshot lock");
                *s = Shared {
                    q: Arc::new(learner.q.clone()),
                    stage: learner.stage,
                    epsilon: learner.epsilon(),
                };
            }
        };
        stop.store(true, Ordering::Relaxed);
        drop(rx);
        outcome
    });
    result.map(|()| learner.finish())
}

struct Learner<'a> {
    config: &'a TrainConfig,
    q: QStore,
    step: u64,
    stage: usize,
    stage_step: u64,
    stage_episodes: u64,
    window: VecDeque<bool>,
    sq_td: f64,
    updates: u64,
    next_log: u64,
    log: Vec<LogRow>,
    stages: Vec<StageOutcome>,
    replay: VecDeque<Transition>,
    replay_rng: Rng,
    finished: bool,
    aborted: bool,
}

impl<'a> Learner<'a> {
    fn new(config: &'a TrainConfig, q: QStore, start_step: u64) -> Self {
        Learner {
            config,
            q,
            step: start_step,
            stage: 0,
            stage_step: 0,
            stage_episodes: 0,
            window: VecDeque::with_capacity(config.success_window),
            sq_td: 0.0,
            updates: 0,
            next_log: start_step + config.log_every,
            log: Vec::new(),
            stages: Vec::new(),
            replay: VecDeque::new(),
            replay_rng: rng::seeded(rng::derive(config.seed, stream::LEARNER)),
            finished: false,
            aborted: false,
        }
    }

    fn current(&self) -> &Stage {
        &self.config.curriculum[self.stage]
    }

    fn epsilon(&self) -> f64 {
        self.config.epsilon.at(self.stage_step, self.current().step_budget)
    }

    fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().filter(|&&w| w).count() as f64 / self.window.len() as f64
        }
    }

    fn update(&mut self, t: &Transition) {
        let lr = self.config.learning_rate.at(self.step);
        let d = td_update(&mut self.q, t, lr, self.config.gamma);
        self.sq_td += d * d;
        self.updates += 1;
    }

    fn absorb(&mut self, p: Played) {
        if self.finished {
            return;
        }
        let ep = p.episode;
        // Experience from a stage already left still trains the table.
        self.step += ep.steps as u64;
        match self.config.replay {
            None => {
                // Newest first, so a terminal reward reaches the start of
                // the episode in one pass.
                for t in ep.transitions.iter().rev() {
                    self.update(t);
                }
            }
            Some(r) => {
                for t in &ep.transitions {
                    if self.replay.len() == r.capacity {
                        self.replay.pop_front();
                    }
                    self.replay.push_back(*t);
                }
                for _ in 0..ep.transitions.len() * r.samples_per_transition {
                    let t = self.replay[self.replay_rng.gen_range(0..self.replay.len())];
                    self.update(&t);
                }
            }
        }
        if p.stage == self.stage {
            self.stage_step += ep.steps as u64;
            self.stage_episodes += 1;
            if self.window.len() == self.config.success_window {
                self.window.pop_front();
            }
            self.window.push_back(ep.success);
        }
        if self.step >= self.next_log {
            self.push_row();
            self.next_log = (self.step / self.config.log_every + 1) * self.config.log_every;
        }
        self.advance_stage();
    }

    fn push_row(&mut self) {
        if self.updates == 0 {
            return;
        }
        self.log.push(LogRow {
            step: self.step,
            stage: self.stage,
            success_rate: self.success_rate(),
            mean_sq_td_error: self.sq_td / self.updates as f64,
            epsilon: self.epsilon(),
            alpha: self.config.shaping.alpha,
        });
        self.sq_td = 0.0;
        self.updates = 0;
    }

    fn advance_stage(&mut self) {
        let stage = self.current().clone();
        let last = self.stage + 1 == self.config.curriculum.len();
        let rate = self.success_rate();
        let converged = self.window.len() == self.config.success_window && rate >= stage.promote_at_success_rate;
        let status = if !last && converged {
            StageStatus::Promoted
        } else if self.stage_step >= stage.step_budget {
            if last && converged {
                StageStatus::Completed
            } else {
                StageStatus::TimedOut
            }
        } else {
            return;
        };
        self.push_row();
        self.stages.push(StageOutcome {
            stage: self.stage,
            status,
            steps: self.stage_step,
            episodes: self.stage_episodes,
            success_rate: rate,
        });
        if last || (status == StageStatus::TimedOut && self.config.on_timeout == OnTimeout::Abort) {
            self.finished = true;
            self.aborted = !last;
            return;
        }
        self.stage += 1;
        self.stage_step = 0;
        self.stage_episodes = 0;
        self.window.clear();
    }

    fn finish(self) -> TrainReport {
        TrainReport {
            q: self.q,
            log: self.log,
            stages: self.stages,
            steps: self.step,
            aborted: self.aborted,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    format_version: u32,
    key_scheme: KeyScheme,
    default_value: f64,
    shaping: ShapingConfig,
    steps: u64,
    entries: Vec<(ObservationKey, [f64; Action::COUNT])>,
}

/// A persisted table with the shaping settings and step count it was
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub q: QStore,
    pub shaping: ShapingConfig,
    pub steps: u64,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        let file = SnapshotFile {
            format_version: SNAPSHOT_VERSION,
            key_scheme: self.q.scheme,
            default_value: self.q.default_value,
            shaping: self.shaping,
            steps: self.steps,
            entries: self.q.entries(),
        };
        serde_json::to_string(&file).expect("snapshot serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::SnapshotFormat(e.to_string()))?;
        match v.get("format_version").and_then(|x| x.as_u64()) {
            Some(n) if n == SNAPSHOT_VERSION as u64 => {}
            Some(n) => {
                return Err(Error::SnapshotFormat(format!(
                    "format version {n}, this build reads {SNAPSHOT_VERSION}"
                )))
            }
            None => return Err(Error::SnapshotFormat("missing format_version".into())),
        }
        let f: SnapshotFile = serde_json::from_value(v).map_err(|e| Error::SnapshotFormat(e.to_string()))?;
        let mut q = QStore::new(f.default_value, f.key_scheme);
        q.table = f.entries.into_iter().collect();
        Ok(Snapshot {
            q,
            shaping: f.shaping,
            steps: f.steps,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Appends log rows as CSV, writing the header first if the file is new
/// or empty.
pub fn append_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{load_map, reward};

    fn key(n: u64) -> ObservationKey {
        ObservationKey(n)
    }

    #[test]
    fn unseen_keys_read_default() {
        let q = QStore::new(-1.5, KeyScheme::Local);
        assert_eq!(q.values(key(42)), [-1.5; 5]);
        let mut q = QStore::default();
        q.set(key(1), Action::Left, 2.0);
        assert_eq!(q.values(key(1)), [0.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(q.values(key(2)), [0.0; 5]);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn greedy_breaks_ties_in_action_order() {
        let mut q = QStore::default();
        let mut r = rng::seeded(0);
        assert_eq!(select_action(&q, key(0), 0.0, &mut r), Action::Up);
        q.set(key(0), Action::Up, 1.0);
        assert_eq!(select_action(&q, key(0), 0.0, &mut r), Action::Up);
        q.set(key(1), Action::Right, 1.0);
        q.set(key(1), Action::Stop, 1.0);
        assert_eq!(q.greedy(key(1)), Action::Right);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = QStore::default();
        let mut r = rng::seeded(11);
        let mut counts = [0f64; 5];
        let n = 10_000;
        for _ in 0..n {
            counts[select_action(&q, key(0), 1.0, &mut r).index()] += 1.0;
        }
        let e = n as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
        // 0.999 quantile of chi-square with 4 degrees of freedom
        assert!(chi2 < 18.467, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn td_update_basics() {
        let mut q = QStore::default();
        let t = Transition {
            agent: 0,
            obs_key: key(1),
            action: Action::Down,
            shaped_reward: 3.0,
            next_obs_key: key(2),
            terminal: true,
        };
        assert_eq!(td_update(&mut q, &t, 1.0, 0.99), 3.0);
        assert_eq!(q.values(key(1))[Action::Down.index()], 3.0);
        assert_eq!(q.values(key(1))[Action::Up.index()], 0.0);

        let mut q = QStore::default();
        let lp = Transition {
            shaped_reward: 0.0,
            next_obs_key: key(1),
            terminal: false,
            ..t
        };
        for _ in 0..10 {
            td_update(&mut q, &lp, 0.5, 0.9);
        }
        assert_eq!(q.values(key(1)), [0.0; 5]);
    }

    #[test]
    fn two_state_chain_matches_bellman_solution() {
        // s0 -> s1 with reward 0, s1 -> end with reward 1.
        let a = Transition {
            agent: 0,
            obs_key: key(0),
            action: Action::Right,
            shaped_reward: 0.0,
            next_obs_key: key(1),
            terminal: false,
        };
        let b = Transition {
            obs_key: key(1),
            shaped_reward: 1.0,
            next_obs_key: key(2),
            terminal: true,
            ..a
        };
        let mut q = QStore::default();
        for _ in 0..200 {
            td_update(&mut q, &a, 0.5, 0.9);
            td_update(&mut q, &b, 0.5, 0.9);
        }
        assert!((q.max_value(key(0)) - 0.9).abs() < 1e-6);
        assert!((q.max_value(key(1)) - 1.0).abs() < 1e-6);
    }

    fn single(map: &str, at: (i32, i32), goal: (i32, i32), limit: u32) -> (GridMap, WorldState) {
        let m = load_map(map).unwrap();
        let s = WorldState::new(&m, vec![Cell::new(at.0, at.1)], vec![Cell::new(goal.0, goal.1)])
            .unwrap()
            .with_step_limit(limit);
        (m, s)
    }

    #[test]
    fn episode_next_to_goal() {
        let (m, s) = single("...\n", (0, 0), (1, 0), 10);
        let mut q = QStore::default();
        let k = q.key_for(&m, &s, 0);
        q.set(k, Action::Right, 1.0);
        let ep = run_episode(&m, &s, &q, 0.0, &ShapingConfig::default(), &mut rng::seeded(0)).unwrap();
        assert!(ep.success);
        assert_eq!(ep.steps, 1);
        assert_eq!(ep.transitions.len(), 1);
        assert!(ep.transitions[0].terminal);
        assert!((ep.base_returns[0] - (reward::MOVE_TOWARD + reward::FINISH)).abs() < 1e-12);
    }

    #[test]
    fn zero_step_limit_is_an_empty_failure() {
        let (m, s) = single("...\n", (0, 0), (2, 0), 0);
        let ep = run_episode(&m, &s, &QStore::default(), 1.0, &ShapingConfig::default(), &mut rng::seeded(0)).unwrap();
        assert!(ep.transitions.is_empty());
        assert!(!ep.success);
    }

    fn corridor_table(k: i32) -> (Scenario, QStore) {
        let text = ".".repeat(k as usize + 1) + "\n";
        let (m, s) = single(&text, (0, 0), (k, 0), 50);
        let mut q = QStore::default();
        let mut st = s.clone();
        while !st.all_reached() {
            let kk = q.key_for(&m, &st, 0);
            q.set(kk, Action::Right, 1.0);
            st = step(&m, &st, &[Action::Right]).next_state;
        }
        (Scenario::from_world(&m, &s, 0, 50), q)
    }

    #[test]
    fn evaluate_forced_corridor() {
        let (sc, q) = corridor_table(6);
        let r = evaluate(&q, &[sc.clone(), sc], None).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.average_steps, 6.0);
        assert_eq!(r.episodes, 2);
        assert!(evaluate(&q, &[], None).is_err());
    }

    #[test]
    fn failures_count_at_the_limit() {
        let (sc, _) = corridor_table(6);
        let r = evaluate(&QStore::default(), &[sc], Some(20)).unwrap();
        assert_eq!(r.success_rate, 0.0);
        assert_eq!(r.average_steps, 20.0);
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            curriculum: vec![Stage {
                width: 6,
                height: 6,
                n_agents: 1,
                density: 0.0,
                promote_at_success_rate: 0.95,
                step_budget: 50_000,
                fixed: None,
            }],
            episode_step_limit: Some(64),
            seed,
            log_every: 500,
            ..TrainConfig::default()
        }
    }

    fn eval_set(stage: &Stage, n: u64, seed: u64) -> Vec<Scenario> {
        (0..n)
            .map(|i| generate_scenario(stage.width, stage.height, stage.density, stage.n_agents, seed + i, 64).unwrap())
            .collect()
    }

    #[test]
    fn single_agent_learns_empty_room() {
        let cfg = small_config(3);
        let rep = train(&cfg).unwrap();
        assert!(rep.steps <= 50_000 + 64);
        let r = evaluate(&rep.q, &eval_set(&cfg.curriculum[0], 200, 10_000), None).unwrap();
        assert!(r.success_rate >= 0.95, "{r:?}");
        let stage = &rep.stages[0];
        assert_eq!(stage.status, StageStatus::Completed);
        // squared TD error falls over the stage
        let n = rep.log.len() / 10;
        let head: f64 = rep.log[..n].iter().map(|r| r.mean_sq_td_error).sum::<f64>() / n as f64;
        let tail: f64 = rep.log[rep.log.len() - n..].iter().map(|r| r.mean_sq_td_error).sum::<f64>() / n as f64;
        assert!(tail < head, "head {head}, tail {tail}");
    }

    #[test]
    fn single_worker_training_is_deterministic() {
        let mut cfg = small_config(5);
        cfg.curriculum[0].step_budget = 5_000;
        cfg.curriculum[0].n_agents = 2;
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.q, b.q);
        assert_eq!(a.log, b.log);
        assert_ne!(train(&TrainConfig { seed: 6, ..cfg }).unwrap().q, a.q);
    }

    /// Plain IQL written against base rewards only, with the same seeding
    /// and draw order as the trainer.
    fn plain_iql(cfg: &TrainConfig) -> QStore {
        let stage = &cfg.curriculum[0];
        let base = rng::derive(cfg.seed, stream::EPISODE);
        let mut q = QStore::default();
        let (mut step_no, mut stage_step) = (0u64, 0u64);
        let mut k = 0;
        while stage_step < stage.step_budget {
            let eps = cfg.epsilon.at(stage_step, stage.step_budget);
            let seed = rng::derive(base, k);
            let (map, start) = cfg.sample(stage, seed).unwrap().instantiate().unwrap();
            let mut r = rng::seeded(rng::derive(seed, stream::ACTIONS));
            let mut s = start;
            let mut batch = Vec::new();
            while !s.done() {
                let keys: Vec<_> = (0..s.n_agents()).map(|i| q.key_for(&map, &s, i)).collect();
                let joint: Vec<_> = keys.iter().map(|&kk| select_action(&q, kk, eps, &mut r)).collect();
                let out = step(&map, &s, &joint);
                for i in 0..s.n_agents() {
                    let next = q.key_for(&map, &out.next_state, i);
                    batch.push((keys[i], joint[i], out.base_rewards[i], next, s.reached(i) || out.next_state.reached(i)));
                }
                s = out.next_state;
            }
            for (kk, a, rw, next, term) in batch.into_iter().rev() {
                let lr = cfg.learning_rate.at(step_no + s.step_count() as u64);
                let target = rw + if term { 0.0 } else { cfg.gamma * q.max_value(next) };
                let old = q.values(kk)[a.index()];
                q.set(kk, a, old + lr * (target - old));
            }
            step_no += s.step_count() as u64;
            stage_step += s.step_count() as u64;
            k += 1;
        }
        q
    }

    #[test]
    fn zero_alpha_matches_plain_iql() {
        let mut cfg = small_config(8);
        cfg.curriculum[0].step_budget = 3_000;
        cfg.curriculum[0].n_agents = 3;
        cfg.curriculum[0].density = 0.2;
        cfg.shaping = ShapingConfig::default().with_alpha(0.0);
        cfg.learning_rate.milestones = vec![1_000];
        assert_eq!(train(&cfg).unwrap().q, plain_iql(&cfg));
    }

    #[test]
    fn curriculum_promotes_and_times_out() {
        let mut cfg = small_config(1);
        let easy = Stage {
            width: 4,
            height: 4,
            n_agents: 1,
            density: 0.0,
            promote_at_success_rate: 0.5,
            step_budget: 20_000,
            fixed: None,
        };
        cfg.curriculum = vec![easy.clone(), easy.clone()];
        cfg.curriculum[1].step_budget = 500;
        cfg.success_window = 20;
        let rep = train(&cfg).unwrap();
        assert_eq!(rep.stages[0].status, StageStatus::Promoted);
        assert_eq!(rep.stages.len(), 2);

        let mut hard = cfg.clone();
        hard.curriculum[0].promote_at_success_rate = 1.0;
        hard.curriculum[0].step_budget = 50;
        hard.success_window = 1000;
        hard.on_timeout = OnTimeout::Abort;
        let rep = train(&hard).unwrap();
        assert_eq!(rep.stages.len(), 1);
        assert_eq!(rep.stages[0].status, StageStatus::TimedOut);
        assert!(rep.aborted);
        hard.on_timeout = OnTimeout::Continue;
        let rep = train(&hard).unwrap();
        assert_eq!(rep.stages.len(), 2);
        assert!(!rep.aborted);
    }

    #[test]
    fn shaped_policy_avoids_blocking_route() {
        let layout = crate::cases::crossing_corridor();
        let sc = Scenario::from_world(&layout.map, &layout.state, 0, 16);
        let yield_path: Vec<Cell> = {
            let mut s = layout.state.clone();
            crate::cases::crossing_yield()
                .iter()
                .map(|j| {
                    s = step(&layout.map, &s, j).next_state;
                    s.positions()[0]
                })
                .collect()
        };
        let seeds = 10usize;
        let mut yielded = 0;
        for seed in 0..seeds as u64 {
            let cfg = TrainConfig {
                curriculum: vec![Stage {
                    width: 4,
                    height: 3,
                    n_agents: 2,
                    density: 0.0,
                    promote_at_success_rate: 1.0,
                    step_budget: 100_000,
                    fixed: Some(sc.clone()),
                }],
                learning_rate: LearningRate {
                    initial: 0.2,
                    milestones: vec![25_000, 50_000, 75_000],
                    factor: 0.5,
                },
                shaping: ShapingConfig {
                    arrival_bonus: ArrivalBonus::Separate,
                    ..ShapingConfig::default()
                },
                seed,
                ..TrainConfig::default()
            };
            let rep = train(&cfg).unwrap();
            let r = rollout(&layout.map, &layout.state.clone().with_step_limit(16), &rep.q);
            let path: Vec<Cell> = r.positions[1..].iter().take(3).map(|p| p[0]).collect();
            yielded += (r.success && path == yield_path) as usize;
        }
        assert!(yielded * 10 >= seeds * 8, "{yielded}/{seeds}");
    }

    #[test]
    fn rejects_bad_configs() {
        let ok = small_config(0);
        let mut c = ok.clone();
        c.curriculum[0].promote_at_success_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.curriculum.insert(0, Stage { width: 8, ..ok.curriculum[0].clone() });
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.curriculum.clear();
        assert!(c.validate().is_err());
        assert!(TrainConfig { workers: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn parallel_workers_learn() {
        let mut cfg = small_config(2);
        cfg.workers = 4;
        cfg.curriculum[0].step_budget = 30_000;
        let rep = train(&cfg).unwrap();
        let r = evaluate(&rep.q, &eval_set(&cfg.curriculum[0], 100, 500), None).unwrap();
        assert!(r.success_rate >= 0.9, "{r:?}");
    }

    #[test]
    fn replay_buffer_trains() {
        let mut cfg = small_config(4);
        cfg.replay = Some(ReplayConfig {
            capacity: 2_000,
            samples_per_transition: 1,
        });
        cfg.curriculum[0].step_budget = 30_000;
        let rep = train(&cfg).unwrap();
        let r = evaluate(&rep.q, &eval_set(&cfg.curriculum[0], 100, 900), None).unwrap();
        assert!(r.success_rate >= 0.9, "{r:?}");
    }

    #[test]
    fn resume_continues_step_counter() {
        let mut cfg = small_config(9);
        cfg.curriculum[0].step_budget = 1_000;
        let first = train(&cfg).unwrap();
        let second = train_from(&cfg, first.q.clone(), first.steps).unwrap();
        assert!(second.steps >= first.steps + 1_000);
        assert!(second.log[0].step > first.steps);
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let mut q = QStore::new(0.25, KeyScheme::Full);
        q.set(key(7), Action::Stop, -0.1234567890123);
        q.set(key(3), Action::Up, 1e-17);
        let snap = Snapshot {
            q,
            shaping: ShapingConfig::default(),
            steps: 77,
        };
        let text = snap.to_json();
        assert_eq!(Snapshot::from_json(&text).unwrap(), snap);
        let bumped = text.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(Snapshot::from_json(&bumped), Err(Error::SnapshotFormat(m)) if m.contains("version 2")));
        assert!(Snapshot::from_json("{}").is_err());
    }

    #[test]
    fn log_appends_with_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let row = LogRow {
            step: 10,
            stage: 0,
            success_rate: 0.5,
            mean_sq_td_error: 0.25,
            epsilon: 1.0,
            alpha: 0.1675,
        };
        append_log(&p, &[row]).unwrap();
        append_log(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,stage,success_rate,mean_sq_td_error,epsilon,alpha");
        assert_eq!(lines.len(), 3);
    }
}
