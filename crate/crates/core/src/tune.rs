//! Zeroth-order search over the cooperation coefficient.
//!
//! Each iteration perturbs alpha by a random `u`, measures the objective at
//! `alpha` and `alpha + u`, and ascends along the finite-difference slope.
//! The objective is the mean undiscounted base reward of a policy
//! fine-tuned under the candidate alpha.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::Scenario;
use crate::error::{Error, Result};
use crate::iql::{evaluate, train_from, QStore, TrainConfig};
use crate::rng::{self, stream};

/// Something whose value can be measured at a given alpha.
pub trait Objective {
    fn measure(&mut self, alpha: f64) -> Result<f64>;

    /// Measures two points. The default runs them one after the other.
    fn measure_pair(&mut self, a: f64, b: f64) -> Result<(f64, f64)> {
        Ok((self.measure(a)?, self.measure(b)?))
    }

    /// Called when the search moves to `alpha`.
    fn accept(&mut self, _alpha: f64) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub initial_alpha: f64,
    /// Largest perturbation magnitude.
    pub epsilon_step: f64,
    /// Stop once an update moves alpha by less than this.
    pub min_step: f64,
    pub rate: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            initial_alpha: 0.5,
            epsilon_step: 0.05,
            min_step: 5e-4,
            rate: 0.05,
            max_iterations: 30,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.initial_alpha) {
            return Err(Error::param("initial_alpha", format!("{} not in [0, 1]", self.initial_alpha)));
        }
        if !(self.epsilon_step > 0.0 && self.epsilon_step <= 0.5) {
            return Err(Error::param("epsilon_step", "must lie in (0, 0.5]"));
        }
        if self.rate.is_nan() || self.rate <= 0.0 || self.min_step.is_nan() || self.min_step < 0.0 {
            return Err(Error::param("rate", "rate must be positive and min_step non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneStep {
    pub iteration: usize,
    pub alpha: f64,
    pub u: f64,
    #[serde(rename = "J_base")]
    pub j_base: f64,
    #[serde(rename = "J_plus")]
    pub j_plus: f64,
    pub gradient: f64,
    pub update: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// The measured alpha with the highest objective.
    pub alpha: f64,
    pub best_j: f64,
    pub history: Vec<TuneStep>,
}

pub fn estimate_gradient(j_plus: f64, j_base: f64, u: f64) -> Result<f64> {
    if u == 0.0 {
        return Err(Error::param("u", "zero perturbation"));
    }
    Ok((j_plus - j_base) / u)
}

/// Uniform on `[-eps, -eps/10] ∪ [eps/10, eps]`, with the sign flipped if
/// `alpha + u` would leave `[0, 1]`.
fn perturbation(alpha: f64, eps: f64, r: &mut rng::Rng) -> f64 {
    let mag = r.gen_range(eps / 10.0..=eps);
    let u = if r.gen::<bool>() { mag } else { -mag };
    if (0.0..=1.0).contains(&(alpha + u)) {
        u
    } else {
        -u
    }
}

pub fn tune(config: &TuneConfig, objective: &mut dyn Objective) -> Result<TuneResult> {
    config.validate()?;
    let mut r = rng::seeded(rng::derive(config.seed, stream::TUNE));
    let mut alpha = config.initial_alpha;
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, alpha);
    for iteration in 0..config.max_iterations {
        let wrap = |e| Error::Tune {
            iteration,
            source: Box::new(e),
        };
        let u = perturbation(alpha, config.epsilon_step, &mut r);
        let (j_base, j_plus) = objective.measure_pair(alpha, alpha + u).map_err(wrap)?;
        let gradient = estimate_gradient(j_plus, j_base, u).map_err(wrap)?;
        let next = (alpha + config.rate * gradient).clamp(0.0, 1.0);
        let update = next - alpha;
        history.push(TuneStep {
            iteration,
            alpha,
            u,
            j_base,
            j_plus,
            gradient,
            update,
        });
        for (j, a) in [(j_base, alpha), (j_plus, alpha + u)] {
            if j > best.0 {
                best = (j, a);
            }
        }
        if update.abs() < config.min_step {
            break;
        }
        objective.accept(next).map_err(wrap)?;
        alpha = next;
    }
    Ok(TuneResult {
        alpha: best.1,
        best_j: best.0,
        history,
    })
}

/// `J(alpha) = -(alpha - optimum)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub optimum: f64,
}

impl Objective for Quadratic {
    fn measure(&mut self, alpha: f64) -> Result<f64> {
        Ok(-(alpha - self.optimum).powi(2))
    }
}

/// Fine-tunes a base table under the candidate alpha and scores it on a
/// fixed scenario suite. Accepting an alpha fine-tunes the base under it.
pub struct TrainerObjective {
    pub base: QStore,
    /// Fine-tuning run; its curriculum budget is the fine-tune budget.
    pub finetune: TrainConfig,
    pub finetune_budget: u64,
    pub suite: Vec<Scenario>,
    pub step_limit: Option<u32>,
}

impl TrainerObjective {
    pub fn new(base: QStore, finetune: TrainConfig, finetune_budget: u64, suite: Vec<Scenario>) -> Result<Self> {
        if suite.is_empty() {
            return Err(Error::param("suite", "empty evaluation suite"));
        }
        Ok(TrainerObjective {
            base,
            finetune,
            finetune_budget,
            suite,
            step_limit: None,
        })
    }

    fn tuned(&self, alpha: f64) -> Result<QStore> {
        if self.finetune_budget == 0 {
            return Ok(self.base.clone());
        }
        let mut cfg = self.finetune.clone();
        cfg.shaping.alpha = alpha;
        let last = cfg.curriculum.last().cloned().ok_or_else(|| Error::param("curriculum", "no stages"))?;
        cfg.curriculum = vec![crate::iql::Stage {
            step_budget: self.finetune_budget,
            ..last
        }];
        Ok(train_from(&cfg, self.base.clone(), 0)?.q)
    }

    fn score(&self, alpha: f64) -> Result<f64> {
        Ok(evaluate(&self.tuned(alpha)?, &self.suite, self.step_limit)?.mean_return)
    }
}

impl Objective for TrainerObjective {
    fn measure(&mut self, alpha: f64) -> Result<f64> {
        self.score(alpha)
    }

    fn measure_pair(&mut self, a: f64, b: f64) -> Result<(f64, f64)> {
        let this = &*self;
        std::thread::scope(|s| {
            let hb = s.spawn(move || this.score(b));
            let ja = this.score(a)?;
            let jb = hb.join().expect("measurement thread panicked")?;
            Ok((ja, jb))
        })
    }

    fn accept(&mut self, alpha: f64) -> Result<()> {
        self.base = self.tuned(alpha)?;
        Ok(())
    }
}

pub fn write_history(path: &Path, history: &[TuneStep]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for h in history {
        w.serialize(h)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, Cell, GridMap, WorldState};
    use crate::iql::Stage;

    #[test]
    fn gradient_arithmetic() {
        assert_eq!(estimate_gradient(5.0, 3.0, 1.0).unwrap(), 2.0);
        assert_eq!(estimate_gradient(3.0, 3.0, 0.1).unwrap(), 0.0);
        assert!((estimate_gradient(-0.20, -0.21, 0.05).unwrap() - 0.2).abs() < 1e-12);
        assert!(estimate_gradient(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn perturbations_stay_in_band_and_range() {
        let mut r = rng::seeded(1);
        for i in 0..2000 {
            let alpha = (i % 101) as f64 / 100.0;
            let u = perturbation(alpha, 0.05, &mut r);
            assert!(u.abs() >= 0.005 && u.abs() <= 0.05);
            assert!((0.0..=1.0).contains(&(alpha + u)));
        }
    }

    #[test]
    fn quadratic_converges() {
        let res = tune(&TuneConfig::default(), &mut Quadratic { optimum: 0.3 }).unwrap();
        assert!((res.alpha - 0.3).abs() < 0.05, "{}", res.alpha);
        assert!(res.history.len() <= 30);
        let first20 = tune(
            &TuneConfig {
                max_iterations: 20,
                ..TuneConfig::default()
            },
            &mut Quadratic { optimum: 0.3 },
        )
        .unwrap();
        assert!((first20.alpha - 0.3).abs() < 0.05);
    }

    #[test]
    fn random_quadratics() {
        let mut r = rng::seeded(77);
        let mut hits = 0;
        for trial in 0..10 {
            let optimum = r.gen_range(0.01..0.99);
            let cfg = TuneConfig {
                seed: trial,
                ..TuneConfig::default()
            };
            let res = tune(&cfg, &mut Quadratic { optimum }).unwrap();
            hits += ((res.alpha - optimum).abs() <= 0.05) as usize;
            // clamping and monotone selection
            for h in &res.history {
                assert!((0.0..=1.0).contains(&h.alpha));
                assert!(h.j_base <= res.best_j && h.j_plus <= res.best_j);
            }
        }
        assert!(hits >= 9, "{hits}/10");
    }

    struct Flat;

    impl Objective for Flat {
        fn measure(&mut self, _: f64) -> Result<f64> {
            Ok(-1.0)
        }
    }

    #[test]
    fn flat_objective_halts_immediately() {
        let res = tune(&TuneConfig::default(), &mut Flat).unwrap();
        assert_eq!(res.history.len(), 1);
        assert_eq!(res.history[0].update, 0.0);
        assert_eq!(res.alpha, 0.5);
    }

    struct Failing(usize);

    impl Objective for Failing {
        fn measure(&mut self, a: f64) -> Result<f64> {
            if self.0 == 0 {
                return Err(Error::Config("trainer down".into()));
            }
            self.0 -= 1;
            Ok(a)
        }
    }

    #[test]
    fn failures_carry_the_iteration() {
        let err = tune(&TuneConfig::default(), &mut Failing(4)).unwrap_err();
        assert!(matches!(err, Error::Tune { iteration: 2, .. }), "{err}");
        assert!(tune(
            &TuneConfig {
                initial_alpha: 1.5,
                ..TuneConfig::default()
            },
            &mut Flat
        )
        .is_err());
    }

    fn one_step_suite() -> Vec<Scenario> {
        let map = GridMap::empty(3, 1).unwrap();
        let st = WorldState::new(&map, vec![Cell::new(0, 0)], vec![Cell::new(2, 0)]).unwrap();
        vec![Scenario::from_world(&map, &st, 0, 1)]
    }

    #[test]
    fn trainer_objective_without_finetuning_is_pure() {
        let suite = one_step_suite();
        let mut q = QStore::default();
        let (map, st) = suite[0].instantiate().unwrap();
        q.set(q.key_for(&map, &st, 0), Action::Right, 1.0);
        let mut obj = TrainerObjective::new(q, TrainConfig::default(), 0, suite).unwrap();
        let a = obj.measure(0.1).unwrap();
        assert!((a + 0.07).abs() < 1e-12);
        assert_eq!(obj.measure_pair(0.1, 0.9).unwrap(), (a, a));
        assert!(TrainerObjective::new(QStore::default(), TrainConfig::default(), 0, vec![]).is_err());
        let res = tune(&TuneConfig::default(), &mut obj).unwrap();
        assert_eq!(res.history.len(), 1);
    }

    #[test]
    fn trainer_objective_smoke() {
        let stage = Stage {
            width: 6,
            height: 6,
            n_agents: 2,
            density: 0.0,
            promote_at_success_rate: 0.9,
            step_budget: 3_000,
            fixed: None,
        };
        let cfg = TrainConfig {
            curriculum: vec![stage.clone()],
            episode_step_limit: Some(32),
            ..TrainConfig::default()
        };
        let base = crate::iql::train(&cfg).unwrap().q;
        let suite: Vec<_> = (0..10).map(|i| cfg.sample(&stage, 900 + i).unwrap()).collect();
        let mut obj = TrainerObjective::new(base, cfg, 500, suite).unwrap();
        let tc = TuneConfig {
            max_iterations: 3,
            min_step: 0.0,
            ..TuneConfig::default()
        };
        let a = tune(&tc, &mut obj).unwrap();
        assert_eq!(a.history.len(), 3);
        assert!(a.history.iter().all(|h| h.j_base.is_finite() && h.j_plus.is_finite()));
    }

    #[test]
    fn history_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let res = tune(&TuneConfig::default(), &mut Quadratic { optimum: 0.4 }).unwrap();
        write_history(&p, &res.history).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iteration,alpha,u,J_base,J_plus,gradient,update");
        assert_eq!(text.lines().count(), res.history.len() + 1);
    }
}
