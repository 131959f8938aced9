//! Run configs, manifests and the five commands behind the `cors` binary.
//!
//! Every command writes `manifest.json` into its output directory. The
//! manifest holds the resolved config, so `cors run <manifest>` repeats the
//! run. Relative paths in a config, inputs included, resolve against
//! `CORS_OUTPUT_ROOT` when it is set.

pub mod verify;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{default_step_limit, generate_scenario, Scenario};
use crate::error::{Error, Result};
use crate::iql::{self, evaluate_with, train_from, QStore, Snapshot, TrainConfig};
use crate::rng;
use crate::tune::{self, Quadratic, TrainerObjective, TuneConfig};

pub use verify::{Check, Suite};

pub const OUTPUT_ROOT_VAR: &str = "CORS_OUTPUT_ROOT";
pub const MANIFEST: &str = "manifest.json";
pub const METRICS_SCHEMA: &str = "# metrics v1: average_steps counts failed episodes at their step limit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    GenScenarios(GenConfig),
    Train(TrainRun),
    Eval(EvalRun),
    Verify(VerifyRun),
    TuneAlpha(TuneRun),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenScenarios(_) => "gen-scenarios",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Verify(_) => "verify",
            Command::TuneAlpha(_) => "tune-alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub density: f64,
    pub n_agents: usize,
    pub count: usize,
    /// Defaults by map size.
    #[serde(default)]
    pub step_limit: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    #[serde(default)]
    pub train: TrainConfig,
    /// Continue from this snapshot, keeping its step counter.
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub policies: Vec<PathBuf>,
    /// A directory written by `gen-scenarios`.
    pub scenarios: PathBuf,
    #[serde(default)]
    pub step_limit: Option<u32>,
    #[serde(default)]
    pub traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRun {
    pub suite: Suite,
    #[serde(default = "default_igm_instances")]
    pub igm_instances: usize,
}

fn default_igm_instances() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneRun {
    #[serde(default)]
    pub tune: TuneConfig,
    pub objective: ObjectiveSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// `J(alpha) = -(alpha - optimum)^2`.
    Mock { optimum: f64 },
    Trainer {
        /// Starting table; an empty one if absent.
        #[serde(default)]
        policy: Option<PathBuf>,
        #[serde(default)]
        finetune: Box<TrainConfig>,
        finetune_budget: u64,
        suite: GenConfig,
    },
}

/// The resolved config and what the run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub results: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub map_size: String,
    pub n_agents: usize,
    pub density: f64,
    pub episodes: usize,
    pub success_rate: f64,
    pub average_steps: f64,
    pub alpha: f64,
    pub metric_variant: String,
    pub seed: u64,
}

/// Index written next to generated scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioIndex {
    pub width: usize,
    pub height: usize,
    pub density: f64,
    pub n_agents: usize,
    pub seed: u64,
    pub step_limit: u32,
    pub files: Vec<String>,
}

/// Verification failures, reported separately from errors.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: Manifest,
    pub failed_checks: usize,
}

impl RunConfig {
    /// Reads a run config, or the config stored inside a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let v = match v.get("config") {
            Some(c) if v.get("results").is_some() => c.clone(),
            _ => v,
        };
        serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copies the run seed into every nested seed and fills derived
    /// defaults, so the manifest is complete.
    pub fn resolve(mut self) -> Self {
        let seed = self.seed;
        match &mut self.command {
            Command::GenScenarios(g) => {
                g.step_limit.get_or_insert(default_step_limit(g.width, g.height));
            }
            Command::Train(t) => t.train.seed = seed,
            Command::Eval(_) | Command::Verify(_) => {}
            Command::TuneAlpha(t) => {
                t.tune.seed = seed;
                if let ObjectiveSpec::Trainer { finetune, suite, .. } = &mut t.objective {
                    finetune.seed = seed;
                    suite.step_limit.get_or_insert(default_step_limit(suite.width, suite.height));
                }
            }
        }
        self
    }

    /// `out_dir`, under the output root if relative.
    pub fn output_dir(&self) -> PathBuf {
        under_root(&self.out_dir)
    }
}

/// `path` under the output root if it is relative and the root is set.
pub fn under_root(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Executes a run and writes its manifest.
pub fn execute(config: RunConfig) -> Result<Outcome> {
    let config = config.resolve();
    let dir = config.output_dir();
    mkdir(&dir)?;
    let mut failed_checks = 0;
    let results = match &config.command {
        Command::GenScenarios(g) => gen_scenarios(g, config.seed, &dir)?,
        Command::Train(t) => train(t, &dir)?,
        Command::Eval(e) => eval(e, &dir)?,
        Command::Verify(v) => {
            let checks = verify::run(v.suite, v.igm_instances, config.seed)?;
            failed_checks = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!(
                    "{} {:?}/{}: {} ({})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.suite,
                    c.name,
                    c.anchor,
                    c.detail
                );
            }
            serde_json::json!({ "checks": checks, "failed": failed_checks })
        }
        Command::TuneAlpha(t) => tune_alpha(t, &dir)?,
    };
    let manifest = Manifest {
        command: config.command.name().into(),
        config,
        results,
    };
    write(
        &dir.join(MANIFEST),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    Ok(Outcome {
        manifest,
        failed_checks,
    })
}

pub fn scenario_file(i: usize) -> String {
    format!("case_{i:04}.json")
}

/// Generates `count` scenarios; case `i` uses seed `derive(seed, i)`.
pub fn generate_batch(g: &GenConfig, seed: u64) -> Result<Vec<Scenario>> {
    let limit = g.step_limit.unwrap_or(default_step_limit(g.width, g.height));
    (0..g.count)
        .map(|i| {
            generate_scenario(g.width, g.height, g.density, g.n_agents, rng::derive(seed, i as u64), limit).map_err(|e| match e {
                Error::Generation { seed, message } => Error::Generation {
                    seed,
                    message: format!("case {i}: {message}"),
                },
                e => e,
            })
        })
        .collect()
}

fn gen_scenarios(g: &GenConfig, seed: u64, dir: &Path) -> Result<serde_json::Value> {
    if g.count == 0 {
        eprintln!("warning: count is 0, writing an empty index");
    }
    let batch = generate_batch(g, seed)?;
    let sdir = dir.join("scenarios");
    mkdir(&sdir)?;
    let mut files = Vec::new();
    for (i, sc) in batch.iter().enumerate() {
        sc.instantiate()?;
        let name = scenario_file(i);
        write(&sdir.join(&name), &sc.to_json())?;
        files.push(name);
    }
    let index = ScenarioIndex {
        width: g.width,
        height: g.height,
        density: g.density,
        n_agents: g.n_agents,
        seed,
        step_limit: g.step_limit.unwrap_or(default_step_limit(g.width, g.height)),
        files,
    };
    write(
        &sdir.join("index.json"),
        &(serde_json::to_string_pretty(&index).expect("index serializes") + "\n"),
    )?;
    Ok(serde_json::json!({ "scenarios": "scenarios", "count": batch.len() }))
}

/// Loads the index and scenarios of a `gen-scenarios` output. Accepts either
/// the run directory or its `scenarios` subdirectory.
pub fn load_batch(dir: &Path) -> Result<(ScenarioIndex, Vec<Scenario>)> {
    let dir = if dir.join("index.json").exists() {
        dir.to_path_buf()
    } else {
        dir.join("scenarios")
    };
    let ipath = dir.join("index.json");
    let text = fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
    let index: ScenarioIndex = serde_json::from_str(&text)?;
    let scenarios = index
        .files
        .iter()
        .map(|f| Scenario::load(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok((index, scenarios))
}

fn train(t: &TrainRun, dir: &Path) -> Result<serde_json::Value> {
    let (q, start) = match &t.resume {
        Some(p) => {
            let s = Snapshot::load(&under_root(p))?;
            (s.q, s.steps)
        }
        None => (QStore::new(0.0, t.train.key_scheme), 0),
    };
    let log = dir.join("train_log.csv");
    if t.resume.is_none() && log.exists() {
        fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
    }
    let report = train_from(&t.train, q, start)?;
    iql::append_log(&log, &report.log)?;
    Snapshot {
        q: report.q.clone(),
        shaping: t.train.shaping,
        steps: report.steps,
    }
    .save(&dir.join("snapshot.json"))?;
    Ok(serde_json::json!({
        "snapshot": "snapshot.json",
        "log": "train_log.csv",
        "start_step": start,
        "steps": report.steps,
        "aborted": report.aborted,
        "entries": report.q.len(),
        "stages": report.stages,
    }))
}

fn eval(e: &EvalRun, dir: &Path) -> Result<serde_json::Value> {
    if e.policies.is_empty() {
        return Err(Error::Config("eval needs at least one policy".into()));
    }
    let (index, scenarios) = load_batch(&under_root(&e.scenarios))?;
    let mut rows = Vec::new();
    for (p, path) in e.policies.iter().enumerate() {
        let snap = Snapshot::load(&under_root(path))?;
        let mut traces = Vec::new();
        let report = evaluate_with(&snap.q, &scenarios, e.step_limit, |i, r| {
            if e.traces {
                traces.push((i, r.positions.clone(), r.success));
            }
        })?;
        if e.traces {
            let tdir = dir.join("traces");
            mkdir(&tdir)?;
            for (i, positions, success) in traces {
                // one ordered position list per agent
                let per_agent: Vec<Vec<_>> = (0..positions[0].len()).map(|a| positions.iter().map(|s| s[a]).collect()).collect();
                let body = serde_json::json!({ "policy": p, "case": i, "success": success, "paths": per_agent });
                write(&tdir.join(format!("policy{p}_case{i:04}.json")), &(body.to_string() + "\n"))?;
            }
        }
        rows.push(MetricsRow {
            map_size: format!("{}x{}", index.width, index.height),
            n_agents: index.n_agents,
            density: index.density,
            episodes: report.episodes,
            success_rate: report.success_rate,
            average_steps: report.average_steps,
            alpha: snap.shaping.alpha,
            metric_variant: snap.shaping.metric.as_str().into(),
            seed: index.seed,
        });
    }
    write_metrics(&dir.join("metrics.csv"), &rows)?;
    Ok(serde_json::json!({ "metrics": "metrics.csv", "rows": rows }))
}

/// Writes metrics rows after a `#` schema line.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{METRICS_SCHEMA}").expect("writes to a Vec");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a metrics file written by [`write_metrics`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(Error::from)
}

fn tune_alpha(t: &TuneRun, dir: &Path) -> Result<serde_json::Value> {
    let mut cfg = t.tune;
    if !(0.0..=1.0).contains(&cfg.initial_alpha) {
        let c = cfg.initial_alpha.clamp(0.0, 1.0);
        eprintln!("warning: initial_alpha {} clamped to {c}", cfg.initial_alpha);
        cfg.initial_alpha = c;
    }
    let result = match &t.objective {
        ObjectiveSpec::Mock { optimum } => tune::tune(&cfg, &mut Quadratic { optimum: *optimum })?,
        ObjectiveSpec::Trainer {
            policy,
            finetune,
            finetune_budget,
            suite,
        } => {
            let base = match policy {
                Some(p) => Snapshot::load(&under_root(p))?.q,
                None => QStore::new(0.0, finetune.key_scheme),
            };
            let batch = generate_batch(suite, rng::derive(cfg.seed, rng::stream::TUNE))?;
            let mut obj = TrainerObjective::new(base, (**finetune).clone(), *finetune_budget, batch)?;
            tune::tune(&cfg, &mut obj)?
        }
    };
    tune::write_history(&dir.join("tune_history.csv"), &result.history)?;
    Ok(serde_json::json!({
        "history": "tune_history.csv",
        "initial_alpha": cfg.initial_alpha,
        "alpha": result.alpha,
        "best_j": result.best_j,
        "iterations": result.history.len(),
    }))
}

/// Process exit code for an error: 2 config, 3 generation, 1 otherwise.
/// Verification failures exit with 4.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter { .. } | Error::Json(_) | Error::MapFormat { .. } | Error::SnapshotFormat(_) => 2,
        Error::Generation { .. } => 3,
        Error::Tune { source, .. } => exit_code(source),
        _ => 1,
    }
}

pub const EXIT_VERIFY: i32 = 4;
