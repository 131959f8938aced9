use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cors_core::bench::{self, Command, EvalRun, GenConfig, ObjectiveSpec, RunConfig, Suite, TrainRun, TuneRun, VerifyRun};
use cors_core::tune::TuneConfig;
use cors_core::Error;

/// Grid MAPF with cooperative reward shaping.
#[derive(Parser)]
#[command(name = "cors", version)]
struct Cli {
    /// Overrides the seed of the run config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; relative paths resolve under $CORS_OUTPUT_ROOT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded batch of scenario files.
    GenScenarios {
        #[arg(long, default_value_t = 10)]
        width: usize,
        #[arg(long, default_value_t = 10)]
        height: usize,
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long, default_value_t = 4)]
        agents: usize,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        step_limit: Option<u32>,
    },
    /// Train a policy from a run config.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Continue from a snapshot.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation of one or more snapshots on a scenario batch.
    Eval {
        #[arg(long = "policy", required = true)]
        policies: Vec<PathBuf>,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        step_limit: Option<u32>,
        /// Write per-episode position traces.
        #[arg(long)]
        traces: bool,
    },
    /// Run the fixed-answer checks.
    Verify {
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Tune the cooperation coefficient.
    TuneAlpha {
        #[command(flatten)]
        config: ConfigArg,
        /// Use the built-in quadratic objective with this optimum.
        #[arg(long, conflicts_with = "config")]
        mock_optimum: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        initial_alpha: Option<f64>,
    },
    /// Re-execute a run config or manifest.
    Run { config: PathBuf },
}

#[derive(Args)]
struct ConfigArg {
    /// Run config or manifest (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_for(path: &Option<PathBuf>, name: &str) -> Result<Option<RunConfig>, Error> {
    let Some(p) = path else { return Ok(None) };
    let cfg = RunConfig::load(p)?;
    if cfg.command.name() != name {
        return Err(Error::Config(format!("{} holds a `{}` run, not `{name}`", p.display(), cfg.command.name())));
    }
    Ok(Some(cfg))
}

fn build(cli: Cli) -> Result<RunConfig, Error> {
    let default_out = |name: &str| PathBuf::from(format!("runs/{name}"));
    let plain = |command: Command| RunConfig {
        seed: 0,
        out_dir: default_out(command.name()),
        command,
    };
    let mut cfg = match cli.cmd {
        Cmd::GenScenarios {
            width,
            height,
            density,
            agents,
            count,
            step_limit,
        } => plain(Command::GenScenarios(GenConfig {
            width,
            height,
            density,
            n_agents: agents,
            count,
            step_limit,
        })),
        Cmd::Train { config, resume } => {
            let mut cfg = load_for(&config.config, "train")?.unwrap_or_else(|| {
                plain(Command::Train(TrainRun {
                    train: Default::default(),
                    resume: None,
                }))
            });
            if let (Some(r), Command::Train(t)) = (resume, &mut cfg.command) {
                t.resume = Some(r);
            }
            cfg
        }
        Cmd::Eval {
            policies,
            scenarios,
            step_limit,
            traces,
        } => plain(Command::Eval(EvalRun {
            policies,
            scenarios,
            step_limit,
            traces,
        })),
        Cmd::Verify { suite, instances } => plain(Command::Verify(VerifyRun {
            suite,
            igm_instances: instances,
        })),
        Cmd::TuneAlpha {
            config,
            mock_optimum,
            initial_alpha,
        } => {
            let mut cfg = match (load_for(&config.config, "tune-alpha")?, mock_optimum) {
                (Some(c), _) => c,
                (None, Some(optimum)) => plain(Command::TuneAlpha(TuneRun {
                    tune: TuneConfig::default(),
                    objective: ObjectiveSpec::Mock { optimum },
                })),
                (None, None) => return Err(Error::Config("tune-alpha needs --config or --mock-optimum".into())),
            };
            if let (Some(a), Command::TuneAlpha(t)) = (initial_alpha, &mut cfg.command) {
                t.tune.initial_alpha = a;
            }
            cfg
        }
        Cmd::Run { config } => RunConfig::load(&config)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(cli).and_then(bench::execute);
    match result {
        Ok(out) if out.failed_checks > 0 => {
            eprintln!("{} check(s) failed", out.failed_checks);
            ExitCode::from(bench::EXIT_VERIFY as u8)
        }
        Ok(out) => {
            eprintln!("{} done: {}", out.manifest.command, out.manifest.config.output_dir().display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(bench::exit_code(&e) as u8)
        }
    }
}
