use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use knobtune::env::Environment;
use knobtune::harness::report::SessionResult;
use knobtune::harness::{
    build_env, config_from_names, env_seed, evaluate, load_session, report, run_baseline_session, run_grid_oracle,
    run_tuning, OracleResult, SessionConfig, SessionOutcome,
};
use knobtune::objective::RunningBounds;
use knobtune::param_space::ParamKind;
use knobtune::{Error, Result};

// Output goes to a possibly closed pipe (`| head`); write errors are ignored.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "knobtune", version, about = "Tune static file-system parameters with DDPG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or resume a tuning session.
    Tune(Common),
    /// Run the sampling-and-shrinking search baseline.
    Baseline(Common),
    /// Measure one configuration repeatedly.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Parameter assignment `name=value`; unset parameters keep their default.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
        /// Evaluate the configuration recommended by a finished session.
        #[arg(long, value_name = "DIR", conflicts_with = "set")]
        session: Option<PathBuf>,
    },
    /// Exhaustive noise-free grid search on a simulator profile.
    GridOracle {
        #[command(flatten)]
        common: Common,
        /// Points per continuous parameter.
        #[arg(long, default_value_t = 25)]
        resolution: usize,
    },
    /// Comparison table and charts over finished session directories.
    Report {
        /// Session output directories.
        #[arg(required = true)]
        sessions: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Grid-oracle points per continuous parameter for simulator sessions; 0 disables.
        #[arg(long, default_value_t = 25)]
        resolution: usize,
        /// Simulator profile file used by the sessions.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// `sim:<profile>` or `external:<url>`.
    #[arg(long)]
    env: Option<String>,
    /// Session file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from the checkpoint in the checkpoint directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    repeats: Option<usize>,
}

impl Common {
    fn session(&self) -> Result<SessionConfig> {
        let mut cfg = match &self.config {
            Some(p) => SessionConfig::load(p)?,
            None => SessionConfig::default(),
        };
        if let Some(v) = &self.env {
            cfg.env = v.clone();
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        cfg.resume |= self.resume;
        cfg.check()?;
        Ok(cfg)
    }
}

fn print_outcome(o: &SessionOutcome, out: &Path) {
    let s = &o.summary;
    say!("steps:              {}", s.steps);
    say!("recommended:        {:?}", s.recommended);
    say!("best objective:     {:.6} (step {})", s.best_objective, s.best_step);
    say!("default objective:  {:.6}", s.default_objective);
    if let Some(t) = s.recommended_true_objective {
        say!("noise-free best:    {t:.6}");
    }
    say!("simulated downtime: {:.1} s", s.total_downtime_s);
    say!("total cost:         {:.1} s", s.total_cost_s);
    say!("trace:              {}", out.join("trace.csv").display());
}

fn grid_resolution(env: &dyn Environment, continuous: usize) -> Vec<usize> {
    env.descriptor()
        .space
        .params()
        .iter()
        .map(|p| match p.kind {
            ParamKind::Discrete => 1,
            ParamKind::Continuous => continuous,
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tune(c) => {
            let cfg = c.session()?;
            let o = run_tuning(&cfg)?;
            print_outcome(&o, &cfg.out);
        }
        Command::Baseline(c) => {
            let cfg = c.session()?;
            let o = run_baseline_session(&cfg)?;
            print_outcome(&o, &cfg.out);
        }
        Command::Evaluate { common, set, session } => {
            let cfg = common.session()?;
            let mut env = build_env(&cfg, env_seed(cfg.seed, 0))?;
            let space = env.descriptor().space.clone();
            let config = if let Some(dir) = session {
                let (_, summary) = load_session(&dir)?;
                knobtune::param_space::Configuration::new(summary.recommended)
            } else {
                let mut values: BTreeMap<String, f64> = space
                    .params()
                    .iter()
                    .map(|p| p.name.clone())
                    .zip(env.default_config().values)
                    .collect();
                for s in &set {
                    let (k, v) = s
                        .split_once('=')
                        .ok_or_else(|| Error::Definition(format!("`{s}` is not NAME=VALUE")))?;
                    let v: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Definition(format!("`{v}` is not a number")))?;
                    values.insert(k.trim().to_string(), v);
                }
                config_from_names(&space, &values)?
            };
            let mut bounds = RunningBounds::new(env.descriptor().schema.len());
            let e = evaluate(env.as_mut(), &config, &cfg.objective, &mut bounds, cfg.repeats)?;
            say!("configuration: {:?}", config.values);
            say!("objective:     {:.6} +/- {:.6} over {} runs", e.mean, e.std, e.values.len());
        }
        Command::GridOracle { common, resolution } => {
            let cfg = common.session()?;
            let env = build_env(&cfg, 0)?;
            let res = grid_resolution(env.as_ref(), resolution);
            let o = run_grid_oracle(env.as_ref(), &cfg.objective, &res)?;
            say!("grid points: {}", o.evaluated);
            say!("optimum:     {:?}", o.config.values);
            say!("objective:   {:.6}", o.objective);
        }
        Command::Report {
            sessions,
            out,
            resolution,
            profiles,
        } => {
            let mut results = Vec::new();
            let mut oracles: BTreeMap<String, OracleResult> = BTreeMap::new();
            for dir in &sessions {
                let (trace, summary) = load_session(dir)?;
                let env_name = trace.meta.env.clone();
                if resolution > 0 && env_name.starts_with("sim:") && !oracles.contains_key(&env_name) {
                    let weights = trace
                        .meta
                        .metric_names
                        .iter()
                        .zip(&trace.meta.weights)
                        .filter(|(_, w)| **w != 0.0)
                        .map(|(n, w)| (n.clone(), *w))
                        .collect();
                    let cfg = SessionConfig {
                        env: env_name.clone(),
                        profiles: profiles.clone(),
                        objective: knobtune::objective::ObjectiveSpec { weights },
                        ..SessionConfig::default()
                    };
                    let env = build_env(&cfg, 0)?;
                    let res = grid_resolution(env.as_ref(), resolution);
                    oracles.insert(env_name, run_grid_oracle(env.as_ref(), &cfg.objective, &res)?);
                }
                results.push(SessionResult { trace, summary });
            }
            let bundle = report(&results, &oracles, &out)?;
            say!("table:  {}", bundle.table_path.display());
            for c in &bundle.charts {
                say!("chart:  {}", c.display());
            }
            say_raw!("{}", std::fs::read_to_string(&bundle.table_path).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
