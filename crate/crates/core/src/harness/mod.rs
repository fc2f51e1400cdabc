//! Session orchestration: configuration files, environment construction,
//! tuning and baseline sessions, evaluation and reports.

pub mod evaluate;
pub mod report;
pub mod trace;
pub mod tuning;

pub use evaluate::{evaluate, run_grid_oracle, true_objective, Evaluation, OracleResult};
pub use report::{report, ReportBundle, SessionResult};
pub use trace::{SessionSummary, StepRecord, TraceMeta, TuningTrace};
pub use tuning::{load_session, run_baseline_session, run_tuning, search_to_trace, SessionOutcome, TuningSession};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentHyper;
use crate::baseline::BaselineConfig;
use crate::env::{
    EnvDescriptor, EnvSelection, Environment, ExternalEnv, HttpSource, ProfileSet, ReplayFileSource, RestartKind,
    SeriesSource, SimEnv, APPLY_CMD_ENV, MEASUREMENT_WINDOW_S,
};
use crate::error::{Error, Result};
use crate::objective::{MetricDescriptor, MetricSchema, ObjectiveSpec};
use crate::param_space::{Configuration, ParameterSpace, SpaceDecl};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Settings of one session, read from a TOML session file and overridden
/// by command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// `sim:<profile>` or `external:<url>`.
    pub env: String,
    pub steps: u64,
    pub seed: u64,
    pub repeats: usize,
    pub out: PathBuf,
    /// Directory holding `checkpoint.bin`; checkpointing is off when unset.
    pub checkpoint: Option<PathBuf>,
    pub resume: bool,
    /// Checkpoint cadence in environment steps.
    pub checkpoint_every: u64,
    /// Simulator profile file; the built-in set when unset.
    pub profiles: Option<PathBuf>,
    /// Simulator noise fraction, overriding the profile's.
    pub noise: Option<f64>,
    /// Record wall-clock update times in the trace. Off by default so that
    /// simulator traces are byte-identical across runs.
    pub record_wall_clock: bool,
    pub objective: ObjectiveSpec,
    pub agent: AgentHyper,
    pub baseline: BaselineConfig,
    pub external: Option<ExternalConfig>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            env: "sim:seq_write".into(),
            steps: 30,
            seed: 0,
            repeats: 3,
            out: PathBuf::from("out"),
            checkpoint: None,
            resume: false,
            checkpoint_every: 10,
            profiles: None,
            noise: None,
            record_wall_clock: false,
            objective: ObjectiveSpec::new([("throughput", 1.0)]),
            agent: AgentHyper::default(),
            baseline: BaselineConfig::default(),
            external: None,
        }
    }
}

/// Description of a live system; only used with `external:` environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    #[serde(flatten)]
    pub space: SpaceDecl,
    pub metrics: Vec<MetricDescriptor>,
    /// Restart needed per parameter, by name; `workload` when omitted.
    #[serde(default)]
    pub restart: BTreeMap<String, RestartKind>,
    /// Configuration before tuning, by parameter name.
    pub default: BTreeMap<String, f64>,
    #[serde(default = "default_window")]
    pub window_s: f64,
    /// Overrides the apply command taken from the environment.
    #[serde(default)]
    pub apply_cmd: Option<String>,
}

fn default_window() -> f64 {
    MEASUREMENT_WINDOW_S
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Definition(m) => Error::Definition(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Definition(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        self.selection()?;
        if self.steps < 1 {
            return Err(Error::Definition("steps must be at least 1".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Definition("repeats must be at least 1".into()));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::Definition("checkpoint_every must be at least 1".into()));
        }
        if self.resume && self.checkpoint.is_none() {
            return Err(Error::Definition("resume needs a checkpoint directory".into()));
        }
        self.agent.check()?;
        self.baseline.check()
    }

    pub fn selection(&self) -> Result<EnvSelection> {
        self.env.parse()
    }

    pub fn checkpoint_file(&self) -> Option<PathBuf> {
        self.checkpoint.as_ref().map(|d| d.join("checkpoint.bin"))
    }
}

/// SplitMix64 step: decorrelated seeds for independent streams of one session.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the environment noise for a session that has completed `steps_done`
/// steps, so a resumed session draws fresh noise rather than replaying it.
pub fn env_seed(seed: u64, steps_done: u64) -> u64 {
    derive_seed(derive_seed(seed, 1), steps_done)
}

pub fn agent_seed(seed: u64) -> u64 {
    derive_seed(seed, 0)
}

pub fn load_profiles(cfg: &SessionConfig) -> Result<ProfileSet> {
    match &cfg.profiles {
        Some(p) => ProfileSet::load(p),
        None => Ok(ProfileSet::builtin()),
    }
}

/// A simulator for `profile` with the session's noise override applied.
pub fn build_sim(cfg: &SessionConfig, profile: &str, seed: u64) -> Result<SimEnv> {
    let set = load_profiles(cfg)?;
    let mut env = SimEnv::new(set.get(profile)?.clone(), seed);
    if let Some(noise) = cfg.noise {
        env.set_noise(noise)?;
    }
    Ok(env)
}

pub fn build_env(cfg: &SessionConfig, seed: u64) -> Result<Box<dyn Environment>> {
    match cfg.selection()? {
        EnvSelection::Sim(profile) => Ok(Box::new(build_sim(cfg, &profile, seed)?)),
        EnvSelection::External(url) => {
            let ext = cfg
                .external
                .as_ref()
                .ok_or_else(|| Error::Definition("external environment needs an [external] section".into()))?;
            let space = ParameterSpace::from_decl(&ext.space)?;
            let schema = MetricSchema::new(ext.metrics.clone())?;
            if let Some(name) = ext.restart.keys().find(|n| space.index_of(n).is_none()) {
                return Err(Error::Definition(format!("restart declared for unknown parameter `{name}`")));
            }
            let restart = space
                .params()
                .iter()
                .map(|p| ext.restart.get(&p.name).copied().unwrap_or(RestartKind::Workload))
                .collect();
            let default = config_from_names(&space, &ext.default)?;
            let descriptor = EnvDescriptor::new(space, schema, restart)?;
            let source: Box<dyn SeriesSource> = match url.strip_prefix("file:") {
                Some(path) => Box::new(ReplayFileSource {
                    path: PathBuf::from(path),
                    now: None,
                }),
                None => Box::new(HttpSource::new(&url)),
            };
            let apply_cmd = ext
                .apply_cmd
                .clone()
                .or_else(|| std::env::var(APPLY_CMD_ENV).ok().filter(|c| !c.is_empty()));
            Ok(Box::new(ExternalEnv::new(descriptor, source, apply_cmd, ext.window_s, default)?))
        }
    }
}

/// Builds a configuration from `name = value` pairs covering every parameter.
pub fn config_from_names(space: &ParameterSpace, values: &BTreeMap<String, f64>) -> Result<Configuration> {
    if let Some(name) = values.keys().find(|n| space.index_of(n).is_none()) {
        return Err(Error::Definition(format!("value for unknown parameter `{name}`")));
    }
    let config = Configuration::new(
        space
            .params()
            .iter()
            .map(|p| {
                values
                    .get(&p.name)
                    .copied()
                    .ok_or_else(|| Error::Definition(format!("no value for parameter `{}`", p.name)))
            })
            .collect::<Result<_>>()?,
    );
    space.check(&config)?;
    Ok(config)
}
