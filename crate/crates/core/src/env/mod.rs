//! Environment contract: apply a configuration, restart what needs restarting,
//! measure metrics.

mod external;
mod sim;
mod ts;

pub use external::{ExternalEnv, APPLY_CMD_ENV};
pub use sim::{AuxMetric, Bump, IndicatorSurface, ProfileSet, SimEnv, SimProfile, MEASUREMENT_WINDOW_S};
pub use ts::{parse_points, ts_query, HttpSource, Point, ReplayFileSource, SeriesSource, TOKEN_ENV};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{MetricSchema, MetricsSnapshot};
use crate::param_space::{Configuration, ParameterSpace};

/// Seconds to restart the workload: uniform in this range.
pub const WORKLOAD_RESTART_S: (f64, f64) = (12.0, 20.0);
/// Seconds to restart the file system.
pub const DFS_RESTART_S: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartKind {
    /// Takes effect when the workload is restarted.
    Workload,
    /// Requires restarting the file system and its workloads.
    Dfs,
}

impl RestartKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RestartKind::Workload => "workload",
            RestartKind::Dfs => "dfs",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvDescriptor {
    pub space: ParameterSpace,
    pub schema: MetricSchema,
    pub restart: Vec<RestartKind>,
}

impl EnvDescriptor {
    pub fn new(space: ParameterSpace, schema: MetricSchema, restart: Vec<RestartKind>) -> Result<Self> {
        if restart.len() != space.dim() {
            return Err(Error::Definition(format!(
                "restart kind declared for {} of {} parameters",
                restart.len(),
                space.dim()
            )));
        }
        Ok(Self { space, schema, restart })
    }

    /// Strongest restart needed to move from `prev` to `next`. An unchanged
    /// configuration still re-runs the workload to take a fresh measurement.
    pub fn restart_needed(&self, prev: Option<&Configuration>, next: &Configuration) -> RestartKind {
        let changed = |i: usize| prev.is_none_or(|p| p.values[i] != next.values[i]);
        (0..self.space.dim())
            .filter(|&i| changed(i))
            .map(|i| self.restart[i])
            .max()
            .unwrap_or(RestartKind::Workload)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationResult {
    pub snapshot: MetricsSnapshot,
    pub downtime_s: f64,
    pub measurement_s: f64,
    pub restart: RestartKind,
}

pub trait Environment {
    fn descriptor(&self) -> &EnvDescriptor;

    /// Applies `config`, restarting as required, and measures one window.
    fn apply(&mut self, config: &Configuration) -> Result<EvaluationResult>;

    /// The configuration the system runs before tuning starts.
    fn default_config(&self) -> Configuration;

    /// Continues from a saved session position: the configuration last
    /// applied and the elapsed session clock.
    fn resume_at(&mut self, current: &Configuration, clock: f64) -> Result<()>;

    /// Simulator access, for operations that only make sense on a model.
    fn as_sim(&self) -> Option<&SimEnv> {
        None
    }
}

/// Parsed `--env` selection string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnvSelection {
    Sim(String),
    External(String),
}

impl std::str::FromStr for EnvSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("sim", profile)) if !profile.is_empty() => Ok(EnvSelection::Sim(profile.to_string())),
            Some(("external", url)) if !url.is_empty() => Ok(EnvSelection::External(url.to_string())),
            _ => Err(Error::Definition(format!(
                "environment `{s}` is not `sim:<profile>` or `external:<url>`"
            ))),
        }
    }
}

impl std::fmt::Display for EnvSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvSelection::Sim(p) => write!(f, "sim:{p}"),
            EnvSelection::External(u) => write!(f, "external:{u}"),
        }
    }
}
