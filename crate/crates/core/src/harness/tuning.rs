//! Tuning and baseline sessions.
//!
//! The first step of a tuning session measures the default configuration to
//! obtain the initial state; every later step is an agent action. A session
//! of `steps` steps therefore makes exactly `steps` environment evaluations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::evaluate::true_objective;
use super::trace::{read_json, write_json, SessionSummary, StepRecord, TraceMeta, TraceWriter, TuningTrace};
use super::{agent_seed, build_env, env_seed, SessionConfig, CODE_VERSION};
use crate::agent::{AgentHyper, DdpgAgent};
use crate::baseline::{run_baseline, SearchTrace};
use crate::checkpoint::{load_checkpoint, save_checkpoint, BestSeen, Checkpoint, SessionCursor};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::objective::{normalize, reward, scalarize, MetricSchema, ObjectiveSpec, RunningBounds, StateVector};
use crate::param_space::{Configuration, ParameterSpace};
use crate::replay::{ReplayBuffer, Transition};

/// An agent interacting with one environment, one step at a time.
pub struct TuningSession {
    env: Box<dyn Environment>,
    objective: ObjectiveSpec,
    space: ParameterSpace,
    schema: MetricSchema,
    pub agent: DdpgAgent,
    pub buffer: ReplayBuffer,
    pub bounds: RunningBounds,
    best: Option<BestSeen>,
    steps_done: u64,
    last_state: Option<StateVector>,
    last_config: Option<Configuration>,
    clock: f64,
    record_wall_clock: bool,
    wall_action_s: f64,
    wall_update_s: f64,
}

impl TuningSession {
    pub fn new(env: Box<dyn Environment>, objective: ObjectiveSpec, hyper: AgentHyper, seed: u64) -> Result<Self> {
        let d = env.descriptor().clone();
        objective.check(&d.schema)?;
        let agent = DdpgAgent::new(d.schema.len(), d.space.dim(), hyper, seed)?;
        Ok(Self {
            buffer: ReplayBuffer::new(agent.hyper.replay_capacity),
            bounds: RunningBounds::new(d.schema.len()),
            env,
            objective,
            space: d.space,
            schema: d.schema,
            agent,
            best: None,
            steps_done: 0,
            last_state: None,
            last_config: None,
            clock: 0.0,
            record_wall_clock: false,
            wall_action_s: 0.0,
            wall_update_s: 0.0,
        })
    }

    /// Continues a checkpointed session on `env`.
    pub fn from_checkpoint(mut env: Box<dyn Environment>, objective: ObjectiveSpec, ckpt: Checkpoint) -> Result<Self> {
        let d = env.descriptor().clone();
        objective.check(&d.schema)?;
        ckpt.agent.check_shapes()?;
        if ckpt.agent.state_dim() != d.schema.len() || ckpt.agent.action_dim() != d.space.dim() {
            return Err(Error::Architecture(format!(
                "checkpoint agent is {}x{}, environment is {}x{}",
                ckpt.agent.state_dim(),
                ckpt.agent.action_dim(),
                d.schema.len(),
                d.space.dim()
            )));
        }
        let (steps_done, last_state, last_config, clock) = match ckpt.cursor {
            Some(c) if c.steps_done > 0 => {
                let config = Configuration::new(c.last_config);
                env.resume_at(&config, c.clock)?;
                (c.steps_done, Some(StateVector(c.last_state)), Some(config), c.clock)
            }
            _ => (0, None, None, 0.0),
        };
        Ok(Self {
            env,
            objective,
            space: d.space,
            schema: d.schema,
            agent: ckpt.agent,
            buffer: ckpt.buffer,
            bounds: ckpt.bounds,
            best: ckpt.best,
            steps_done,
            last_state,
            last_config,
            clock,
            record_wall_clock: false,
            wall_action_s: 0.0,
            wall_update_s: 0.0,
        })
    }

    pub fn record_wall_clock(&mut self, on: bool) {
        self.record_wall_clock = on;
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn best(&self) -> Option<&BestSeen> {
        self.best.as_ref()
    }

    pub fn recommended(&self) -> Option<Configuration> {
        self.best.as_ref().map(|b| Configuration::new(b.config.clone()))
    }

    /// Simulated seconds spent so far: downtime plus measurement.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn wall_times(&self) -> (f64, f64) {
        (self.wall_action_s, self.wall_update_s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            agent: self.agent.clone(),
            buffer: self.buffer.clone(),
            bounds: self.bounds.clone(),
            best: self.best.clone(),
            cursor: match (&self.last_state, &self.last_config) {
                (Some(s), Some(c)) => Some(SessionCursor {
                    steps_done: self.steps_done,
                    last_state: s.0.clone(),
                    last_config: c.values.clone(),
                    clock: self.clock,
                }),
                _ => None,
            },
        }
    }

    /// Act, apply, observe, store and learn.
    pub fn step(&mut self) -> Result<StepRecord> {
        let (action, config, projected) = match &self.last_state {
            None => {
                let config = self.env.default_config();
                (self.space.unmap_config(&config)?, config, false)
            }
            Some(state) => {
                let action = self.agent.act(state.as_slice(), true)?;
                let mapped = self.space.map_action(&action)?;
                (action, mapped.config, mapped.projected)
            }
        };

        let started = Instant::now();
        let result = self.env.apply(&config)?;
        let metrics = result.snapshot.ordered(&self.schema)?;
        let state = normalize(&result.snapshot, &self.schema, &mut self.bounds)?;
        let wall_action = started.elapsed().as_secs_f64();
        let objective = scalarize(&state, &self.objective, &self.schema)?;

        let mut r = 0.0;
        let mut wall_update = 0.0;
        if let Some(prev) = &self.last_state {
            r = reward(prev, &state, &self.objective, &self.schema)?;
            self.buffer.push(Transition {
                state: prev.0.clone(),
                action: action.clone(),
                reward: r,
                next_state: state.0.clone(),
            })?;
            let started = Instant::now();
            self.agent.learn(&self.buffer)?;
            wall_update = started.elapsed().as_secs_f64();
        }

        self.steps_done += 1;
        if self.best.as_ref().is_none_or(|b| objective > b.objective) {
            self.best = Some(BestSeen {
                step: self.steps_done,
                objective,
                config: config.values.clone(),
            });
        }
        let best = self.best.as_ref().expect("best set above");
        self.clock += result.downtime_s + result.measurement_s;
        self.wall_action_s += wall_action;
        self.wall_update_s += wall_update;
        let simulated = self.env.as_sim().is_some();

        let record = StepRecord {
            step: self.steps_done,
            action,
            config: config.values.clone(),
            metrics,
            state: state.0.clone(),
            reward: r,
            objective,
            best_objective: best.objective,
            best_config: best.config.clone(),
            downtime_s: result.downtime_s,
            measurement_s: result.measurement_s,
            action_time_s: if simulated {
                result.downtime_s + result.measurement_s
            } else {
                wall_action
            },
            update_time_s: if self.record_wall_clock { wall_update } else { 0.0 },
            projected,
        };
        self.last_state = Some(state);
        self.last_config = Some(config);
        Ok(record)
    }

    /// Steps until `target` total steps are done.
    pub fn run_until(&mut self, target: u64) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        while self.steps_done < target {
            out.push(self.step()?);
        }
        Ok(out)
    }
}

/// Result of a finished session, as written to its output directory.
#[derive(Clone, Debug)]
pub struct SessionOutcome {
    pub trace: TuningTrace,
    pub recommended: Configuration,
    pub summary: SessionSummary,
}

fn meta_for(cfg: &SessionConfig, method: &str, env: &dyn Environment, settings: serde_json::Value) -> TraceMeta {
    let d = env.descriptor();
    TraceMeta {
        method: method.to_string(),
        env: cfg.env.clone(),
        seed: cfg.seed,
        param_names: d.space.params().iter().map(|p| p.name.clone()).collect(),
        metric_names: d.schema.names().map(str::to_string).collect(),
        weights: cfg.objective.weight_vector(&d.schema),
        settings,
        code_version: CODE_VERSION.to_string(),
    }
}

pub fn trace_path(out: &Path) -> PathBuf {
    out.join("trace.csv")
}

pub fn meta_path(out: &Path) -> PathBuf {
    out.join("meta.json")
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.join("summary.json")
}

fn summarize(
    cfg: &SessionConfig,
    env: &dyn Environment,
    trace: &TuningTrace,
    wall: (f64, f64),
) -> Result<(Configuration, SessionSummary)> {
    let best = trace
        .best()
        .ok_or_else(|| Error::Definition("session produced no steps".into()))?;
    let recommended = Configuration::new(best.config.clone());
    let (default_objective, recommended_true_objective) = match env.as_sim() {
        Some(sim) => (
            true_objective(sim, &env.default_config(), &cfg.objective)?,
            Some(true_objective(sim, &recommended, &cfg.objective)?),
        ),
        None => (trace.records[0].objective, None),
    };
    let total_downtime_s = trace.total_downtime_s();
    let total_measurement_s = trace.total_measurement_s();
    let summary = SessionSummary {
        meta: trace.meta.clone(),
        steps: trace.records.len() as u64,
        recommended: recommended.values.clone(),
        best_objective: best.objective,
        best_step: best.step,
        default_objective,
        recommended_true_objective,
        total_downtime_s,
        total_measurement_s,
        total_cost_s: total_downtime_s + total_measurement_s,
        wall_action_s: wall.0,
        wall_update_s: wall.1,
    };
    Ok((recommended, summary))
}

/// Runs (or resumes) a tuning session, streaming the trace to `out/trace.csv`
/// and checkpointing every `checkpoint_every` steps and at the end. On an
/// error the partial trace and a checkpoint of the last completed step are kept.
pub fn run_tuning(cfg: &SessionConfig) -> Result<SessionOutcome> {
    cfg.check()?;
    let ckpt_file = cfg.checkpoint_file();
    let mut session = if cfg.resume {
        let path = ckpt_file.as_ref().expect("checked: resume has a checkpoint directory");
        let ckpt = load_checkpoint(path)?;
        let done = ckpt.cursor.as_ref().map_or(0, |c| c.steps_done);
        let env = build_env(cfg, env_seed(cfg.seed, done))?;
        TuningSession::from_checkpoint(env, cfg.objective.clone(), ckpt)?
    } else {
        let env = build_env(cfg, env_seed(cfg.seed, 0))?;
        TuningSession::new(env, cfg.objective.clone(), cfg.agent.clone(), agent_seed(cfg.seed))?
    };
    session.record_wall_clock(cfg.record_wall_clock);
    let settings = serde_json::to_value(&session.agent.hyper).map_err(|e| Error::Definition(e.to_string()))?;
    let meta = meta_for(cfg, "ddpg", session.env(), settings);

    let csv = trace_path(&cfg.out);
    let mut trace = TuningTrace::new(meta.clone());
    let mut writer = if cfg.resume && csv.exists() {
        trace = super::trace::read_csv(&csv, &meta)?;
        trace.records.truncate(session.steps_done() as usize);
        if trace.records.len() as u64 != session.steps_done() {
            return Err(Error::Definition(format!(
                "{} holds {} steps, checkpoint is at step {}",
                csv.display(),
                trace.records.len(),
                session.steps_done()
            )));
        }
        // rewrite so rows past the checkpoint are dropped
        super::trace::write_csv(&csv, &trace)?;
        TraceWriter::append(&csv, &meta)?
    } else {
        TraceWriter::create(&csv, &meta)?
    };
    write_json(&meta_path(&cfg.out), &meta)?;

    let save = |s: &TuningSession| -> Result<()> {
        match &ckpt_file {
            Some(p) => save_checkpoint(&s.checkpoint(), p),
            None => Ok(()),
        }
    };
    while session.steps_done() < cfg.steps {
        let record = match session.step() {
            Ok(r) => r,
            Err(e) => {
                log::error!("step {} failed: {e}", session.steps_done() + 1);
                if let Err(se) = save(&session) {
                    log::error!("checkpoint after failure not written: {se}");
                }
                return Err(e);
            }
        };
        writer.write(&record)?;
        log::info!(
            "step {} objective {:.4} best {:.4}",
            record.step,
            record.objective,
            record.best_objective
        );
        trace.records.push(record);
        if session.steps_done() % cfg.checkpoint_every == 0 {
            save(&session)?;
        }
    }
    save(&session)?;

    let (recommended, summary) = summarize(cfg, session.env(), &trace, session.wall_times())?;
    write_json(&summary_path(&cfg.out), &summary)?;
    Ok(SessionOutcome {
        trace,
        recommended,
        summary,
    })
}

/// Converts a search trace into the common trace format. Rewards are the
/// relative objective change between consecutive evaluations.
pub fn search_to_trace(
    meta: TraceMeta,
    search: &SearchTrace,
    objective: &ObjectiveSpec,
    schema: &MetricSchema,
) -> Result<TuningTrace> {
    let mut trace = TuningTrace::new(meta);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut prev: Option<StateVector> = None;
    for (i, e) in search.entries.iter().enumerate() {
        let state = StateVector(e.state.clone());
        let r = match &prev {
            Some(p) => reward(p, &state, objective, schema)?,
            None => 0.0,
        };
        if best.as_ref().is_none_or(|(b, _)| e.objective > *b) {
            best = Some((e.objective, e.config.values.clone()));
        }
        let (best_objective, best_config) = best.clone().expect("set above");
        trace.records.push(StepRecord {
            step: i as u64 + 1,
            action: e.unit.clone(),
            config: e.config.values.clone(),
            metrics: e.metrics.clone(),
            state: e.state.clone(),
            reward: r,
            objective: e.objective,
            best_objective,
            best_config,
            downtime_s: e.downtime_s,
            measurement_s: e.measurement_s,
            action_time_s: e.downtime_s + e.measurement_s,
            update_time_s: 0.0,
            projected: false,
        });
        prev = Some(state);
    }
    Ok(trace)
}

/// Runs the search baseline with `steps` as its evaluation budget.
pub fn run_baseline_session(cfg: &SessionConfig) -> Result<SessionOutcome> {
    cfg.check()?;
    let mut env = build_env(cfg, env_seed(cfg.seed, 0))?;
    let settings = serde_json::to_value(&cfg.baseline).map_err(|e| Error::Definition(e.to_string()))?;
    let meta = meta_for(cfg, "baseline", env.as_ref(), settings);
    let schema = env.descriptor().schema.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(agent_seed(cfg.seed));
    let started = Instant::now();
    let result = run_baseline(env.as_mut(), &cfg.objective, cfg.steps as usize, &cfg.baseline, &mut rng);
    let wall = started.elapsed().as_secs_f64();
    let (search, err) = match result {
        Ok(s) => (s, None),
        Err((s, e)) => (s, Some(e)),
    };
    let trace = search_to_trace(meta.clone(), &search, &cfg.objective, &schema)?;
    super::trace::write_csv(&trace_path(&cfg.out), &trace)?;
    write_json(&meta_path(&cfg.out), &meta)?;
    if let Some(e) = err {
        return Err(e);
    }
    let (recommended, summary) = summarize(cfg, env.as_ref(), &trace, (wall, 0.0))?;
    write_json(&summary_path(&cfg.out), &summary)?;
    Ok(SessionOutcome {
        trace,
        recommended,
        summary,
    })
}

/// Reads a finished session directory.
pub fn load_session(dir: &Path) -> Result<(TuningTrace, SessionSummary)> {
    let summary: SessionSummary = read_json(&summary_path(dir))?;
    let trace = super::trace::read_csv(&trace_path(dir), &summary.meta)?;
    Ok((trace, summary))
}
