use std::process::Command;
use std::time::Instant;

use super::ts::{ts_query, SeriesSource};
use super::{EnvDescriptor, Environment, EvaluationResult};
use crate::error::{Error, Result};
use crate::param_space::Configuration;

/// Environment variable naming the command that applies a configuration.
pub const APPLY_CMD_ENV: &str = "KNOBTUNE_APPLY_CMD";

/// A live system behind a time-series endpoint.
///
/// Applying a configuration runs the apply command (if any) with one
/// `name=value` argument per parameter. The command is expected to restart
/// what needs restarting and return once the workload has run for the
/// measurement window; its runtime is recorded as downtime. Metrics are then
/// read from the trailing window.
pub struct ExternalEnv {
    descriptor: EnvDescriptor,
    source: Box<dyn SeriesSource>,
    apply_cmd: Option<String>,
    window_s: f64,
    default: Configuration,
    current: Option<Configuration>,
}

impl ExternalEnv {
    pub fn new(
        descriptor: EnvDescriptor,
        source: Box<dyn SeriesSource>,
        apply_cmd: Option<String>,
        window_s: f64,
        default: Configuration,
    ) -> Result<Self> {
        descriptor.space.check(&default)?;
        if !(window_s > 0.0) {
            return Err(Error::Definition("measurement window must be positive".into()));
        }
        Ok(Self {
            descriptor,
            source,
            apply_cmd,
            window_s,
            default,
            current: None,
        })
    }

    fn run_apply(&self, config: &Configuration) -> Result<()> {
        let Some(cmd) = &self.apply_cmd else {
            return Ok(());
        };
        let args: Vec<String> = self
            .descriptor
            .space
            .params()
            .iter()
            .zip(&config.values)
            .map(|(p, v)| format!("{}={v}", p.name))
            .collect();
        let status = Command::new("sh")
            .arg("-c")
            .arg(format!("{cmd} \"$@\""))
            .arg("apply")
            .args(&args)
            .status()
            .map_err(|e| Error::Transport(format!("apply command: {e}")))?;
        if !status.success() {
            return Err(Error::Transport(format!("apply command exited with {status}")));
        }
        Ok(())
    }
}

impl Environment for ExternalEnv {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn apply(&mut self, config: &Configuration) -> Result<EvaluationResult> {
        self.descriptor.space.check(config)?;
        let restart = self.descriptor.restart_needed(self.current.as_ref(), config);
        let started = Instant::now();
        self.run_apply(config)?;
        let downtime_s = started.elapsed().as_secs_f64();
        let names: Vec<&str> = self.descriptor.schema.names().collect();
        let snapshot = ts_query(self.source.as_ref(), &names, self.window_s)?;
        self.current = Some(config.clone());
        Ok(EvaluationResult {
            snapshot,
            downtime_s,
            measurement_s: self.window_s,
            restart,
        })
    }

    fn default_config(&self) -> Configuration {
        self.default.clone()
    }

    fn resume_at(&mut self, current: &Configuration, _clock: f64) -> Result<()> {
        self.descriptor.space.check(current)?;
        self.current = Some(current.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ts::Point;
    use crate::objective::{MetricDescriptor, MetricSchema, MetricScope};
    use crate::param_space::{ParameterDef, ParameterSpace};
    use crate::env::RestartKind;

    struct Fixed(Vec<Point>);

    impl SeriesSource for Fixed {
        fn fetch(&self, _names: &[&str], _window_s: f64) -> Result<(Vec<Point>, f64)> {
            Ok((self.0.clone(), 10.0))
        }
    }

    fn descriptor() -> EnvDescriptor {
        EnvDescriptor::new(
            ParameterSpace::new(vec![ParameterDef::discrete("n", 1, 4)], vec![]).unwrap(),
            MetricSchema::new(vec![
                MetricDescriptor::new("a", "", MetricScope::Server, None),
                MetricDescriptor::new("b", "", MetricScope::Client, None),
            ])
            .unwrap(),
            vec![RestartKind::Workload],
        )
        .unwrap()
    }

    fn pt(name: &str, value: f64) -> Point {
        Point {
            name: name.into(),
            value,
            timestamp: None,
        }
    }

    #[test]
    fn apply_reads_window() {
        let src = Fixed(vec![pt("a", 1.0), pt("a", 3.0), pt("b", 7.0)]);
        let mut env = ExternalEnv::new(descriptor(), Box::new(src), None, 60.0, Configuration::new(vec![1.0])).unwrap();
        let r = env.apply(&Configuration::new(vec![2.0])).unwrap();
        assert_eq!(r.snapshot.values["a"], 2.0);
        assert_eq!(r.snapshot.values["b"], 7.0);
        assert_eq!(r.measurement_s, 60.0);
        assert!(env.apply(&Configuration::new(vec![9.0])).is_err());
    }

    #[test]
    fn missing_series_is_an_error() {
        let src = Fixed(vec![pt("a", 1.0)]);
        let mut env = ExternalEnv::new(descriptor(), Box::new(src), None, 60.0, Configuration::new(vec![1.0])).unwrap();
        assert!(matches!(
            env.apply(&Configuration::new(vec![2.0])),
            Err(Error::IncompleteSnapshot(m)) if m == vec!["b".to_string()]
        ));
    }

    #[test]
    fn apply_command_receives_assignments() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("applied");
        let cmd = format!("echo >{}", out.display());
        let src = Fixed(vec![pt("a", 1.0), pt("b", 1.0)]);
        let mut env =
            ExternalEnv::new(descriptor(), Box::new(src), Some(cmd), 60.0, Configuration::new(vec![1.0])).unwrap();
        env.apply(&Configuration::new(vec![3.0])).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap().trim(), "n=3");

        let src = Fixed(vec![pt("a", 1.0), pt("b", 1.0)]);
        let mut env =
            ExternalEnv::new(descriptor(), Box::new(src), Some("false".into()), 60.0, Configuration::new(vec![1.0]))
                .unwrap();
        assert!(matches!(env.apply(&Configuration::new(vec![3.0])), Err(Error::Transport(_))));
    }
}
