//! Repeated measurement of a configuration and the exhaustive grid oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, SimEnv};
use crate::error::{Error, Result};
use crate::objective::{normalize, scalarize, MetricsSnapshot, ObjectiveSpec, RunningBounds};
use crate::param_space::{Configuration, ParamKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub values: Vec<f64>,
}

/// Applies `config` `repeats` times and aggregates the scalarized objective.
pub fn evaluate(
    env: &mut dyn Environment,
    config: &Configuration,
    objective: &ObjectiveSpec,
    bounds: &mut RunningBounds,
    repeats: usize,
) -> Result<Evaluation> {
    if repeats < 1 {
        return Err(Error::Definition("repeats must be at least 1".into()));
    }
    let schema = env.descriptor().schema.clone();
    objective.check(&schema)?;
    let mut values = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let r = env.apply(config)?;
        let state = normalize(&r.snapshot, &schema, bounds)?;
        values.push(scalarize(&state, objective, &schema)?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Evaluation { mean, std, values })
}

/// Noise-free objective of `config` on the simulator's surfaces.
pub fn true_objective(sim: &SimEnv, config: &Configuration, objective: &ObjectiveSpec) -> Result<f64> {
    let profile = sim.profile();
    let schema = &profile.descriptor.schema;
    // noise 0 never draws from the rng
    let values = profile.sim_response(config, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?;
    let snapshot = MetricsSnapshot {
        values,
        window_start: 0.0,
        window_end: 0.0,
    };
    let state = normalize(&snapshot, schema, &mut RunningBounds::new(schema.len()))?;
    scalarize(&state, objective, schema)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub config: Configuration,
    pub objective: f64,
    pub evaluated: usize,
}

/// Grid values of one parameter: every integer for discrete parameters,
/// `resolution` evenly spaced unit points otherwise.
fn axis(space: &crate::param_space::ParameterSpace, i: usize, resolution: usize) -> Vec<f64> {
    let p = &space.params()[i];
    match p.kind {
        ParamKind::Discrete => (0..p.cardinality().unwrap_or(1)).map(|j| p.min + j as f64).collect(),
        ParamKind::Continuous if resolution == 1 => vec![p.from_unit(0.5)],
        ParamKind::Continuous => (0..resolution)
            .map(|j| p.from_unit(j as f64 / (resolution - 1) as f64))
            .collect(),
    }
}

/// Exhaustive noise-free search over a grid; ties go to the lowest grid index
/// (first parameter outermost). Infeasible grid points are skipped.
pub fn run_grid_oracle(env: &dyn Environment, objective: &ObjectiveSpec, resolution: &[usize]) -> Result<OracleResult> {
    let sim = env
        .as_sim()
        .ok_or_else(|| Error::Unsupported("the grid oracle needs a simulator environment".into()))?;
    let space = sim.profile().space();
    objective.check(&sim.profile().descriptor.schema)?;
    if resolution.len() != space.dim() {
        return Err(Error::shape("grid resolution", space.dim(), resolution.len()));
    }
    if resolution.contains(&0) {
        return Err(Error::Definition("grid resolution must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = (0..space.dim()).map(|i| axis(space, i, resolution[i])).collect();
    let mut index = vec![0usize; axes.len()];
    let mut best: Option<(f64, Configuration)> = None;
    let mut evaluated = 0;
    loop {
        let config = Configuration::new(index.iter().zip(&axes).map(|(&j, a)| a[j]).collect());
        if space.validate(&config)?.is_empty() {
            let v = true_objective(sim, &config, objective)?;
            evaluated += 1;
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, config));
            }
        }
        // odometer increment, last parameter fastest
        let mut d = axes.len();
        loop {
            if d == 0 {
                let (objective, config) =
                    best.ok_or_else(|| Error::Definition("no feasible grid point".into()))?;
                return Ok(OracleResult {
                    config,
                    objective,
                    evaluated,
                });
            }
            d -= 1;
            index[d] += 1;
            if index[d] < axes[d].len() {
                break;
            }
            index[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ProfileSet;

    fn sim(name: &str, noise: f64) -> SimEnv {
        let mut env = SimEnv::new(ProfileSet::builtin().get(name).unwrap().clone(), 1);
        env.set_noise(noise).unwrap();
        env
    }

    #[test]
    fn noise_free_has_zero_spread() {
        let mut env = sim("seq_read", 0.0);
        let obj = ObjectiveSpec::new([("throughput", 1.0)]);
        let cfg = env.default_config();
        let e = evaluate(&mut env, &cfg, &obj, &mut RunningBounds::new(12), 3).unwrap();
        assert_eq!(e.values.len(), 3);
        assert_eq!(e.std, 0.0);
        assert_eq!(e.mean, e.values[0]);
        assert_eq!(e.mean, true_objective(&env, &cfg, &obj).unwrap());
        assert!(evaluate(&mut env, &cfg, &obj, &mut RunningBounds::new(12), 0).is_err());
    }

    #[test]
    fn noisy_evaluation_spreads() {
        let mut env = sim("seq_read", 0.05);
        let obj = ObjectiveSpec::new([("throughput", 1.0)]);
        let cfg = env.default_config();
        let clock = env.clock();
        let e = evaluate(&mut env, &cfg, &obj, &mut RunningBounds::new(12), 3).unwrap();
        assert!(e.std > 0.0);
        // exactly three measurement windows were spent
        assert!((env.clock() - clock - 3.0 * 120.0) >= 36.0);
    }

    #[test]
    fn grid_counts_and_bounds() {
        let env = sim("seq_write", 0.05);
        let obj = ObjectiveSpec::new([("throughput", 1.0)]);
        let r = run_grid_oracle(&env, &obj, &[1, 25]).unwrap();
        assert_eq!(r.evaluated, 6 * 25);
        let r1 = run_grid_oracle(&env, &obj, &[1, 1]).unwrap();
        assert_eq!(r1.evaluated, 6);
        assert!(r.objective >= r1.objective);
        assert!(run_grid_oracle(&env, &obj, &[1]).is_err());
    }
}
