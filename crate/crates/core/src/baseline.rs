//! Search baseline: divide-and-diverge sampling inside a bounded region,
//! recursively shrunk around the best point found so far.
//!
//! Bounds and sample points live in the unit coordinates used by the action
//! mapping, so log-scale parameters are searched in the log domain and
//! discrete parameters are rounded by [`ParameterSpace::map_action`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::objective::{normalize, scalarize, ObjectiveSpec, RunningBounds};
use crate::param_space::{Configuration, ParameterSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub samples_per_round: usize,
    pub shrink: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            samples_per_round: 10,
            shrink: 0.5,
        }
    }
}

impl BaselineConfig {
    pub fn check(&self) -> Result<()> {
        if self.samples_per_round < 2 {
            return Err(Error::Definition("baseline samples_per_round must be at least 2".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Definition(format!("baseline shrink {} outside (0, 1)", self.shrink)));
        }
        Ok(())
    }
}

/// Per-parameter sub-ranges `[lo, hi]` of the unit interval.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBounds {
    pub fn full(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn check(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::shape("search bounds", self.lo.len(), self.hi.len()));
        }
        for (i, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::Definition(format!("search bound {i} is [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// The bounds in native units (unrounded for discrete parameters).
    pub fn native(&self, space: &ParameterSpace) -> Vec<(f64, f64)> {
        space
            .params()
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(p, (&lo, &hi))| (unit_to_native(p, lo), unit_to_native(p, hi)))
            .collect()
    }
}

fn unit_to_native(p: &crate::param_space::ParameterDef, u: f64) -> f64 {
    use crate::param_space::Scale;
    match p.scale {
        Scale::Linear => p.min + u * (p.max - p.min),
        Scale::Log => (p.min.log2() + u * (p.max.log2() - p.min.log2())).exp2(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdsPoint {
    /// Interval index per parameter.
    pub cells: Vec<usize>,
    /// Interval centers, in unit coordinates.
    pub unit: Vec<f64>,
    pub config: Configuration,
}

/// `n` points such that, for every parameter, each of the `n` equal intervals
/// of its sub-range holds exactly one point.
pub fn dds_sample<R: Rng + ?Sized>(
    space: &ParameterSpace,
    bounds: &SearchBounds,
    n: usize,
    rng: &mut R,
) -> Result<Vec<DdsPoint>> {
    if n < 2 {
        return Err(Error::Definition(format!("divide-and-diverge sampling needs n >= 2, got {n}")));
    }
    bounds.check()?;
    if bounds.dim() != space.dim() {
        return Err(Error::shape("search bounds", space.dim(), bounds.dim()));
    }
    let perms: Vec<Vec<usize>> = (0..space.dim())
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    (0..n)
        .map(|j| {
            let cells: Vec<usize> = perms.iter().map(|p| p[j]).collect();
            let unit: Vec<f64> = cells
                .iter()
                .enumerate()
                .map(|(i, &c)| bounds.lo[i] + (c as f64 + 0.5) / n as f64 * bounds.width(i))
                .collect();
            let config = space.map_action(&unit)?.config;
            Ok(DdsPoint { cells, unit, config })
        })
        .collect()
}

/// Bounds of `shrink` times the old width centered at `best`, shifted back
/// inside the unit interval when they would cross it.
pub fn rbs_shrink(bounds: &SearchBounds, best: &[f64], shrink: f64) -> Result<SearchBounds> {
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::Definition(format!("shrink {shrink} outside (0, 1)")));
    }
    if best.len() != bounds.dim() {
        return Err(Error::shape("best point", bounds.dim(), best.len()));
    }
    let mut out = SearchBounds::full(bounds.dim());
    for i in 0..bounds.dim() {
        let w = shrink * bounds.width(i);
        let mut lo = best[i] - w / 2.0;
        if lo < 0.0 {
            lo = 0.0;
        }
        if lo + w > 1.0 {
            lo = 1.0 - w;
        }
        out.lo[i] = lo;
        out.hi[i] = lo + w;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchEntry {
    pub round: usize,
    pub unit: Vec<f64>,
    pub config: Configuration,
    /// Raw metrics in schema order.
    pub metrics: Vec<f64>,
    pub state: Vec<f64>,
    pub objective: f64,
    pub downtime_s: f64,
    pub measurement_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchTrace {
    pub entries: Vec<SearchEntry>,
    pub best_so_far: Vec<f64>,
    /// Index of the first entry of each round.
    pub round_starts: Vec<usize>,
    /// Bounds searched in each round.
    pub round_bounds: Vec<SearchBounds>,
}

impl SearchTrace {
    /// Index of the best entry, earliest on ties.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if best.is_none_or(|b| e.objective > self.entries[b].objective) {
                best = Some(i);
            }
        }
        best
    }

    pub fn recommended(&self) -> Option<&Configuration> {
        self.best_index().map(|i| &self.entries[i].config)
    }
}

/// Spends exactly `budget` evaluations in rounds of sampling and shrinking.
///
/// On an environment error the partial trace is returned alongside it.
pub fn run_baseline<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    objective: &ObjectiveSpec,
    budget: usize,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> std::result::Result<SearchTrace, (SearchTrace, Error)> {
    let mut trace = SearchTrace::default();
    if let Err(e) = cfg.check() {
        return Err((trace, e));
    }
    if budget < cfg.samples_per_round {
        let e = Error::Definition(format!(
            "budget {budget} is smaller than samples_per_round {}",
            cfg.samples_per_round
        ));
        return Err((trace, e));
    }
    let descriptor = env.descriptor().clone();
    if let Err(e) = objective.check(&descriptor.schema) {
        return Err((trace, e));
    }
    let mut norm = RunningBounds::new(descriptor.schema.len());
    let mut bounds = SearchBounds::full(descriptor.space.dim());
    let mut round = 0;
    while trace.entries.len() < budget {
        let remaining = budget - trace.entries.len();
        let n = cfg.samples_per_round.min(remaining).max(2);
        let points = match dds_sample(&descriptor.space, &bounds, n, rng) {
            Ok(p) => p,
            Err(e) => return Err((trace, e)),
        };
        trace.round_starts.push(trace.entries.len());
        trace.round_bounds.push(bounds.clone());
        for p in points.into_iter().take(remaining) {
            let evaluated = env.apply(&p.config).and_then(|r| {
                let metrics = r.snapshot.ordered(&descriptor.schema)?;
                let state = normalize(&r.snapshot, &descriptor.schema, &mut norm)?;
                let value = scalarize(&state, objective, &descriptor.schema)?;
                Ok((r, metrics, state, value))
            });
            let (r, metrics, state, value) = match evaluated {
                Ok(x) => x,
                Err(e) => return Err((trace, e)),
            };
            let best = trace.best_so_far.last().map_or(value, |b| b.max(value));
            trace.best_so_far.push(best);
            trace.entries.push(SearchEntry {
                round,
                unit: p.unit,
                config: p.config,
                metrics,
                state: state.0,
                objective: value,
                downtime_s: r.downtime_s,
                measurement_s: r.measurement_s,
            });
        }
        let incumbent = trace.best_index().expect("round evaluated at least one point");
        bounds = match rbs_shrink(&bounds, &trace.entries[incumbent].unit, cfg.shrink) {
            Ok(b) => b,
            Err(e) => return Err((trace, e)),
        };
        round += 1;
    }
    Ok(trace)
}
