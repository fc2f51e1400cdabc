//! Metric normalization, weighted-sum objective and step reward.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the reward denominator.
pub const REWARD_EPS: f64 = 1e-6;
pub const REWARD_MIN: f64 = -1.0;
pub const REWARD_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScope {
    Server,
    Client,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub scope: MetricScope,
    #[serde(default)]
    pub norm_min: Option<f64>,
    #[serde(default)]
    pub norm_max: Option<f64>,
}

impl MetricDescriptor {
    pub fn new(name: &str, unit: &str, scope: MetricScope, bounds: Option<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
            scope,
            norm_min: bounds.map(|b| b.0),
            norm_max: bounds.map(|b| b.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MetricDescriptor>", into = "Vec<MetricDescriptor>")]
pub struct MetricSchema {
    metrics: Vec<MetricDescriptor>,
}

impl MetricSchema {
    pub fn new(metrics: Vec<MetricDescriptor>) -> Result<Self> {
        if metrics.is_empty() {
            return Err(Error::Definition("metric schema is empty".into()));
        }
        for (i, m) in metrics.iter().enumerate() {
            if metrics[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::Definition(format!("duplicate metric `{}`", m.name)));
            }
            if let (Some(lo), Some(hi)) = (m.norm_min, m.norm_max) {
                if !(lo < hi) {
                    return Err(Error::Definition(format!("metric `{}`: norm_min must be < norm_max", m.name)));
                }
            }
        }
        Ok(Self { metrics })
    }

    pub fn metrics(&self) -> &[MetricDescriptor] {
        &self.metrics
    }

    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.metrics.iter().map(|m| m.name.as_str())
    }
}

impl TryFrom<Vec<MetricDescriptor>> for MetricSchema {
    type Error = Error;

    fn try_from(v: Vec<MetricDescriptor>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MetricSchema> for Vec<MetricDescriptor> {
    fn from(s: MetricSchema) -> Self {
        s.metrics
    }
}

/// Per-metric weights; metrics not listed carry weight zero. Negative weights
/// express metrics where lower is better.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveSpec {
    pub weights: BTreeMap<String, f64>,
}

impl ObjectiveSpec {
    pub fn new<'a>(weights: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Self {
            weights: weights.into_iter().map(|(k, w)| (k.to_string(), w)).collect(),
        }
    }

    pub fn check(&self, schema: &MetricSchema) -> Result<()> {
        if let Some(name) = self.weights.keys().find(|n| schema.index_of(n).is_none()) {
            return Err(Error::Definition(format!("objective weight on unknown metric `{name}`")));
        }
        if let Some((name, _)) = self.weights.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::Definition(format!("objective weight on `{name}` is not finite")));
        }
        if self.weights.values().all(|&w| w == 0.0) {
            return Err(Error::Definition("objective needs at least one nonzero weight".into()));
        }
        Ok(())
    }

    /// Weights aligned to schema order.
    pub fn weight_vector(&self, schema: &MetricSchema) -> Vec<f64> {
        schema
            .names()
            .map(|n| self.weights.get(n).copied().unwrap_or(0.0))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub values: BTreeMap<String, f64>,
    /// Seconds; simulated clock for the simulator, unix time for external sources.
    pub window_start: f64,
    pub window_end: f64,
}

impl MetricsSnapshot {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// Values in schema order, or the list of missing names.
    pub fn ordered(&self, schema: &MetricSchema) -> Result<Vec<f64>> {
        let missing: Vec<String> = schema
            .names()
            .filter(|n| !self.values.contains_key(*n))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteSnapshot(missing));
        }
        Ok(schema.names().map(|n| self.values[n]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observed min/max per metric, used where the schema leaves a bound unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl RunningBounds {
    pub fn new(k: usize) -> Self {
        Self {
            min: vec![f64::INFINITY; k],
            max: vec![f64::NEG_INFINITY; k],
        }
    }

    fn observe(&mut self, values: &[f64]) {
        for ((lo, hi), &v) in self.min.iter_mut().zip(self.max.iter_mut()).zip(values) {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    }
}

pub fn normalize(snapshot: &MetricsSnapshot, schema: &MetricSchema, bounds: &mut RunningBounds) -> Result<StateVector> {
    let raw = snapshot.ordered(schema)?;
    if bounds.min.len() != schema.len() {
        return Err(Error::shape("running bounds", schema.len(), bounds.min.len()));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Definition(format!(
            "metric `{}` has non-finite value",
            schema.metrics()[i].name
        )));
    }
    bounds.observe(&raw);
    let state = schema
        .metrics()
        .iter()
        .zip(&raw)
        .enumerate()
        .map(|(i, (m, &v))| {
            let lo = m.norm_min.unwrap_or(bounds.min[i]);
            let hi = m.norm_max.unwrap_or(bounds.max[i]);
            if hi <= lo {
                0.5
            } else {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(StateVector(state))
}

pub fn scalarize(state: &StateVector, objective: &ObjectiveSpec, schema: &MetricSchema) -> Result<f64> {
    if state.len() != schema.len() {
        return Err(Error::shape("state", schema.len(), state.len()));
    }
    Ok(objective
        .weight_vector(schema)
        .iter()
        .zip(state.as_slice())
        .map(|(w, s)| w * s)
        .sum())
}

/// Proportional change of the scalarized objective, clipped to `[REWARD_MIN, REWARD_MAX]`.
pub fn reward(prev: &StateVector, next: &StateVector, objective: &ObjectiveSpec, schema: &MetricSchema) -> Result<f64> {
    let before = scalarize(prev, objective, schema)?;
    let after = scalarize(next, objective, schema)?;
    Ok(((after - before) / before.max(REWARD_EPS)).clamp(REWARD_MIN, REWARD_MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(bounds: &[Option<(f64, f64)>]) -> MetricSchema {
        MetricSchema::new(
            bounds
                .iter()
                .enumerate()
                .map(|(i, b)| MetricDescriptor::new(&format!("m{i}"), "", MetricScope::Server, *b))
                .collect(),
        )
        .unwrap()
    }

    fn snap(values: &[f64]) -> MetricsSnapshot {
        MetricsSnapshot {
            values: values.iter().enumerate().map(|(i, v)| (format!("m{i}"), *v)).collect(),
            window_start: 0.0,
            window_end: 1.0,
        }
    }

    fn weights(w: &[f64]) -> ObjectiveSpec {
        ObjectiveSpec {
            weights: w.iter().enumerate().map(|(i, w)| (format!("m{i}"), *w)).collect(),
        }
    }

    #[test]
    fn normalize_with_explicit_bounds() {
        let s = schema(&[Some((0.0, 100.0))]);
        let mut rb = RunningBounds::new(1);
        assert_eq!(normalize(&snap(&[50.0]), &s, &mut rb).unwrap().0, vec![0.5]);
        assert_eq!(normalize(&snap(&[0.0]), &s, &mut rb).unwrap().0, vec![0.0]);
        assert_eq!(normalize(&snap(&[100.0]), &s, &mut rb).unwrap().0, vec![1.0]);
        assert_eq!(normalize(&snap(&[150.0]), &s, &mut rb).unwrap().0, vec![1.0]);
    }

    #[test]
    fn normalize_with_running_bounds() {
        let s = schema(&[None]);
        let mut rb = RunningBounds::new(1);
        assert_eq!(normalize(&snap(&[3.0]), &s, &mut rb).unwrap().0, vec![0.5]);
        assert_eq!(normalize(&snap(&[5.0]), &s, &mut rb).unwrap().0, vec![1.0]);
        assert_eq!(normalize(&snap(&[4.0]), &s, &mut rb).unwrap().0, vec![0.5]);
        assert_eq!(normalize(&snap(&[1.0]), &s, &mut rb).unwrap().0, vec![0.0]);
    }

    #[test]
    fn normalize_missing_metric() {
        let s = schema(&[None, None]);
        let mut rb = RunningBounds::new(2);
        match normalize(&snap(&[1.0]), &s, &mut rb) {
            Err(Error::IncompleteSnapshot(m)) => assert_eq!(m, vec!["m1".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalarize_examples() {
        let s2 = schema(&[None, None]);
        let v = scalarize(&StateVector(vec![0.4, 0.6]), &weights(&[1.0, 1.0]), &s2).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let s1 = schema(&[None]);
        assert_eq!(scalarize(&StateVector(vec![0.7]), &weights(&[1.0]), &s1).unwrap(), 0.7);
        assert_eq!(scalarize(&StateVector(vec![0.5, 0.5]), &weights(&[2.0, 1.0]), &s2).unwrap(), 1.5);
        assert!(scalarize(&StateVector(vec![0.5]), &weights(&[2.0, 1.0]), &s2).is_err());
    }

    #[test]
    fn unweighted_metrics_count_zero() {
        let s = schema(&[None, None, None]);
        let obj = ObjectiveSpec::new([("m1", 2.0)]);
        assert_eq!(obj.weight_vector(&s), vec![0.0, 2.0, 0.0]);
        assert_eq!(scalarize(&StateVector(vec![0.9, 0.25, 0.9]), &obj, &s).unwrap(), 0.5);
    }

    #[test]
    fn reward_examples() {
        let s1 = schema(&[None]);
        let w1 = weights(&[1.0]);
        let r = reward(&StateVector(vec![0.5]), &StateVector(vec![0.6]), &w1, &s1).unwrap();
        assert!((r - 0.2).abs() < 1e-12);
        assert_eq!(reward(&StateVector(vec![0.5]), &StateVector(vec![0.5]), &w1, &s1).unwrap(), 0.0);
        let s2 = schema(&[None, None]);
        let r = reward(&StateVector(vec![0.2, 0.3]), &StateVector(vec![0.3, 0.2]), &weights(&[1.0, 1.0]), &s2).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn reward_clipping_and_zero_denominator() {
        let s1 = schema(&[None]);
        let w1 = weights(&[1.0]);
        assert_eq!(reward(&StateVector(vec![0.0]), &StateVector(vec![0.5]), &w1, &s1).unwrap(), REWARD_MAX);
        assert_eq!(reward(&StateVector(vec![0.01]), &StateVector(vec![0.9]), &w1, &s1).unwrap(), REWARD_MAX);
        assert_eq!(reward(&StateVector(vec![0.0]), &StateVector(vec![0.0]), &w1, &s1).unwrap(), 0.0);
        let r = reward(&StateVector(vec![0.5]), &StateVector(vec![0.0]), &w1, &s1).unwrap();
        assert_eq!(r, -1.0);
    }

    #[test]
    fn objective_checks() {
        let s = schema(&[None, None]);
        assert!(ObjectiveSpec::new([("m0", 1.0)]).check(&s).is_ok());
        assert!(ObjectiveSpec::new([("m0", -1.0)]).check(&s).is_ok());
        assert!(ObjectiveSpec::new([("m0", 0.0)]).check(&s).is_err());
        assert!(ObjectiveSpec::new([("nope", 1.0)]).check(&s).is_err());
        assert!(ObjectiveSpec::default().check(&s).is_err());
    }

    #[test]
    fn schema_rejects_duplicates_and_bad_bounds() {
        let d = MetricDescriptor::new("a", "", MetricScope::Client, None);
        assert!(MetricSchema::new(vec![d.clone(), d.clone()]).is_err());
        let bad = MetricDescriptor::new("a", "", MetricScope::Client, Some((1.0, 1.0)));
        assert!(MetricSchema::new(vec![bad]).is_err());
    }

    proptest! {
        #[test]
        fn normalized_state_in_unit_cube(vals in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let s = schema(&[Some((-10.0, 10.0)), None]);
            let mut rb = RunningBounds::new(2);
            for pair in vals.chunks(2) {
                let v = [pair[0], *pair.get(1).unwrap_or(&pair[0])];
                let st = normalize(&snap(&v), &s, &mut rb).unwrap();
                prop_assert!(st.0.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn scalarize_is_linear(s1 in proptest::collection::vec(0.0f64..1.0, 3),
                               s2 in proptest::collection::vec(0.0f64..1.0, 3),
                               w in proptest::collection::vec(-3.0f64..3.0, 3),
                               alpha in 0.0f64..1.0) {
            let sc = schema(&[None, None, None]);
            let obj = weights(&w);
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let lhs = scalarize(&StateVector(mix), &obj, &sc).unwrap();
            let rhs = alpha * scalarize(&StateVector(s1), &obj, &sc).unwrap()
                + (1.0 - alpha) * scalarize(&StateVector(s2), &obj, &sc).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn reward_invariant_to_weight_scale(p in proptest::collection::vec(0.05f64..1.0, 2),
                                            n in proptest::collection::vec(0.05f64..1.0, 2),
                                            c in 0.1f64..100.0) {
            let sc = schema(&[None, None]);
            let base = weights(&[1.0, 2.0]);
            let scaled = weights(&[c, 2.0 * c]);
            let (p, n) = (StateVector(p), StateVector(n));
            let r1 = reward(&p, &n, &base, &sc).unwrap();
            let r2 = reward(&p, &n, &scaled, &sc).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
            let r_back = reward(&n, &p, &base, &sc).unwrap();
            prop_assert!(r1 == 0.0 && r_back == 0.0 || r1.signum() == -r_back.signum());
        }
    }
}
