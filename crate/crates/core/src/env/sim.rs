//! Simulated file system: workload profiles as gaussian response surfaces
//! over the mapped parameter coordinates, with restart and measurement time
//! kept on a simulated clock.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use super::{EnvDescriptor, Environment, EvaluationResult, RestartKind, DFS_RESTART_S, WORKLOAD_RESTART_S};
use crate::error::{Error, Result};
use crate::objective::{MetricDescriptor, MetricSchema, MetricsSnapshot};
use crate::param_space::{Configuration, ParameterDef, ParameterSpace};

/// Simulated length of one measurement run, in seconds.
pub const MEASUREMENT_WINDOW_S: f64 = 120.0;

/// Normalization ceiling for indicators without explicit bounds, as a multiple of the peak.
const INDICATOR_HEADROOM: f64 = 1.25;

const BUILTIN: &str = include_str!("../../profiles/dfs.toml");

#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    /// Native units, one entry per parameter.
    pub optimum: Vec<f64>,
    /// Standard deviation in mapped coordinates.
    pub width: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorSurface {
    pub metric: String,
    pub peak: f64,
    pub primary: Bump,
    /// Lower second mode, as (height relative to peak, bump).
    pub secondary: Option<(f64, Bump)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxMetric {
    pub metric: String,
    pub intercept: f64,
    /// Coefficients on indicator value / indicator peak.
    pub terms: BTreeMap<String, f64>,
    /// Noise standard deviation per unit of profile noise fraction.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimProfile {
    pub name: String,
    pub description: String,
    pub noise: f64,
    pub default_config: Configuration,
    pub indicators: Vec<IndicatorSurface>,
    pub aux: Vec<AuxMetric>,
    pub descriptor: EnvDescriptor,
}

impl Bump {
    fn eval(&self, space: &ParameterSpace, config: &Configuration) -> f64 {
        space
            .params()
            .iter()
            .zip(&config.values)
            .zip(self.optimum.iter().zip(&self.width))
            .map(|((p, &v), (&opt, &w))| {
                let d = p.to_unit(v) - p.to_unit(opt);
                (-d * d / (2.0 * w * w)).exp()
            })
            .product()
    }
}

impl IndicatorSurface {
    /// Noise-free indicator value.
    pub fn value(&self, space: &ParameterSpace, config: &Configuration) -> f64 {
        let main = self.primary.eval(space, config);
        let side = self
            .secondary
            .as_ref()
            .map_or(0.0, |(h, b)| h * b.eval(space, config));
        self.peak * main.max(side)
    }
}

impl SimProfile {
    pub fn space(&self) -> &ParameterSpace {
        &self.descriptor.space
    }

    pub fn indicator(&self, metric: &str) -> Option<&IndicatorSurface> {
        self.indicators.iter().find(|i| i.metric == metric)
    }

    /// One measurement of every schema metric; `noise` is the fraction of
    /// each indicator's peak used as noise standard deviation.
    pub fn sim_response<R: Rng + ?Sized>(
        &self,
        config: &Configuration,
        noise: f64,
        rng: &mut R,
    ) -> Result<BTreeMap<String, f64>> {
        self.space().check(config)?;
        let gauss = |sd: f64, rng: &mut R| -> f64 {
            if sd > 0.0 {
                Normal::new(0.0, sd).expect("positive sd").sample(rng)
            } else {
                0.0
            }
        };
        let mut values = BTreeMap::new();
        let mut relative = BTreeMap::new();
        for ind in &self.indicators {
            let v = (ind.value(self.space(), config) + gauss(noise * ind.peak, rng)).max(0.0);
            relative.insert(ind.metric.as_str(), v / ind.peak);
            values.insert(ind.metric.clone(), v);
        }
        for aux in &self.aux {
            let base: f64 = aux.intercept
                + aux
                    .terms
                    .iter()
                    .map(|(m, c)| c * relative.get(m.as_str()).copied().unwrap_or(0.0))
                    .sum::<f64>();
            values.insert(aux.metric.clone(), (base + gauss(noise * aux.spread, rng)).max(0.0));
        }
        Ok(values)
    }
}

/// A set of profiles sharing one parameter space and metric schema.
#[derive(Clone, Debug)]
pub struct ProfileSet {
    profiles: Vec<SimProfile>,
}

impl ProfileSet {
    /// The shipped profile definitions.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("shipped profiles are valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| Error::Definition(e.to_string()))?;
        raw.build()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|p| p.name.as_str())
    }

    pub fn profiles(&self) -> &[SimProfile] {
        &self.profiles
    }

    pub fn get(&self, name: &str) -> Result<&SimProfile> {
        self.profiles.iter().find(|p| p.name == name).ok_or_else(|| {
            Error::Definition(format!(
                "unknown profile `{name}` (available: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

#[derive(Deserialize)]
struct RawParam {
    #[serde(flatten)]
    def: ParameterDef,
    restart: RestartKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSecondary {
    height: f64,
    optimum: Vec<f64>,
    width: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIndicator {
    metric: String,
    peak: f64,
    optimum: Vec<f64>,
    width: Vec<f64>,
    secondary: Option<RawSecondary>,
}

#[derive(Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAux {
    metric: String,
    intercept: f64,
    #[serde(default)]
    terms: BTreeMap<String, f64>,
    #[serde(default)]
    spread: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    name: String,
    #[serde(default)]
    description: String,
    noise: f64,
    default: Vec<f64>,
    indicators: Vec<RawIndicator>,
    #[serde(default)]
    aux: Vec<RawAux>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    params: Vec<RawParam>,
    metrics: Vec<MetricDescriptor>,
    #[serde(default)]
    aux: Vec<RawAux>,
    profiles: Vec<RawProfile>,
}

impl RawFile {
    fn build(self) -> Result<ProfileSet> {
        let restart: Vec<RestartKind> = self.params.iter().map(|p| p.restart).collect();
        let space = ParameterSpace::new(self.params.into_iter().map(|p| p.def).collect(), vec![])?;
        // validates names before per-profile bounds are filled in
        MetricSchema::new(self.metrics.clone())?;
        let mut profiles = Vec::with_capacity(self.profiles.len());
        for rp in self.profiles {
            if profiles.iter().any(|p: &SimProfile| p.name == rp.name) {
                return Err(Error::Definition(format!("duplicate profile `{}`", rp.name)));
            }
            profiles.push(build_profile(rp, &space, &restart, &self.metrics, &self.aux)?);
        }
        if profiles.is_empty() {
            return Err(Error::Definition("no profiles defined".into()));
        }
        Ok(ProfileSet { profiles })
    }
}

fn build_profile(
    rp: RawProfile,
    space: &ParameterSpace,
    restart: &[RestartKind],
    metrics: &[MetricDescriptor],
    shared_aux: &[RawAux],
) -> Result<SimProfile> {
    let ctx = |m: String| Error::Definition(format!("profile `{}`: {m}", rp.name));
    if !(0.0..=0.5).contains(&rp.noise) {
        return Err(ctx(format!("noise fraction {} outside [0, 0.5]", rp.noise)));
    }
    let check_point = |v: &[f64], what: &str| -> Result<Configuration> {
        let c = Configuration::new(v.to_vec());
        space.check(&c).map_err(|e| ctx(format!("{what}: {e}")))?;
        Ok(c)
    };
    let make_bump = |optimum: Vec<f64>, width: Vec<f64>, what: &str| -> Result<Bump> {
        check_point(&optimum, what)?;
        if width.len() != space.dim() || width.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(ctx(format!("{what}: widths must be positive, one per parameter")));
        }
        Ok(Bump { optimum, width })
    };

    let default_config = check_point(&rp.default, "default")?;
    let mut indicators = Vec::new();
    for ri in rp.indicators {
        if !(ri.peak > 0.0 && ri.peak.is_finite()) {
            return Err(ctx(format!("indicator `{}` peak must be positive", ri.metric)));
        }
        let primary = make_bump(ri.optimum, ri.width, &ri.metric)?;
        let secondary = match ri.secondary {
            None => None,
            Some(s) => {
                if !(s.height > 0.0 && s.height < 1.0) {
                    return Err(ctx(format!("indicator `{}` secondary height must be in (0, 1)", ri.metric)));
                }
                Some((s.height, make_bump(s.optimum, s.width, &ri.metric)?))
            }
        };
        indicators.push(IndicatorSurface {
            metric: ri.metric,
            peak: ri.peak,
            primary,
            secondary,
        });
    }

    let mut aux: Vec<RawAux> = shared_aux
        .iter()
        .filter(|a| !rp.aux.iter().any(|o| o.metric == a.metric))
        .cloned()
        .collect();
    aux.extend(rp.aux);
    let aux: Vec<AuxMetric> = aux
        .into_iter()
        .map(|a| AuxMetric {
            metric: a.metric,
            intercept: a.intercept,
            terms: a.terms,
            spread: a.spread,
        })
        .collect();
    for a in &aux {
        if let Some(t) = a.terms.keys().find(|t| !indicators.iter().any(|i| &i.metric == *t)) {
            return Err(ctx(format!("aux `{}` depends on unknown indicator `{t}`", a.metric)));
        }
    }

    // every schema metric must be produced exactly once
    let produced: Vec<&str> = indicators
        .iter()
        .map(|i| i.metric.as_str())
        .chain(aux.iter().map(|a| a.metric.as_str()))
        .collect();
    for m in metrics {
        match produced.iter().filter(|p| **p == m.name).count() {
            1 => {}
            0 => return Err(ctx(format!("metric `{}` is not produced", m.name))),
            _ => return Err(ctx(format!("metric `{}` is produced twice", m.name))),
        }
    }
    if let Some(p) = produced.iter().find(|p| !metrics.iter().any(|m| m.name == **p)) {
        return Err(ctx(format!("`{p}` is not in the metric schema")));
    }

    let schema = MetricSchema::new(
        metrics
            .iter()
            .map(|m| {
                let mut m = m.clone();
                if let Some(ind) = indicators.iter().find(|i| i.metric == m.name) {
                    m.norm_min.get_or_insert(0.0);
                    m.norm_max.get_or_insert(INDICATOR_HEADROOM * ind.peak);
                }
                m
            })
            .collect(),
    )?;

    Ok(SimProfile {
        name: rp.name,
        description: rp.description,
        noise: rp.noise,
        default_config,
        indicators,
        aux,
        descriptor: EnvDescriptor::new(space.clone(), schema, restart.to_vec())?,
    })
}

/// An environment instance driving one simulated profile.
#[derive(Clone, Debug)]
pub struct SimEnv {
    profile: SimProfile,
    noise: f64,
    rng: ChaCha8Rng,
    current: Configuration,
    clock: f64,
}

impl SimEnv {
    pub fn new(profile: SimProfile, seed: u64) -> Self {
        Self {
            noise: profile.noise,
            current: profile.default_config.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: 0.0,
            profile,
        }
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn set_noise(&mut self, noise: f64) -> Result<()> {
        if !(0.0..=0.5).contains(&noise) {
            return Err(Error::Definition(format!("noise fraction {noise} outside [0, 0.5]")));
        }
        self.noise = noise;
        Ok(())
    }

    /// Noise-free copy; evaluating it never touches this instance's rng.
    pub fn noiseless(&self) -> SimEnv {
        let mut env = SimEnv::new(self.profile.clone(), 0);
        env.noise = 0.0;
        env
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Resumes from a saved position: running configuration and simulated clock.
    pub fn restore(&mut self, current: Configuration, clock: f64) -> Result<()> {
        self.profile.space().check(&current)?;
        self.current = current;
        self.clock = clock;
        Ok(())
    }

    pub fn current(&self) -> &Configuration {
        &self.current
    }
}

impl Environment for SimEnv {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.profile.descriptor
    }

    fn apply(&mut self, config: &Configuration) -> Result<EvaluationResult> {
        self.profile.space().check(config)?;
        let restart = self.profile.descriptor.restart_needed(Some(&self.current), config);
        let downtime_s = match restart {
            RestartKind::Workload => self.rng.random_range(WORKLOAD_RESTART_S.0..=WORKLOAD_RESTART_S.1),
            RestartKind::Dfs => DFS_RESTART_S,
        };
        let values = self.profile.sim_response(config, self.noise, &mut self.rng)?;
        let window_start = self.clock + downtime_s;
        let window_end = window_start + MEASUREMENT_WINDOW_S;
        self.clock = window_end;
        self.current = config.clone();
        Ok(EvaluationResult {
            snapshot: MetricsSnapshot {
                values,
                window_start,
                window_end,
            },
            downtime_s,
            measurement_s: MEASUREMENT_WINDOW_S,
            restart,
        })
    }

    fn default_config(&self) -> Configuration {
        self.profile.default_config.clone()
    }

    fn resume_at(&mut self, current: &Configuration, clock: f64) -> Result<()> {
        self.restore(current.clone(), clock)
    }

    fn as_sim(&self) -> Option<&SimEnv> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROFILES: [&str; 5] = ["file_server", "video_server", "seq_write", "seq_read", "random_rw"];

    #[test]
    fn builtin_profiles_load() {
        let set = ProfileSet::builtin();
        assert_eq!(set.names().collect::<Vec<_>>(), PROFILES);
        for p in set.profiles() {
            assert_eq!(p.descriptor.schema.len(), 12);
            assert!(p.descriptor.schema.metrics().iter().all(|m| m.norm_min.is_some() && m.norm_max.is_some()));
            assert_eq!(p.descriptor.restart, vec![RestartKind::Workload; 2]);
        }
        assert!(set.get("nope").is_err());
    }

    #[test]
    fn peak_at_optimum_and_lower_elsewhere() {
        let set = ProfileSet::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in set.profiles() {
            for ind in &p.indicators {
                let at = Configuration::new(ind.primary.optimum.clone());
                let v = p.sim_response(&at, 0.0, &mut rng).unwrap()[&ind.metric];
                assert_eq!(v, ind.peak, "{} {}", p.name, ind.metric);
                for c in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
                    for s in [65536.0, 1048576.0, 3e6, 67108864.0] {
                        let cfg = Configuration::new(vec![c, s]);
                        if cfg == at {
                            continue;
                        }
                        assert!(p.sim_response(&cfg, 0.0, &mut rng).unwrap()[&ind.metric] < ind.peak);
                    }
                }
            }
        }
    }

    #[test]
    fn throughput_optima_are_distinct_and_random_rw_conflicts() {
        let set = ProfileSet::builtin();
        let optima: Vec<_> = set
            .profiles()
            .iter()
            .map(|p| p.indicator("throughput").unwrap().primary.optimum.clone())
            .collect();
        for i in 0..optima.len() {
            for j in i + 1..optima.len() {
                assert_ne!(optima[i], optima[j]);
            }
        }
        let rr = set.get("random_rw").unwrap();
        assert_ne!(
            rr.indicator("throughput").unwrap().primary.optimum,
            rr.indicator("iops").unwrap().primary.optimum
        );
    }

    #[test]
    fn iowait_falls_as_throughput_rises() {
        let set = ProfileSet::builtin();
        let p = set.get("seq_write").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let best = p.sim_response(&Configuration::new(vec![6.0, 4987896.0]), 0.0, &mut rng).unwrap();
        let worst = p.sim_response(&Configuration::new(vec![1.0, 65536.0]), 0.0, &mut rng).unwrap();
        assert!(best["throughput"] > worst["throughput"]);
        assert!(best["cpu_usage_iowait"] < worst["cpu_usage_iowait"]);
    }

    #[test]
    fn apply_accounts_downtime_and_clock() {
        let set = ProfileSet::builtin();
        let mut env = SimEnv::new(set.get("video_server").unwrap().clone(), 3);
        let mut total = 0.0;
        for i in 0..20 {
            let c = Configuration::new(vec![1.0 + (i % 6) as f64, 1048576.0 * (1 + i % 3) as f64]);
            let r = env.apply(&c).unwrap();
            assert_eq!(r.restart, RestartKind::Workload);
            assert!((12.0..=20.0).contains(&r.downtime_s));
            assert_eq!(r.measurement_s, MEASUREMENT_WINDOW_S);
            assert!((r.snapshot.window_end - r.snapshot.window_start - MEASUREMENT_WINDOW_S).abs() < 1e-9);
            total += r.downtime_s + r.measurement_s;
        }
        assert!((env.clock() - total).abs() < 1e-9);
        assert!(env.apply(&Configuration::new(vec![7.0, 1048576.0])).is_err());
    }

    #[test]
    fn dfs_restart_costs_thirty_seconds() {
        let text = BUILTIN.replacen("restart = \"workload\"", "restart = \"dfs\"", 1);
        let set = ProfileSet::from_toml(&text).unwrap();
        let mut env = SimEnv::new(set.get("seq_read").unwrap().clone(), 1);
        let r = env.apply(&Configuration::new(vec![4.0, 1048576.0])).unwrap();
        assert_eq!(r.restart, RestartKind::Dfs);
        assert_eq!(r.downtime_s, 30.0);
        // only stripe_size changed: workload restart
        let r = env.apply(&Configuration::new(vec![4.0, 2097152.0])).unwrap();
        assert_eq!(r.restart, RestartKind::Workload);
        assert!((12.0..=20.0).contains(&r.downtime_s));
    }

    #[test]
    fn noiseless_apply_is_repeatable() {
        let set = ProfileSet::builtin();
        let mut env = SimEnv::new(set.get("file_server").unwrap().clone(), 5);
        env.set_noise(0.0).unwrap();
        let c = Configuration::new(vec![3.0, 881744.0]);
        let a = env.apply(&c).unwrap().snapshot.values;
        let b = env.apply(&c).unwrap().snapshot.values;
        assert_eq!(a, b);
        env.set_noise(0.05).unwrap();
        let x = env.apply(&c).unwrap().snapshot.values;
        let y = env.apply(&c).unwrap().snapshot.values;
        assert_ne!(x, y);
    }

    #[test]
    fn rejects_bad_profiles() {
        let bad_noise = BUILTIN.replacen("noise = 0.05", "noise = 0.9", 1);
        assert!(ProfileSet::from_toml(&bad_noise).is_err());
        let bad_opt = BUILTIN.replacen("optimum = [3, 881744]", "optimum = [9, 881744]", 1);
        assert!(ProfileSet::from_toml(&bad_opt).is_err());
        let bad_peak = BUILTIN.replacen("peak = 160", "peak = -1", 1);
        assert!(ProfileSet::from_toml(&bad_peak).is_err());
        let bad_width = BUILTIN.replacen("width = [0.3, 0.2]", "width = [0.0, 0.2]", 1);
        assert!(ProfileSet::from_toml(&bad_width).is_err());
        let missing = BUILTIN.replacen("metric = \"ram_used_percent\"", "metric = \"ram_free\"", 1);
        assert!(ProfileSet::from_toml(&missing).is_err());
    }
}
