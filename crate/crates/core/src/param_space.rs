//! Tunable parameter space: bounded continuous and discrete knobs, single-parameter
//! constraints, and the mapping between unit-interval actions and concrete values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Continuous,
    Discrete,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    /// The affine action map is applied to `log2(value)`.
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub kind: ParamKind,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl ParameterDef {
    pub fn continuous(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: ParamKind::Continuous,
            min,
            max,
            scale: Scale::Linear,
        }
    }

    pub fn discrete(name: &str, min: i64, max: i64) -> Self {
        Self {
            name: name.to_string(),
            kind: ParamKind::Discrete,
            min: min as f64,
            max: max as f64,
            scale: Scale::Linear,
        }
    }

    pub fn with_scale(mut self, scale: Scale) -> Self {
        self.scale = scale;
        self
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Definition(format!("parameter `{}`: {msg}", self.name)));
        if !self.min.is_finite() || !self.max.is_finite() {
            return bad("bounds must be finite");
        }
        if self.min >= self.max {
            return bad("min must be < max");
        }
        if self.kind == ParamKind::Discrete && (self.min.fract() != 0.0 || self.max.fract() != 0.0) {
            return bad("discrete bounds must be integral");
        }
        if self.scale == Scale::Log && self.min <= 0.0 {
            return bad("log scale requires min > 0");
        }
        Ok(())
    }

    /// Position of `value` in the mapped unit coordinate (log domain for log scale).
    pub fn to_unit(&self, value: f64) -> f64 {
        let u = match self.scale {
            Scale::Linear => (value - self.min) / (self.max - self.min),
            Scale::Log => (value.log2() - self.min.log2()) / (self.max.log2() - self.min.log2()),
        };
        u.clamp(0.0, 1.0)
    }

    /// The raw action map, before constraint projection.
    pub fn from_unit(&self, a: f64) -> f64 {
        let v = match (self.scale, self.kind) {
            (Scale::Linear, ParamKind::Continuous) => a * (self.max - self.min) + self.min,
            (Scale::Linear, ParamKind::Discrete) => (a * (self.max - self.min) + self.min + 0.5).floor(),
            (Scale::Log, kind) => {
                let (lo, hi) = (self.min.log2(), self.max.log2());
                let v = (a * (hi - lo) + lo).exp2();
                match kind {
                    ParamKind::Continuous => v,
                    ParamKind::Discrete => (v + 0.5).floor(),
                }
            }
        };
        // exp2(log2(x)) can land one ulp outside the bounds
        v.clamp(self.min, self.max)
    }

    pub fn cardinality(&self) -> Option<usize> {
        match self.kind {
            ParamKind::Discrete => Some((self.max - self.min) as usize + 1),
            ParamKind::Continuous => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Comparator {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Lt => value < bound,
            Comparator::Le => value <= bound,
            Comparator::Ge => value >= bound,
            Comparator::Gt => value > bound,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constraint {
    pub param_index: usize,
    pub comparator: Comparator,
    pub bound: f64,
}

/// Constraint as written in a session file, referencing the parameter by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDecl {
    pub param: String,
    pub op: Comparator,
    pub bound: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpaceDecl {
    pub params: Vec<ParameterDef>,
    #[serde(default)]
    pub constraints: Vec<ConstraintDecl>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpace {
    params: Vec<ParameterDef>,
    constraints: Vec<Constraint>,
    /// Per-parameter feasible interval after intersecting bounds and constraints.
    feasible: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub values: Vec<f64>,
}

impl Configuration {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MappedAction {
    pub config: Configuration,
    /// True when at least one value was moved to satisfy a constraint.
    pub projected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonFinite { param: String },
    Bound { param: String, value: f64, min: f64, max: f64 },
    NonIntegral { param: String, value: f64 },
    Constraint { param: String, value: f64, comparator: Comparator, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { param } => write!(f, "{param} is not finite"),
            Violation::Bound { param, value, min, max } => {
                write!(f, "{param}={value} outside [{min}, {max}]")
            }
            Violation::NonIntegral { param, value } => write!(f, "{param}={value} is not integral"),
            Violation::Constraint { param, value, comparator, bound } => {
                write!(f, "{param}={value} violates {param} {comparator} {bound}")
            }
        }
    }
}

impl ParameterSpace {
    pub fn new(params: Vec<ParameterDef>, constraints: Vec<Constraint>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Definition("parameter space is empty".into()));
        }
        for (i, p) in params.iter().enumerate() {
            p.check()?;
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Definition(format!("duplicate parameter `{}`", p.name)));
            }
        }
        for c in &constraints {
            if c.param_index >= params.len() {
                return Err(Error::Definition(format!(
                    "constraint references parameter index {} of {}",
                    c.param_index,
                    params.len()
                )));
            }
            if !c.bound.is_finite() {
                return Err(Error::Definition("constraint bound must be finite".into()));
            }
        }
        let feasible = params
            .iter()
            .enumerate()
            .map(|(i, p)| feasible_interval(p, constraints.iter().filter(|c| c.param_index == i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            constraints,
            feasible,
        })
    }

    pub fn from_decl(decl: &SpaceDecl) -> Result<Self> {
        let constraints = decl
            .constraints
            .iter()
            .map(|c| {
                let param_index = decl
                    .params
                    .iter()
                    .position(|p| p.name == c.param)
                    .ok_or_else(|| Error::Definition(format!("constraint on unknown parameter `{}`", c.param)))?;
                Ok(Constraint {
                    param_index,
                    comparator: c.op,
                    bound: c.bound,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(decl.params.clone(), constraints)
    }

    pub fn to_decl(&self) -> SpaceDecl {
        SpaceDecl {
            params: self.params.clone(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintDecl {
                    param: self.params[c.param_index].name.clone(),
                    op: c.comparator,
                    bound: c.bound,
                })
                .collect(),
        }
    }

    pub fn params(&self) -> &[ParameterDef] {
        &self.params
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Maps a unit-interval action to a configuration, projecting onto the
    /// constraint-feasible set where necessary.
    pub fn map_action(&self, action: &[f64]) -> Result<MappedAction> {
        if action.len() != self.dim() {
            return Err(Error::shape("action", self.dim(), action.len()));
        }
        let mut projected = false;
        let mut values = Vec::with_capacity(self.dim());
        for ((p, &a), &(lo, hi)) in self.params.iter().zip(action).zip(&self.feasible) {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidAction(format!("{}: component {a} outside [0, 1]", p.name)));
            }
            let raw = p.from_unit(a);
            let v = raw.clamp(lo, hi);
            projected |= v != raw;
            values.push(v);
        }
        Ok(MappedAction {
            config: Configuration { values },
            projected,
        })
    }

    /// Inverse of [`map_action`](Self::map_action); discrete values map to their cell centers.
    pub fn unmap_config(&self, config: &Configuration) -> Result<Vec<f64>> {
        self.check(config)?;
        Ok(self
            .params
            .iter()
            .zip(&config.values)
            .map(|(p, &v)| p.to_unit(v))
            .collect())
    }

    pub fn validate(&self, config: &Configuration) -> Result<Vec<Violation>> {
        if config.values.len() != self.dim() {
            return Err(Error::shape("configuration", self.dim(), config.values.len()));
        }
        let mut out = Vec::new();
        for (p, &v) in self.params.iter().zip(&config.values) {
            if !v.is_finite() {
                out.push(Violation::NonFinite { param: p.name.clone() });
                continue;
            }
            if v < p.min || v > p.max {
                out.push(Violation::Bound {
                    param: p.name.clone(),
                    value: v,
                    min: p.min,
                    max: p.max,
                });
            }
            if p.kind == ParamKind::Discrete && v.fract() != 0.0 {
                out.push(Violation::NonIntegral { param: p.name.clone(), value: v });
            }
        }
        for c in &self.constraints {
            let v = config.values[c.param_index];
            if v.is_finite() && !c.comparator.holds(v, c.bound) {
                out.push(Violation::Constraint {
                    param: self.params[c.param_index].name.clone(),
                    value: v,
                    comparator: c.comparator,
                    bound: c.bound,
                });
            }
        }
        Ok(out)
    }

    /// [`validate`](Self::validate) folded into a single error.
    pub fn check(&self, config: &Configuration) -> Result<()> {
        let violations = self.validate(config)?;
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations.iter().map(ToString::to_string).collect()))
        }
    }
}

// Strict comparators over reals have no closest feasible point; they are
// tightened by one ulp (one unit for discrete parameters).
fn feasible_interval<'a>(p: &ParameterDef, constraints: impl Iterator<Item = &'a Constraint>) -> Result<(f64, f64)> {
    let discrete = p.kind == ParamKind::Discrete;
    let (mut lo, mut hi) = (p.min, p.max);
    for c in constraints {
        let b = c.bound;
        match c.comparator {
            Comparator::Le => hi = hi.min(if discrete { b.floor() } else { b }),
            Comparator::Lt => hi = hi.min(if discrete { b.ceil() - 1.0 } else { b.next_down() }),
            Comparator::Ge => lo = lo.max(if discrete { b.ceil() } else { b }),
            Comparator::Gt => lo = lo.max(if discrete { b.floor() + 1.0 } else { b.next_up() }),
        }
    }
    if lo > hi {
        return Err(Error::Definition(format!(
            "parameter `{}` has no value satisfying its bounds and constraints",
            p.name
        )));
    }
    Ok((lo, hi))
}
