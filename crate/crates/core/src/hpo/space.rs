use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Dimension {
    UniformInt { lo: i64, hi: i64 },
    UniformReal { lo: f64, hi: f64 },
    LogUniformReal { lo: f64, hi: f64 },
    Categorical { options: Vec<String> },
}

impl Dimension {
    pub fn categorical<S: Into<String>>(options: impl IntoIterator<Item = S>) -> Self {
        Dimension::Categorical {
            options: options.into_iter().map(Into::into).collect(),
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        let ok = match self {
            Dimension::UniformInt { lo, hi } => lo < hi,
            Dimension::UniformReal { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
            Dimension::LogUniformReal { lo, hi } => *lo > 0.0 && lo < hi && hi.is_finite(),
            Dimension::Categorical { options } => !options.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("dimension `{name}` has an empty or inverted range")))
        }
    }

    /// Bounds in the coordinates the Parzen estimator works in (log scale for
    /// log-uniform dimensions). `None` for categoricals.
    pub(crate) fn internal_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Dimension::UniformInt { lo, hi } => Some((lo as f64, hi as f64)),
            Dimension::UniformReal { lo, hi } => Some((lo, hi)),
            Dimension::LogUniformReal { lo, hi } => Some((lo.ln(), hi.ln())),
            Dimension::Categorical { .. } => None,
        }
    }

    pub(crate) fn to_internal(&self, v: &ParamValue) -> Option<f64> {
        match (self, v) {
            (Dimension::UniformInt { .. }, ParamValue::Int(i)) => Some(*i as f64),
            (Dimension::UniformReal { .. }, ParamValue::Real(x)) => Some(*x),
            (Dimension::LogUniformReal { .. }, ParamValue::Real(x)) => Some(x.ln()),
            _ => None,
        }
    }

    /// Maps an internal coordinate back to a value inside the bounds.
    pub(crate) fn value_at(&self, u: f64) -> ParamValue {
        match *self {
            Dimension::UniformInt { lo, hi } => ParamValue::Int((u.round() as i64).clamp(lo, hi)),
            Dimension::UniformReal { lo, hi } => ParamValue::Real(u.clamp(lo, hi)),
            Dimension::LogUniformReal { lo, hi } => ParamValue::Real(u.exp().clamp(lo, hi)),
            Dimension::Categorical { .. } => unreachable!("categorical dimensions have no internal coordinate"),
        }
    }

    pub fn sample_prior(&self, rng: &mut impl Rng) -> ParamValue {
        match self {
            Dimension::UniformInt { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
            Dimension::UniformReal { lo, hi } => ParamValue::Real(rng.random_range(*lo..=*hi)),
            Dimension::LogUniformReal { lo, hi } => ParamValue::Real(rng.random_range(lo.ln()..=hi.ln()).exp().clamp(*lo, *hi)),
            Dimension::Categorical { options } => ParamValue::Cat(options[rng.random_range(0..options.len())].clone()),
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Dimension::UniformInt { lo, hi }, ParamValue::Int(i)) => lo <= i && i <= hi,
            (Dimension::UniformReal { lo, hi }, ParamValue::Real(x))
            | (Dimension::LogUniformReal { lo, hi }, ParamValue::Real(x)) => lo <= x && x <= hi,
            (Dimension::Categorical { options }, ParamValue::Cat(c)) => options.contains(c),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Real(x) => write!(f, "{x}"),
            ParamValue::Cat(c) => f.write_str(c),
        }
    }
}

/// A sampled hyperparameter set; inactive conditional dimensions are absent.
pub type Config = BTreeMap<String, ParamValue>;

/// Activates a dimension only when a categorical parent takes one of `values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub name: String,
    pub dimension: Dimension,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

/// Ordered dimensions; a conditional dimension must follow its parent, which
/// rules out cycles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dims: Vec<DimensionSpec>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(self, name: &str, dimension: Dimension) -> Result<Self> {
        self.push(name, dimension, None)
    }

    pub fn add_conditional(self, name: &str, dimension: Dimension, parent: &str, values: &[&str]) -> Result<Self> {
        let cond = Condition {
            parent: parent.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
        };
        self.push(name, dimension, Some(cond))
    }

    fn push(mut self, name: &str, dimension: Dimension, condition: Option<Condition>) -> Result<Self> {
        dimension.check(name)?;
        if self.get(name).is_some() {
            return Err(Error::config(format!("dimension `{name}` defined twice")));
        }
        if let Some(c) = &condition {
            match self.get(&c.parent).map(|d| &d.dimension) {
                Some(Dimension::Categorical { options }) => {
                    if let Some(v) = c.values.iter().find(|v| !options.contains(v)) {
                        return Err(Error::config(format!("`{name}` is gated on unknown value `{v}` of `{}`", c.parent)));
                    }
                }
                Some(_) => return Err(Error::config(format!("parent `{}` of `{name}` is not categorical", c.parent))),
                None => return Err(Error::config(format!("parent `{}` of `{name}` must be defined first", c.parent))),
            }
        }
        self.dims.push(DimensionSpec {
            name: name.to_string(),
            dimension,
            condition,
        });
        Ok(self)
    }

    pub fn dims(&self) -> &[DimensionSpec] {
        &self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&DimensionSpec> {
        self.dims.iter().find(|d| d.name == name)
    }

    /// Whether `spec` is active given the values chosen so far.
    pub(crate) fn is_active(spec: &DimensionSpec, partial: &Config) -> bool {
        match &spec.condition {
            None => true,
            Some(c) => matches!(partial.get(&c.parent), Some(ParamValue::Cat(v)) if c.values.contains(v)),
        }
    }

    pub fn sample_prior(&self, rng: &mut impl Rng) -> Result<Config> {
        if self.is_empty() {
            return Err(Error::config("search space has no dimensions"));
        }
        let mut cfg = Config::new();
        for spec in &self.dims {
            // drawn even when inactive so the stream does not depend on branches
            let v = spec.dimension.sample_prior(rng);
            if Self::is_active(spec, &cfg) {
                cfg.insert(spec.name.clone(), v);
            }
        }
        Ok(cfg)
    }

    /// Checks bounds of every present value and that exactly the active
    /// dimensions are present.
    pub fn validate_config(&self, cfg: &Config) -> Result<()> {
        for spec in &self.dims {
            match (Self::is_active(spec, cfg), cfg.get(&spec.name)) {
                (true, Some(v)) if spec.dimension.contains(v) => {}
                (true, Some(v)) => return Err(Error::config(format!("`{}` = {v} is out of range", spec.name))),
                (true, None) => return Err(Error::config(format!("missing value for `{}`", spec.name))),
                (false, Some(_)) => return Err(Error::config(format!("`{}` is inactive but set", spec.name))),
                (false, None) => {}
            }
        }
        if let Some(k) = cfg.keys().find(|k| self.get(k).is_none()) {
            return Err(Error::config(format!("unknown hyperparameter `{k}`")));
        }
        Ok(())
    }
}

pub fn get_int(cfg: &Config, name: &str) -> Result<i64> {
    match cfg.get(name) {
        Some(ParamValue::Int(i)) => Ok(*i),
        _ => Err(Error::config(format!("expected integer hyperparameter `{name}`"))),
    }
}

pub fn get_real(cfg: &Config, name: &str) -> Result<f64> {
    match cfg.get(name) {
        Some(ParamValue::Real(x)) => Ok(*x),
        Some(ParamValue::Int(i)) => Ok(*i as f64),
        Some(ParamValue::Cat(c)) => c
            .parse()
            .map_err(|_| Error::config(format!("hyperparameter `{name}` = `{c}` is not numeric"))),
        None => Err(Error::config(format!("missing hyperparameter `{name}`"))),
    }
}

pub fn get_cat<'a>(cfg: &'a Config, name: &str) -> Result<&'a str> {
    match cfg.get(name) {
        Some(ParamValue::Cat(c)) => Ok(c),
        _ => Err(Error::config(format!("expected categorical hyperparameter `{name}`"))),
    }
}
