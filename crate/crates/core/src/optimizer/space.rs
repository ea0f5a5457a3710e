//! Conditional mixed search spaces.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Categorical {
        choices: Vec<Value>,
    },
    Int {
        lo: i64,
        hi: i64,
        /// Caps `hi` at the value of an earlier integer parameter.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi_from: Option<String>,
    },
    Float {
        lo: f64,
        hi: f64,
    },
}

/// Active only when an earlier parameter takes one of `values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub param: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
    #[serde(default)]
    pub log_scale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

impl Param {
    pub fn categorical(name: &str, choices: Vec<Value>) -> Self {
        Param { name: name.into(), domain: Domain::Categorical { choices }, log_scale: false, condition: None }
    }

    pub fn int(name: &str, lo: i64, hi: i64) -> Self {
        Param { name: name.into(), domain: Domain::Int { lo, hi, hi_from: None }, log_scale: false, condition: None }
    }

    pub fn float(name: &str, lo: f64, hi: f64) -> Self {
        Param { name: name.into(), domain: Domain::Float { lo, hi }, log_scale: false, condition: None }
    }

    pub fn log(mut self) -> Self {
        self.log_scale = true;
        self
    }

    pub fn when(mut self, param: &str, values: Vec<Value>) -> Self {
        self.condition = Some(Condition { param: param.into(), values });
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("parameter `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("parameter `{0}` is declared twice")]
    Duplicate(String),
    #[error("parameter `{param}` refers to `{other}`, which is not an earlier parameter")]
    ForwardReference { param: String, other: String },
    #[error("log-scaled parameter `{0}` needs a positive lower bound")]
    LogDomain(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Space {
    pub params: Vec<Param>,
}

impl Space {
    pub fn new(params: Vec<Param>) -> Result<Self, SpaceError> {
        let s = Space { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        let mut seen: Vec<&str> = Vec::new();
        for p in &self.params {
            if seen.contains(&p.name.as_str()) {
                return Err(SpaceError::Duplicate(p.name.clone()));
            }
            let refs = p.condition.iter().map(|c| &c.param).chain(match &p.domain {
                Domain::Int { hi_from: Some(h), .. } => Some(h),
                _ => None,
            });
            for r in refs {
                if !seen.contains(&r.as_str()) {
                    return Err(SpaceError::ForwardReference { param: p.name.clone(), other: r.clone() });
                }
            }
            let empty = match &p.domain {
                Domain::Categorical { choices } => choices.is_empty(),
                Domain::Int { lo, hi, .. } => lo > hi,
                Domain::Float { lo, hi } => !lo.is_finite() || !hi.is_finite() || lo > hi,
            };
            if empty {
                return Err(SpaceError::EmptyDomain(p.name.clone()));
            }
            let lo_positive = match &p.domain {
                Domain::Int { lo, .. } => *lo > 0,
                Domain::Float { lo, .. } => *lo > 0.0,
                Domain::Categorical { .. } => true,
            };
            if p.log_scale && !lo_positive {
                return Err(SpaceError::LogDomain(p.name.clone()));
            }
            seen.push(&p.name);
        }
        Ok(())
    }

    pub fn is_active(p: &Param, partial: &Assignment) -> bool {
        match &p.condition {
            None => true,
            Some(c) => partial.get(&c.param).is_some_and(|v| c.values.contains(v)),
        }
    }

    /// Numeric bounds of `p` given earlier values, in the param's own units.
    pub fn bounds(p: &Param, partial: &Assignment) -> Option<(f64, f64)> {
        match &p.domain {
            Domain::Int { lo, hi, hi_from } => {
                let cap = hi_from.as_ref().and_then(|h| partial.get(h)).and_then(Value::as_i64).unwrap_or(*hi);
                let hi = (*hi).min(cap).max(*lo);
                Some((*lo as f64, hi as f64))
            }
            Domain::Float { lo, hi } => Some((*lo, *hi)),
            Domain::Categorical { .. } => None,
        }
    }

    /// Whether `a` holds exactly the active parameters, each inside its domain.
    pub fn contains(&self, a: &Assignment) -> bool {
        let mut partial = Assignment::new();
        for p in &self.params {
            let active = Self::is_active(p, &partial);
            match (active, a.get(&p.name)) {
                (false, None) => continue,
                (false, Some(_)) | (true, None) => return false,
                (true, Some(v)) => {
                    let ok = match &p.domain {
                        Domain::Categorical { choices } => choices.contains(v),
                        Domain::Int { .. } => {
                            let (lo, hi) = Self::bounds(p, &partial).expect("numeric");
                            v.as_i64().is_some_and(|x| (lo..=hi).contains(&(x as f64)))
                        }
                        Domain::Float { lo, hi } => v.as_f64().is_some_and(|x| (*lo..=*hi).contains(&x)),
                    };
                    if !ok {
                        return false;
                    }
                    partial.insert(p.name.clone(), v.clone());
                }
            }
        }
        a.len() == partial.len()
    }
}

/// Maps a numeric value into the sampler's working axis.
pub(crate) fn to_axis(p: &Param, x: f64) -> f64 {
    if p.log_scale {
        x.ln()
    } else {
        x
    }
}

pub(crate) fn from_axis(p: &Param, y: f64) -> f64 {
    if p.log_scale {
        y.exp()
    } else {
        y
    }
}

/// Converts an axis value into a domain value, rounding integers.
pub(crate) fn to_value(p: &Param, y: f64, lo: f64, hi: f64) -> Value {
    let x = from_axis(p, y).clamp(lo, hi);
    match p.domain {
        Domain::Int { .. } => Value::from(x.round() as i64),
        _ => Value::from(x),
    }
}

pub(crate) fn sample_param<R: Rng>(p: &Param, partial: &Assignment, rng: &mut R) -> Value {
    match &p.domain {
        Domain::Categorical { choices } => choices[rng.random_range(0..choices.len())].clone(),
        Domain::Int { .. } => {
            let (lo, hi) = Space::bounds(p, partial).expect("numeric");
            if p.log_scale {
                let y = rng.random_range(to_axis(p, lo - 0.5 + 1e-9)..=to_axis(p, hi + 0.5 - 1e-9));
                to_value(p, y, lo, hi)
            } else {
                Value::from(rng.random_range(lo as i64..=hi as i64))
            }
        }
        Domain::Float { lo, hi } => {
            let y = rng.random_range(to_axis(p, *lo)..=to_axis(p, *hi));
            to_value(p, y, *lo, *hi)
        }
    }
}

/// Uniform over the active domains; deterministic per seed.
pub fn sample_random(space: &Space, seed: u64) -> Assignment {
    sample_random_with(space, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_random_with<R: Rng>(space: &Space, rng: &mut R) -> Assignment {
    let mut a = Assignment::new();
    for p in &space.params {
        if Space::is_active(p, &a) {
            let v = sample_param(p, &a, rng);
            a.insert(p.name.clone(), v);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn conditional() -> Space {
        Space::new(vec![
            Param::categorical("method", vec![json!("a"), json!("b")]),
            Param::int("n", 2, 7).when("method", vec![json!("b")]),
            Param::int("k", 2, 7).log(),
            Param::float("t", 0.01, 2.0).log(),
            Param { name: "m".into(), domain: Domain::Int { lo: 1, hi: 10, hi_from: Some("k".into()) }, log_scale: false, condition: None },
        ])
        .unwrap()
    }

    #[test]
    fn categorical_is_uniform() {
        let s = Space::new(vec![Param::categorical("c", vec![json!("a"), json!("b")])]).unwrap();
        let n = 10_000;
        let a = (0..n).filter(|&seed| sample_random(&s, seed)["c"] == json!("a")).count();
        let f = a as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.02, "{f}");
    }

    #[test]
    fn samples_respect_domains_and_conditions() {
        let s = conditional();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a = sample_random_with(&s, &mut rng);
            assert!(s.contains(&a), "{a:?}");
            assert_eq!(a.contains_key("n"), a["method"] == json!("b"));
            assert!(a["m"].as_i64().unwrap() <= a["k"].as_i64().unwrap());
        }
    }

    #[test]
    fn invalid_spaces() {
        assert_eq!(Space::new(vec![Param::int("x", 3, 2)]), Err(SpaceError::EmptyDomain("x".into())));
        assert!(matches!(Space::new(vec![Param::int("x", 1, 2).when("y", vec![])]), Err(SpaceError::ForwardReference { .. })));
        assert_eq!(Space::new(vec![Param::float("x", 0.0, 1.0).log()]), Err(SpaceError::LogDomain("x".into())));
        assert_eq!(Space::new(vec![Param::int("x", 1, 2), Param::int("x", 1, 2)]), Err(SpaceError::Duplicate("x".into())));
    }

    #[test]
    fn space_json_round_trip() {
        let s = conditional();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Space>(&text).unwrap(), s);
    }
}
