//! Schemes by name: graph builders, hyperparameter spaces, scorers and mock oracles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::dataset::Instance;
use super::{decomp, go24, sorting, SchemeError};
use crate::backend::Responder;
use crate::graph::ExecutionGraph;
use crate::optimizer::space::Domain;
use crate::optimizer::{Assignment, Direction, Param, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "tot-go24")]
    TotGo24,
    #[serde(rename = "got-sorting")]
    GotSorting,
    #[serde(rename = "tot-sorting")]
    TotSorting,
    #[serde(rename = "decomp")]
    Decomp,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::TotGo24, SchemeId::GotSorting, SchemeId::TotSorting, SchemeId::Decomp];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::TotGo24 => "tot-go24",
            SchemeId::GotSorting => "got-sorting",
            SchemeId::TotSorting => "tot-sorting",
            SchemeId::Decomp => "decomp",
        }
    }

    pub fn default_hp(self) -> Value {
        match self {
            SchemeId::TotGo24 => json!(go24::Go24Hp::default()),
            SchemeId::GotSorting => json!(sorting::GotSortHp::default()),
            SchemeId::TotSorting => json!(sorting::TotSortHp::default()),
            SchemeId::Decomp => json!({}),
        }
    }

    /// Search space over the scheme's hyperparameters. Array entries are addressed as `name.index`.
    pub fn space(self) -> Space {
        let params = match self {
            SchemeId::TotGo24 => {
                let mut p = vec![Param::int("num_examples", 4, 12)];
                p.extend((0..3).map(|i| Param::int(&format!("samples.{i}"), 1, 5)));
                p.extend((0..2).map(|i| Param { name: format!("keep_top.{i}"), domain: Domain::Int { lo: 2, hi: 7, hi_from: Some("num_examples".into()) }, log_scale: false, condition: None }));
                p
            }
            SchemeId::GotSorting => vec![Param::int("sort_branches", 1, 10), Param::int("merge_branches", 5, 25), Param::int("improve_rounds", 1, 3)],
            SchemeId::TotSorting => vec![Param::int("num_branches", 5, 20), Param::int("improvement_levels", 1, 6)],
            SchemeId::Decomp => vec![],
        };
        Space::new(params).expect("built-in spaces are valid")
    }

    /// Solve rate and exact match are maximized; sorting mistakes are minimized.
    pub fn direction(self) -> Direction {
        match self {
            SchemeId::GotSorting | SchemeId::TotSorting => Direction::Minimize,
            SchemeId::TotGo24 | SchemeId::Decomp => Direction::Maximize,
        }
    }

    pub fn build(self, input: &Value, hp: &Value) -> Result<ExecutionGraph, SchemeError> {
        let bad_hp = |e: serde_json::Error| SchemeError::InvalidHyperparams(e.to_string());
        let bad_input = |e: serde_json::Error| SchemeError::InvalidInstance(e.to_string());
        match self {
            SchemeId::TotGo24 => {
                let nums: Vec<i64> = serde_json::from_value(input.clone()).map_err(bad_input)?;
                go24::build_tot_go24(&nums, &serde_json::from_value(hp.clone()).map_err(bad_hp)?)
            }
            SchemeId::GotSorting => {
                let list: Vec<i64> = serde_json::from_value(input.clone()).map_err(bad_input)?;
                sorting::build_got_sorting(&list, &serde_json::from_value(hp.clone()).map_err(bad_hp)?)
            }
            SchemeId::TotSorting => {
                let list: Vec<i64> = serde_json::from_value(input.clone()).map_err(bad_input)?;
                sorting::build_tot_sorting(&list, &serde_json::from_value(hp.clone()).map_err(bad_hp)?)
            }
            SchemeId::Decomp => {
                let inst: decomp::DecompInstance = serde_json::from_value(input.clone()).map_err(bad_input)?;
                decomp::build_dynamic_decomp(&inst)
            }
        }
    }

    /// The scheme's answer as JSON: `{answer}` or `{list}`.
    pub fn outcome(self, g: &ExecutionGraph) -> Value {
        match self {
            SchemeId::TotGo24 => json!({"answer": go24::final_answer(g)}),
            SchemeId::GotSorting | SchemeId::TotSorting => json!({"list": sorting::final_list(g)}),
            SchemeId::Decomp => json!({"answer": decomp::final_answer(g)}),
        }
    }

    /// Go24: 1 for a checked solution. Sorting: mistake count. Decomp: exact match, ignoring case.
    pub fn score(self, input: &Value, outcome: &Value, ground_truth: Option<&Value>) -> f64 {
        match self {
            SchemeId::TotGo24 => {
                let nums: Vec<i64> = serde_json::from_value(input.clone()).unwrap_or_default();
                go24::score(&nums, outcome.get("answer").and_then(Value::as_str))
            }
            SchemeId::GotSorting | SchemeId::TotSorting => {
                let mut reference: Vec<i64> = serde_json::from_value(input.clone()).unwrap_or_default();
                reference.sort_unstable();
                let list: Vec<i64> = outcome.get("list").cloned().and_then(|v| serde_json::from_value(v).ok()).unwrap_or_default();
                sorting::count_mistakes(&reference, &list) as f64
            }
            SchemeId::Decomp => {
                let got = outcome.get("answer").and_then(Value::as_str).map(|s| s.trim().to_lowercase());
                let want = ground_truth.and_then(Value::as_str).map(|s| s.trim().to_lowercase());
                f64::from(u8::from(got.is_some() && got == want))
            }
        }
    }

    /// Deterministic responder that plays the model for this scheme.
    /// `noise` is (drop probability, seed) for the sorting oracle.
    pub fn oracle(self, dataset: &[Instance], noise: Option<(f64, u64)>) -> Box<dyn Responder> {
        match self {
            SchemeId::TotGo24 => Box::new(go24::Go24Oracle),
            SchemeId::GotSorting | SchemeId::TotSorting => {
                Box::new(noise.map_or(sorting::SortOracle::perfect(), |(p, s)| sorting::SortOracle::noisy(p, s)))
            }
            SchemeId::Decomp => {
                let insts: Vec<decomp::DecompInstance> = dataset.iter().filter_map(|i| serde_json::from_value(i.input.clone()).ok()).collect();
                Box::new(decomp::DecompResponder::merged(insts.iter()))
            }
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| SchemeError::UnknownScheme(s.to_string()))
    }
}

/// Writes each assignment entry into `hp`; `a.1` addresses index 1 of array `a`.
pub fn apply_assignment(hp: &mut Value, a: &Assignment) -> Result<(), SchemeError> {
    for (name, v) in a {
        let mut cur = &mut *hp;
        let parts: Vec<&str> = name.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            let missing = || SchemeError::InvalidHyperparams(format!("no hyperparameter `{name}`"));
            cur = match cur {
                Value::Object(m) => {
                    if last {
                        m.insert(part.to_string(), v.clone());
                        break;
                    }
                    m.get_mut(*part).ok_or_else(missing)?
                }
                Value::Array(xs) => {
                    let idx: usize = part.parse().map_err(|_| missing())?;
                    let slot = xs.get_mut(idx).ok_or_else(missing)?;
                    if last {
                        *slot = v.clone();
                        break;
                    }
                    slot
                }
                _ => return Err(missing()),
            };
        }
    }
    Ok(())
}
