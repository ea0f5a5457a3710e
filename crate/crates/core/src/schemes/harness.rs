//! Runs a scheme over a dataset and aggregates scores, cost and cache use.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::Instance;
use super::registry::SchemeId;
use super::SchemeError;
use crate::cache::CacheStats;
use crate::optimizer::EvalResult;
use crate::runtime::{run, RunConfig, RunError, RunOutcome, Runtime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub outcome: Value,
    pub score: f64,
    pub cost_usd: f64,
    pub nominal_cost_usd: f64,
    pub backend_calls: u64,
    pub wall_ms: u64,
    pub critical_path_ms: u64,
    pub ops: usize,
    pub cache: CacheStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetRun {
    pub results: Vec<InstanceResult>,
    pub mean_score: f64,
    pub total_cost_usd: f64,
    pub nominal_cost_usd: f64,
    pub backend_calls: u64,
    pub wall_ms: u64,
    pub critical_path_ms: u64,
    pub cache: CacheStats,
}

impl DatasetRun {
    pub fn eval_result(&self) -> EvalResult {
        EvalResult {
            score: self.mean_score,
            cost_usd: self.total_cost_usd,
            nominal_cost_usd: self.nominal_cost_usd,
            runtime_ms: self.wall_ms as f64,
            backend_calls: self.backend_calls,
            cache: self.cache,
        }
    }
}

/// Instances run one after another. A failed run is recorded with its error
/// and the score of an empty outcome; hyperparameter or instance errors abort.
pub fn run_dataset(rt: Runtime<'_>, scheme: SchemeId, dataset: &[Instance], hp: &Value, cfg: &RunConfig) -> Result<DatasetRun, SchemeError> {
    run_dataset_with(rt, scheme, dataset, hp, cfg, &mut |_, _| {})
}

/// As [`run_dataset`], handing every raw run result to `on_run` before it is scored.
pub fn run_dataset_with(
    rt: Runtime<'_>,
    scheme: SchemeId,
    dataset: &[Instance],
    hp: &Value,
    cfg: &RunConfig,
    on_run: &mut dyn FnMut(&Instance, &Result<RunOutcome, RunError>),
) -> Result<DatasetRun, SchemeError> {
    let mut out = DatasetRun::default();
    for inst in dataset {
        let g0 = scheme.build(&inst.input, hp)?;
        let result = run(g0, cfg, rt);
        on_run(inst, &result);
        let r = match result {
            Ok(o) => {
                let outcome = scheme.outcome(&o.graph);
                let m = &o.metrics;
                InstanceResult {
                    id: inst.id.clone(),
                    score: scheme.score(&inst.input, &outcome, inst.ground_truth.as_ref()),
                    outcome,
                    cost_usd: m.total_cost_usd,
                    nominal_cost_usd: m.total_cost_usd + m.cache.cost_saved_usd,
                    backend_calls: m.backend_calls,
                    wall_ms: m.wall_ms,
                    critical_path_ms: m.critical_path_ms,
                    ops: o.graph.live_count(),
                    cache: m.cache,
                    error: None,
                }
            }
            Err(e) => {
                let outcome = scheme.outcome(&crate::graph::ExecutionGraph::default());
                InstanceResult {
                    id: inst.id.clone(),
                    score: scheme.score(&inst.input, &outcome, inst.ground_truth.as_ref()),
                    outcome,
                    cost_usd: 0.0,
                    nominal_cost_usd: 0.0,
                    backend_calls: 0,
                    wall_ms: 0,
                    critical_path_ms: 0,
                    ops: 0,
                    cache: CacheStats::default(),
                    error: Some(e.to_string()),
                }
            }
        };
        out.total_cost_usd += r.cost_usd;
        out.nominal_cost_usd += r.nominal_cost_usd;
        out.backend_calls += r.backend_calls;
        out.wall_ms += r.wall_ms;
        out.critical_path_ms += r.critical_path_ms;
        out.cache.merge(&r.cache);
        out.results.push(r);
    }
    if !out.results.is_empty() {
        out.mean_score = out.results.iter().map(|r| r.score).sum::<f64>() / out.results.len() as f64;
    }
    Ok(out)
}
