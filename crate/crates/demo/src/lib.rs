//! Browser demo. Every export returns a JSON string the page renders.

use fot_core::backend::{LatencyModel, MockBackend};
use fot_core::cache::CacheFacade;
use fot_core::graph::{regions, ExecutionGraph, GraphBuilder, OpId};
use fot_core::ops::{OpRegistry, PromptLibrary};
use fot_core::optimizer::{run_study, EvalResult, Objective, Param, Sampler, Space, StudyConfig};
use fot_core::runtime::{run, RunConfig, Runtime};
use fot_core::schemes::go24;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Random DAG whose edges only run from lower to higher index, laid out by depth.
fn random_dag(seed: u32, n: u32, p: f64) -> (ExecutionGraph, Vec<OpId>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let mut b = GraphBuilder::new();
    let n = n.clamp(1, 30) as usize;
    let ids: Vec<OpId> = (0..n).map(|_| b.op("identity", json!({}), &["in"], &["out"])).collect();
    let mut depth = vec![0usize; n];
    for j in 0..n {
        for i in 0..j {
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                b.connect(&ids[i], "out", &ids[j], "in");
                depth[j] = depth[j].max(depth[i] + 1);
            }
        }
    }
    (b.build(), ids, depth)
}

/// Nodes with layout hints, edges, and the three regions of every node.
#[wasm_bindgen]
pub fn dag_regions(seed: u32, n: u32, p: f64) -> String {
    let (g, ids, depth) = random_dag(seed, n, p);
    let mut slot = vec![0usize; ids.len()];
    let mut per_layer = std::collections::BTreeMap::<usize, usize>::new();
    for (i, d) in depth.iter().enumerate() {
        let c = per_layer.entry(*d).or_default();
        slot[i] = *c;
        *c += 1;
    }
    let nodes: Vec<Value> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let r = regions(&g, id).expect("node is live");
            json!({
                "id": id,
                "label": i,
                "layer": depth[i],
                "slot": slot[i],
                "ancestors": r.ancestors,
                "descendants": r.descendants,
                "exclusive": r.exclusive_descendants,
            })
        })
        .collect();
    let edges: Vec<Value> = g.conns.values().map(|c| json!([c.source.op, c.target.op])).collect();
    json!({ "nodes": nodes, "edges": edges, "layers": per_layer.len() }).to_string()
}

/// One tree-of-thoughts run with the oracle mock on a simulated clock.
#[wasm_bindgen]
pub fn go24_run(a: i32, b: i32, c: i32, d: i32, concurrency: u32, latency_ms: u32) -> String {
    let numbers: Vec<i64> = [a, b, c, d].iter().map(|x| i64::from(*x)).collect();
    let g0 = match go24::build_tot_go24(&numbers, &go24::Go24Hp::default()) {
        Ok(g) => g,
        Err(e) => return json!({ "error": e.to_string() }).to_string(),
    };
    let backend = MockBackend::new("oracle", go24::Go24Oracle).with_latency(LatencyModel::Fixed { ms: u64::from(latency_ms) });
    let (registry, cache, prompts) = (OpRegistry::standard(), CacheFacade::process(), PromptLibrary::default());
    let rt = Runtime { registry: &registry, backend: &backend, cache: &cache, prompts: &prompts };
    let cfg = RunConfig::default().with_concurrency(concurrency.max(1) as usize);
    let out = match run(g0, &cfg, rt) {
        Ok(o) => o,
        Err(e) => return json!({ "error": e.to_string() }).to_string(),
    };
    let timeline: Vec<Value> = out
        .metrics
        .per_op
        .iter()
        .map(|(id, m)| json!({ "id": id, "kind": out.graph.ops[id].kind, "start": m.start_ms, "finish": m.finish_ms, "cached": m.cache_hit }))
        .collect();
    json!({
        "numbers": numbers,
        "solvable": go24::solvable_ints(&numbers),
        "answer": go24::final_answer(&out.graph),
        "ops": out.graph.live_count(),
        "backend_calls": out.metrics.backend_calls,
        "cache_hits": out.metrics.cache.hits,
        "wall_ms": out.metrics.wall_ms,
        "critical_path_ms": out.metrics.critical_path_ms,
        "sequential_ms": out.metrics.sum_durations_ms(),
        "cost_usd": out.metrics.total_cost_usd,
        "timeline": timeline,
    })
    .to_string()
}

/// Minimizes (x - 3)^2 over [-10, 10]; returns every sampled x and the running best.
#[wasm_bindgen]
pub fn tpe_trace(seed: u32, n_trials: u32, use_tpe: bool) -> String {
    let space = Space::new(vec![Param::float("x", -10.0, 10.0)]).expect("valid space");
    let sampler = if use_tpe { Sampler::default() } else { Sampler::Random };
    let cfg = StudyConfig::new(n_trials.clamp(1, 500) as usize, sampler, u64::from(seed));
    let report = run_study(&space, &Objective::minimize(), &cfg, |a, _| {
        let x = a["x"].as_f64().ok_or("x missing")?;
        Ok(EvalResult { score: (x - 3.0).powi(2), ..Default::default() })
    });
    let xs: Vec<f64> = report.trials.iter().map(|t| t.assignment["x"].as_f64().unwrap_or(f64::NAN)).collect();
    let best: Vec<f64> = (1..=report.trials.len()).map(|n| report.best_after(n).unwrap_or(f64::NAN)).collect();
    json!({ "xs": xs, "best": best, "best_x": report.best_trial().map(|t| t.assignment["x"].clone()) }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn dag_regions_cover_every_node() {
        let v = parse(dag_regions(7, 10, 0.3));
        let nodes = v["nodes"].as_array().unwrap();
        assert_eq!(nodes.len(), 10);
        for n in nodes {
            let excl = n["exclusive"].as_array().unwrap();
            let desc = n["descendants"].as_array().unwrap();
            assert!(excl.iter().all(|e| desc.contains(e)));
        }
        assert_eq!(dag_regions(7, 10, 0.3), dag_regions(7, 10, 0.3));
    }

    #[test]
    fn go24_run_solves_and_reports_timeline() {
        let v = parse(go24_run(4, 9, 10, 13, 64, 100));
        assert_eq!(v["solvable"], true);
        assert!(v["answer"].is_string(), "{v}");
        assert_eq!(v["timeline"].as_array().unwrap().len(), v["ops"].as_u64().unwrap() as usize);
        assert!(v["wall_ms"].as_u64().unwrap() < v["sequential_ms"].as_u64().unwrap());
        let bad = parse(go24_run(1, 1, 1, 1, 8, 100));
        assert_eq!(bad["solvable"], false);
        assert!(bad["answer"].is_null());
    }

    #[test]
    fn tpe_trace_is_monotone() {
        let v = parse(tpe_trace(1, 60, true));
        let best: Vec<f64> = v["best"].as_array().unwrap().iter().map(|b| b.as_f64().unwrap()).collect();
        assert_eq!(best.len(), 60);
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(best[59] < 0.5);
    }
}
