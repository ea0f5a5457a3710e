use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::backend::{BackendError, GenRequest, LatencyModel, MockBackend, Responder};
use crate::graph::{GraphBuilder, OperationNode};
use crate::schemes::{decomp, go24, sorting};

struct Echo;
impl Responder for Echo {
    fn respond(&self, req: &GenRequest, _: u32) -> Result<String, BackendError> {
        Ok(format!("echo {}", req.user_text().len()))
    }
}

pub(crate) struct Env {
    pub registry: OpRegistry,
    pub backend: MockBackend,
    pub cache: CacheFacade,
    pub prompts: PromptLibrary,
}

impl Env {
    pub fn new(backend: MockBackend) -> Self {
        let mut prompts = PromptLibrary::default();
        prompts.insert("echo", crate::ops::Template::parse("USER:\n{x}\n").unwrap());
        Env { registry: OpRegistry::standard(), backend, cache: CacheFacade::none(), prompts }
    }

    pub fn with_cache(mut self, cache: CacheFacade) -> Self {
        self.cache = cache;
        self
    }

    pub fn rt(&self) -> Runtime<'_> {
        Runtime { registry: &self.registry, backend: &self.backend, cache: &self.cache, prompts: &self.prompts }
    }

    pub fn run(&self, g: ExecutionGraph, cfg: &RunConfig) -> Result<RunOutcome, RunError> {
        run(g, cfg, self.rt())
    }
}

fn gen(b: &mut GraphBuilder, x: &str) -> OpId {
    b.op("generate", json!({"template": "echo", "vars": {"x": x}}), &["in"], &["out"])
}

fn chain(n: usize) -> ExecutionGraph {
    let mut b = GraphBuilder::new();
    let ids: Vec<OpId> = (0..n).map(|i| gen(&mut b, &format!("c{i}"))).collect();
    for w in ids.windows(2) {
        b.connect(&w[0], "out", &w[1], "in");
    }
    b.build()
}

fn fan(n: usize) -> ExecutionGraph {
    let mut b = GraphBuilder::new();
    for i in 0..n {
        gen(&mut b, &format!("f{i}"));
    }
    b.build()
}

fn cfg(conc: usize) -> RunConfig {
    RunConfig { max_concurrency: conc, check_invariants: true, ..Default::default() }
}

#[test]
fn ready_sets() {
    let g = fan(2);
    assert_eq!(compute_ready(&g).len(), 2);
    let mut g = chain(2);
    let ids: Vec<OpId> = g.ops.keys().cloned().collect();
    assert_eq!(compute_ready(&g), BTreeSet::from([ids[0].clone()]));
    g.set_status(&ids[0], OpStatus::Ready).unwrap();
    g.set_status(&ids[0], OpStatus::Running).unwrap();
    let t = Thought { id: Thought::id_for(&ids[0], "out"), payload: json!(1), meta: Default::default() };
    g.record_outputs(&ids[0], BTreeMap::from([("out".to_string(), t)])).unwrap();
    assert_eq!(compute_ready(&g), BTreeSet::from([ids[1].clone()]));
}

#[test]
fn required_subset_readiness() {
    let mut b = GraphBuilder::new();
    let a = b.op("identity", json!({}), &[], &["out"]);
    let c = b.op("identity", json!({}), &[], &["out"]);
    let j = b.node(|id| OperationNode::new(id, "identity", json!({}), &["first", "second"], &["out"]).with_required_inputs(&["first"]));
    b.connect(&a, "out", &j, "first");
    b.connect(&c, "out", &j, "second");
    let mut g = b.build();
    g.set_status(&a, OpStatus::Ready).unwrap();
    g.set_status(&a, OpStatus::Running).unwrap();
    let t = Thought { id: Thought::id_for(&a, "out"), payload: json!(1), meta: Default::default() };
    g.record_outputs(&a, BTreeMap::from([("out".to_string(), t)])).unwrap();
    assert!(compute_ready(&g).contains(&j));
}

fn durations(pairs: &[(&str, u64)]) -> BTreeMap<OpId, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn critical_path_examples() {
    let mut b = GraphBuilder::new();
    let x = b.op("identity", json!({}), &[], &["out"]);
    assert_eq!(critical_path(&b.build(), &durations(&[(&x, 250)])), 250);
    let mut b = GraphBuilder::new();
    let ids: Vec<OpId> = (0..4).map(|_| b.op("identity", json!({}), &["in"], &["out"])).collect();
    b.connect(&ids[0], "out", &ids[1], "in");
    b.connect(&ids[0], "out", &ids[2], "in");
    b.connect(&ids[1], "out", &ids[3], "in");
    b.connect(&ids[2], "out", &ids[3], "in");
    let d = durations(&[(&ids[0], 1), (&ids[1], 5), (&ids[2], 2), (&ids[3], 1)]);
    assert_eq!(critical_path(&b.build(), &d), 7);
}

/// Brute force: the heaviest of all enumerated source-to-anything paths.
pub(crate) fn path_oracle(g: &ExecutionGraph, d: &BTreeMap<OpId, u64>) -> u64 {
    fn walk(g: &ExecutionGraph, d: &BTreeMap<OpId, u64>, n: &str, acc: u64, best: &mut u64) {
        let acc = acc + d.get(n).copied().unwrap_or(0);
        *best = (*best).max(acc);
        let next: BTreeSet<&str> = g.outgoing(n).iter().map(|c| c.target.op.as_str()).collect();
        for m in next {
            walk(g, d, m, acc, best);
        }
    }
    let mut best = 0;
    for o in g.live_ops() {
        walk(g, d, &o.id, 0, &mut best);
    }
    best
}

proptest! {
    #[test]
    fn critical_path_matches_path_oracle(n in 1usize..10, edges in proptest::collection::vec(any::<bool>(), 45), durs in proptest::collection::vec(0u64..100, 10)) {
        let mut b = GraphBuilder::new();
        let ids: Vec<OpId> = (0..n).map(|_| b.op("identity", json!({}), &["in"], &["out"])).collect();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if edges[k % edges.len()] {
                    b.connect(&ids[i], "out", &ids[j], "in");
                }
                k += 1;
            }
        }
        let g = b.build();
        let d: BTreeMap<OpId, u64> = ids.iter().cloned().zip(durs).collect();
        prop_assert_eq!(critical_path(&g, &d), path_oracle(&g, &d));
    }
}

#[test]
fn chain_runs_sequentially() {
    let env = Env::new(MockBackend::new("m", Echo));
    let out = env.run(chain(3), &cfg(4)).unwrap();
    assert_eq!(out.metrics.wall_ms, 300);
    assert_eq!(out.metrics.critical_path_ms, 300);
    assert_eq!(out.reasoning.len(), 3);
    assert!(out.graph.live_ops().all(|o| o.status == OpStatus::Done));
}

#[test]
fn independent_ops_overlap() {
    let env = Env::new(MockBackend::new("m", Echo));
    let par = env.run(fan(8), &cfg(8)).unwrap();
    assert_eq!(par.metrics.critical_path_ms, 100);
    assert_eq!(par.metrics.wall_ms, 100);
    let seq = env.run(fan(8), &cfg(1)).unwrap();
    assert_eq!(seq.metrics.wall_ms, 800);
    assert_eq!(seq.reasoning.canonical_bytes(), par.reasoning.canonical_bytes());
    assert_eq!(par.metrics.backend_calls, 8);
    assert!((par.metrics.total_cost_usd - par.metrics.per_op.values().map(|m| m.cost_usd).sum::<f64>()).abs() < 1e-12);
}

#[test]
fn wall_clock_mode_matches_virtual_results() {
    let env = Env::new(MockBackend::new("m", Echo).with_latency(LatencyModel::Fixed { ms: 20 }).with_real_sleep(true));
    let wall = RunConfig { clock: ClockMode::Wall, ..cfg(8) };
    let w = env.run(fan(8), &wall).unwrap();
    assert!(w.metrics.wall_ms < 8 * 20, "wall {}", w.metrics.wall_ms);
    let v = env.run(fan(8), &cfg(1)).unwrap();
    assert_eq!(w.reasoning.canonical_bytes(), v.reasoning.canonical_bytes());
    let c = env.run(chain(3), &wall).unwrap();
    assert_eq!(c.reasoning.len(), 3);
}

#[test]
fn empty_and_invalid_graphs_are_rejected() {
    let env = Env::new(MockBackend::new("m", Echo));
    assert!(matches!(env.run(ExecutionGraph::new(), &cfg(1)), Err(RunError::EmptyGraph)));
}

#[test]
fn deadlock_reports_stuck_ops() {
    let env = Env::new(MockBackend::new("m", Echo));
    let mut g = chain(2);
    let first = g.ops.keys().next().unwrap().clone();
    // A source that is already running never commits here.
    g.set_status(&first, OpStatus::Ready).unwrap();
    g.set_status(&first, OpStatus::Running).unwrap();
    let err = env.run(g, &cfg(1)).unwrap_err();
    assert!(matches!(&err, RunError::Deadlock { stuck } if stuck.len() == 1));
    assert_eq!(err.exit_code(), EXIT_DEADLOCK);
}

#[test]
fn failure_policies() {
    let env = Env::new(MockBackend::new("m", Echo));
    let mut b = GraphBuilder::new();
    let bad = b.op("generate", json!({"template": "missing"}), &[], &["out"]);
    let excl = b.op("identity", json!({}), &["in"], &["out"]);
    let ok = b.op("source", json!({"payload": 1}), &[], &["out"]);
    let shared = b.op("identity", json!({}), &["a", "b"], &["out"]);
    b.connect(&bad, "out", &excl, "in");
    b.connect(&excl, "out", &shared, "a");
    b.connect(&ok, "out", &shared, "b");
    let g = b.build();
    let err = env.run(g.clone(), &cfg(1)).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_OP_FAILURE);
    // `excl` is not exclusive: `shared` hangs off it but also off `ok`.
    let skip = RunConfig { failure: FailurePolicy::SkipSubtree, ..cfg(1) };
    let out = env.run(g, &skip).unwrap();
    assert_eq!(out.graph.op(&excl).unwrap().status, OpStatus::Removed);
    assert!(out.events.iter().any(|e| e.failed && e.actor == bad));
    assert_eq!(out.graph.op(&shared).unwrap().status, OpStatus::Done);
}

fn go24_env() -> Env {
    Env::new(MockBackend::new("oracle", go24::Go24Oracle))
}

#[test]
fn go24_solves_the_walkthrough_instance() {
    let env = go24_env();
    let g = go24::build_tot_go24(&[1, 2, 3, 4], &go24::Go24Hp::default()).unwrap();
    let out = env.run(g, &cfg(8)).unwrap();
    let ans = go24::final_answer(&out.graph).expect("solved");
    assert!(go24::go24_check(&[1, 2, 3, 4], &ans), "{ans}");
    // Three layer expansions and the answer op's creation.
    assert_eq!(out.events.iter().filter(|e| e.mutated()).count(), 3);
    assert!(out.events.iter().all(|e| e.exclusive_at_commit));
    // First layer: one propose, 8 x 3 value ops, one filter, plus the next expand.
    let first = out.events.iter().find(|e| e.mutated()).unwrap();
    let kinds = |k: &str| first.added_ops.iter().filter(|id| out.graph.op(id).unwrap().kind == k).count();
    assert_eq!((kinds("go24_propose"), kinds("go24_value"), kinds("filter_keep_top")), (1, 24, 1));
    assert!(out.reasoning.is_acyclic());
}

#[test]
fn go24_reports_no_solution() {
    let env = go24_env();
    let g = go24::build_tot_go24(&[1, 1, 1, 1], &go24::Go24Hp::default()).unwrap();
    let out = env.run(g, &cfg(4)).unwrap();
    assert_eq!(go24::final_answer(&out.graph), None);
    assert_eq!(go24::score(&[1, 1, 1, 1], None), 0.0);
}

#[test]
fn decomp_grows_nested_tree() {
    let inst = decomp::fixture_depth2();
    let env = Env::new(MockBackend::new("d", decomp::DecompResponder::new(&inst)));
    let mut bytes = None;
    for conc in [1, 8] {
        for s in super::Strategy::ALL {
            let out = env.run(decomp::build_dynamic_decomp(&inst).unwrap(), &cfg(conc).with_strategy(s)).unwrap();
            assert_eq!(out.graph.live_count(), 1 + inst.expected_added_ops());
            let commits: Vec<&CommitEvent> = out.events.iter().filter(|e| e.mutated()).collect();
            assert_eq!(commits.len(), 2);
            assert!(commits.iter().all(|e| e.exclusive_at_commit));
            assert_eq!(decomp::final_answer(&out.graph).as_deref(), Some("United States"));
            let b = out.reasoning.canonical_bytes();
            assert_eq!(bytes.get_or_insert_with(|| b.clone()), &b);
        }
    }
}

#[test]
fn decomp_two_and_empty_fixtures() {
    for inst in [decomp::fixture_two_subquestions(), decomp::fixture_empty()] {
        let env = Env::new(MockBackend::new("d", decomp::DecompResponder::new(&inst)));
        let out = env.run(decomp::build_dynamic_decomp(&inst).unwrap(), &cfg(2)).unwrap();
        assert_eq!(out.graph.live_count(), 1 + inst.expected_added_ops());
        assert_eq!(decomp::final_answer(&out.graph).as_deref(), inst.answers.get(&inst.question).map(String::as_str));
    }
}

#[test]
fn got_sorting_perfect_oracle() {
    let env = Env::new(MockBackend::new("s", sorting::SortOracle::perfect()));
    let list = sorting::random_instance(5, sorting::LIST_LEN);
    let out = env.run(sorting::build_got_sorting(&list, &sorting::GotSortHp::default()).unwrap(), &cfg(8)).unwrap();
    let fin = sorting::final_list(&out.graph).unwrap();
    assert_eq!(sorting::count_mistakes(&list, &fin), 0);
}

#[test]
fn interleaved_commits_keep_invariants() {
    let inst = decomp::fixture_depth2();
    let env = Env::new(MockBackend::new("d", decomp::DecompResponder::new(&inst)));
    let base = env.run(decomp::build_dynamic_decomp(&inst).unwrap(), &cfg(1)).unwrap();
    for seed in 0..20 {
        let c = RunConfig { interleave_seed: Some(seed), ..cfg(8) };
        let out = env.run(decomp::build_dynamic_decomp(&inst).unwrap(), &c).unwrap();
        assert_eq!(out.reasoning.canonical_bytes(), base.reasoning.canonical_bytes());
    }
}

#[test]
fn process_cache_is_transparent() {
    let g = go24::build_tot_go24(&[4, 4, 6, 8], &go24::Go24Hp::default()).unwrap();
    let off = go24_env();
    let on = go24_env().with_cache(CacheFacade::process());
    let a = off.run(g.clone(), &cfg(8)).unwrap();
    let b = on.run(g, &cfg(8)).unwrap();
    assert_eq!(a.reasoning.canonical_bytes(), b.reasoning.canonical_bytes());
    assert!(b.metrics.backend_calls < a.metrics.backend_calls);
    assert_eq!(b.metrics.backend_calls + b.metrics.cache.hits, a.metrics.backend_calls);
    assert_eq!(on.backend.calls(), b.metrics.backend_calls);
}
