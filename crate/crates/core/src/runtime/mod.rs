//! Scheduler and controller.
//!
//! The scheduler keeps a frontier of ready ops ordered by the strategy. The
//! controller executes up to `max_concurrency` of them against the graph
//! snapshot current at dispatch, and commits completions one at a time:
//! validate and apply the op's mutation, then record its outputs. Readiness
//! is recomputed after every commit.
//!
//! Two clocks: in virtual mode op bodies run inline and backend latency
//! advances simulated time, so runs are exact and fast; completions commit in
//! `(finish time, op id)` order. Wall mode runs bodies on scoped threads.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::ThoughtGenerator;
use crate::cache::CacheFacade;
use crate::graph::{
    apply_mutation, derive_reasoning_graph, exclusive_descendants, ExecutionGraph, GraphError, MutationBatch, OpId, OpStatus,
    ReasoningGraph, Thought, ThoughtMeta, Violation,
};
use crate::ops::{execute_op, OpClock, OpContext, OpError, OpRegistry, OpResult, PromptLibrary};

pub use metrics::{critical_path, OpMetrics, RunMetrics};

pub const EXIT_OP_FAILURE: i32 = 2;
pub const EXIT_DEADLOCK: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Order in which ops became ready.
    #[default]
    Fifo,
    /// Ascending depth from the roots, ties by id.
    BreadthFirst,
    /// Descending depth, ties by id.
    DepthFirst,
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fifo" => Ok(Strategy::Fifo),
            "bfs" | "breadth_first" => Ok(Strategy::BreadthFirst),
            "dfs" | "depth_first" => Ok(Strategy::DepthFirst),
            other => Err(format!("unknown strategy `{other}` (fifo, bfs, dfs)")),
        }
    }
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Fifo, Strategy::BreadthFirst, Strategy::DepthFirst];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    FailFast,
    /// Remove the failed op's planned exclusive descendants; other successors
    /// receive `{"_failed": true}` on the failed op's ports.
    SkipSubtree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub max_concurrency: usize,
    pub seed: u64,
    pub clock: ClockMode,
    pub failure: FailurePolicy,
    /// On a rejected mutation, drop the violating edits instead of failing the op.
    pub partial_commit: bool,
    /// Assert graph invariants after every commit.
    pub check_invariants: bool,
    /// Virtual mode only: commit a random running op instead of the earliest.
    pub interleave_seed: Option<u64>,
    pub budget_usd: Option<f64>,
    pub hyperparams: Value,
    /// Guard against runaway growth.
    pub max_ops: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::Fifo,
            max_concurrency: 1,
            seed: 0,
            clock: ClockMode::Virtual,
            failure: FailurePolicy::FailFast,
            partial_commit: false,
            check_invariants: false,
            interleave_seed: None,
            budget_usd: None,
            hyperparams: json!({}),
            max_ops: 100_000,
        }
    }
}

impl RunConfig {
    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.max_concurrency = n;
        self
    }

    pub fn with_strategy(mut self, s: Strategy) -> Self {
        self.strategy = s;
        self
    }
}

/// One commit as seen by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitEvent {
    pub step: u64,
    pub actor: OpId,
    pub added_ops: Vec<OpId>,
    pub removed_ops: Vec<OpId>,
    /// Every added op was an exclusive descendant of the actor right after applying.
    pub exclusive_at_commit: bool,
    /// Edits dropped by a partial commit.
    pub dropped: Vec<Violation>,
    pub failed: bool,
}

impl CommitEvent {
    pub fn mutated(&self) -> bool {
        !self.added_ops.is_empty() || !self.removed_ops.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub graph: ExecutionGraph,
    pub reasoning: ReasoningGraph,
    pub metrics: RunMetrics,
    pub events: Vec<CommitEvent>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("initial graph has no operations")]
    EmptyGraph,
    #[error("initial graph is invalid: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),
    #[error("operation `{op}` failed: {message}")]
    OpFailed { op: OpId, message: String },
    #[error("deadlock: planned operations can never become ready: {}", .stuck.join(", "))]
    Deadlock { stuck: Vec<OpId> },
    #[error("invariant broken after commit of `{op}`: {}", .problems.join("; "))]
    Invariant { op: OpId, problems: Vec<String> },
    #[error("graph grew beyond {0} operations")]
    TooLarge(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Deadlock { .. } => EXIT_DEADLOCK,
            RunError::EmptyGraph | RunError::InvalidGraph(_) => EXIT_USAGE,
            _ => EXIT_OP_FAILURE,
        }
    }
}

/// Shared handles an execution needs.
#[derive(Clone, Copy)]
pub struct Runtime<'a> {
    pub registry: &'a OpRegistry,
    pub backend: &'a dyn ThoughtGenerator,
    pub cache: &'a CacheFacade,
    pub prompts: &'a PromptLibrary,
}

/// Planned ops whose required input connections all carry a thought.
pub fn compute_ready(g: &ExecutionGraph) -> BTreeSet<OpId> {
    g.live_ops().filter(|o| o.status == OpStatus::Planned && is_ready(g, &o.id)).map(|o| o.id.clone()).collect()
}

fn is_ready(g: &ExecutionGraph, op: &str) -> bool {
    let Ok(node) = g.live_op(op) else { return false };
    matches!(node.status, OpStatus::Planned | OpStatus::Ready)
        && g.incoming(op).iter().all(|c| c.payload.is_some() || !node.is_required(&c.target.port))
}

struct Scheduler {
    strategy: Strategy,
    frontier: BTreeMap<OpId, (u64, usize)>,
    depth: BTreeMap<OpId, usize>,
    seq: u64,
}

impl Scheduler {
    fn new(strategy: Strategy) -> Self {
        Scheduler { strategy, frontier: BTreeMap::new(), depth: BTreeMap::new(), seq: 0 }
    }

    fn offer(&mut self, g: &ExecutionGraph, op: &str) {
        if self.frontier.contains_key(op) || !is_ready(g, op) {
            return;
        }
        let depth = g.incoming(op).iter().filter_map(|c| self.depth.get(&c.source.op)).max().map_or(0, |d| d + 1);
        self.depth.insert(op.to_string(), depth);
        self.frontier.insert(op.to_string(), (self.seq, depth));
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<OpId> {
        let pick = match self.strategy {
            Strategy::Fifo => self.frontier.iter().min_by_key(|(id, (seq, _))| (*seq, *id)),
            Strategy::BreadthFirst => self.frontier.iter().min_by_key(|(id, (_, d))| (*d, *id)),
            Strategy::DepthFirst => self.frontier.iter().min_by_key(|(id, (_, d))| (std::cmp::Reverse(*d), *id)),
        }
        .map(|(id, _)| id.clone())?;
        self.frontier.remove(&pick);
        Some(pick)
    }
}

struct Done {
    op: OpId,
    result: Result<OpResult, OpError>,
    start_ms: u64,
    finish_ms: u64,
}

struct Controller<'a> {
    rt: Runtime<'a>,
    cfg: &'a RunConfig,
    g: ExecutionGraph,
    sched: Scheduler,
    metrics: RunMetrics,
    events: Vec<CommitEvent>,
}

impl<'a> Controller<'a> {
    /// Moves `op` to running and returns its inputs in connection order.
    fn start(&mut self, op: &str) -> Result<Vec<Thought>, RunError> {
        self.g.set_status(op, OpStatus::Ready)?;
        self.g.set_status(op, OpStatus::Running)?;
        let inputs: Vec<Thought> = self
            .g
            .incoming(op)
            .iter()
            .filter_map(|c| c.payload.as_ref().and_then(|t| self.g.thought(t)).cloned())
            .collect();
        if let Some(node) = self.g.ops.get_mut(op) {
            node.consumed = inputs.iter().map(|t| t.id.clone()).collect();
        }
        Ok(inputs)
    }

    fn execute(&self, graph: &ExecutionGraph, op: &str, inputs: &[Thought], clock: OpClock) -> Result<OpResult, OpError> {
        execute_in(self.rt, self.cfg, graph, op, inputs, clock)
    }

    fn commit(&mut self, done: Done) -> Result<(), RunError> {
        let Done { op, result, start_ms, finish_ms } = done;
        let (res, failure) = match result {
            Ok(res) => (res, None),
            Err(e) => (empty_result(&op), Some(e.to_string())),
        };
        let mut event = CommitEvent {
            step: 0,
            actor: op.clone(),
            added_ops: Vec::new(),
            removed_ops: Vec::new(),
            exclusive_at_commit: true,
            dropped: Vec::new(),
            failed: false,
        };
        let mut failure = failure;
        let mut mutation = res.mutation.clone();
        if failure.is_none() && !mutation.is_empty() {
            match self.apply_checked(&mutation) {
                Ok(dropped) => {
                    mutation = dropped.0;
                    event.dropped = dropped.1;
                }
                Err(v) => failure = Some(format!("mutation rejected: {}", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))),
            }
        }
        let outputs: BTreeMap<String, Value> = match &failure {
            None => res.outputs.clone(),
            Some(msg) => {
                if self.cfg.failure == FailurePolicy::FailFast {
                    return Err(RunError::OpFailed { op, message: msg.clone() });
                }
                log::warn!("`{op}` failed, skipping its exclusive subtree: {msg}");
                event.failed = true;
                mutation = self.skip_subtree(&op)?;
                let node = self.g.op(&op)?;
                node.output_ports.iter().map(|p| (p.clone(), json!({"_failed": true, "error": msg}))).collect()
            }
        };
        event.added_ops = mutation.add_ops.iter().map(|o| o.id.clone()).collect();
        event.removed_ops = mutation.remove_ops.clone();
        for r in &event.removed_ops {
            self.sched.frontier.remove(r);
        }
        if !event.added_ops.is_empty() {
            let excl = exclusive_descendants(&self.g, &op)?;
            event.exclusive_at_commit = event.added_ops.iter().all(|a| excl.contains(a));
        }
        let thoughts: BTreeMap<String, Thought> = outputs
            .into_iter()
            .map(|(port, payload)| {
                let t = Thought {
                    id: Thought::id_for(&op, &port),
                    payload,
                    meta: ThoughtMeta {
                        producer_op_id: op.clone(),
                        created_step: 0,
                        cost_usd: res.cost_usd,
                        duration_ms: res.duration_ms,
                        tags: Vec::new(),
                    },
                };
                (port, t)
            })
            .collect();
        event.step = self.g.record_outputs(&op, thoughts)?;
        self.metrics.record(&op, &res, start_ms, finish_ms);
        if self.cfg.check_invariants {
            if let Err(problems) = self.g.check_invariants() {
                return Err(RunError::Invariant { op, problems });
            }
        }
        if self.g.ops.len() > self.cfg.max_ops {
            return Err(RunError::TooLarge(self.cfg.max_ops));
        }
        let mut candidates: BTreeSet<String> = self.g.outgoing(&op).iter().map(|c| c.target.op.clone()).collect();
        candidates.extend(event.added_ops.iter().cloned());
        candidates.extend(mutation.add_conns.iter().map(|c| c.target.op.clone()));
        candidates.extend(mutation.rewire.iter().filter_map(|r| self.g.conns.get(&r.conn)).map(|c| c.target.op.clone()));
        if !mutation.remove_conns.is_empty() || !mutation.remove_ops.is_empty() {
            // Removed edges can unblock any op; rescan.
            candidates.extend(self.g.live_ops().filter(|o| o.status == OpStatus::Planned).map(|o| o.id.clone()));
        }
        for c in candidates {
            self.sched.offer(&self.g, &c);
        }
        self.events.push(event);
        Ok(())
    }

    /// Applies `m`; on rejection with `partial_commit`, retries without the violating edits.
    fn apply_checked(&mut self, m: &MutationBatch) -> Result<(MutationBatch, Vec<Violation>), Vec<Violation>> {
        let mut current = m.clone();
        let mut dropped = Vec::new();
        for _ in 0..8 {
            match apply_mutation(&mut self.g, &current) {
                Ok(_) => return Ok((current, dropped)),
                Err(GraphError::ValidationFailed(v)) if self.cfg.partial_commit => {
                    let names: BTreeSet<String> = v.iter().map(|x| x.element.clone()).collect();
                    let next = current.without(&names);
                    dropped.extend(v);
                    if next == current {
                        return Err(dropped);
                    }
                    current = next;
                    if current.is_empty() {
                        return Ok((current, dropped));
                    }
                }
                Err(GraphError::ValidationFailed(v)) => return Err(v),
                Err(e) => return Err(vec![Violation { rule: crate::graph::Rule::R7, element: m.actor.clone(), detail: e.to_string() }]),
            }
        }
        Err(dropped)
    }

    fn skip_subtree(&mut self, op: &str) -> Result<MutationBatch, RunError> {
        let mut m = MutationBatch::new(op);
        for d in exclusive_descendants(&self.g, op)? {
            if self.g.op(&d)?.status == OpStatus::Planned {
                m.remove_ops.push(d);
            }
        }
        if !m.is_empty() {
            apply_mutation(&mut self.g, &m)?;
        }
        Ok(m)
    }

    fn stuck(&self) -> Vec<OpId> {
        self.g.live_ops().filter(|o| o.status == OpStatus::Planned).map(|o| o.id.clone()).collect()
    }
}

fn execute_in(rt: Runtime<'_>, cfg: &RunConfig, graph: &ExecutionGraph, op: &str, inputs: &[Thought], clock: OpClock) -> Result<OpResult, OpError> {
    let node = graph.op(op)?;
    let mut ctx = OpContext::new(node, cfg.seed, rt.backend, rt.cache, rt.prompts, &cfg.hyperparams, graph, clock);
    ctx.budget_usd = cfg.budget_usd;
    execute_op(rt.registry, node, inputs, &mut ctx)
}

fn empty_result(op: &str) -> OpResult {
    OpResult {
        outputs: BTreeMap::new(),
        mutation: MutationBatch::new(op),
        cost_usd: 0.0,
        duration_ms: 0,
        backend_calls: 0,
        cache: Default::default(),
    }
}

/// Executes `g0` to completion.
pub fn run(g0: ExecutionGraph, cfg: &RunConfig, rt: Runtime<'_>) -> Result<RunOutcome, RunError> {
    if g0.live_count() == 0 {
        return Err(RunError::EmptyGraph);
    }
    g0.check_invariants().map_err(RunError::InvalidGraph)?;
    let mut c = Controller { rt, cfg, g: g0, sched: Scheduler::new(cfg.strategy), metrics: RunMetrics::default(), events: Vec::new() };
    for id in compute_ready(&c.g) {
        c.sched.offer(&c.g, &id);
    }
    // Virtual runs never read the host clock, so they also work where none exists.
    let wall_ms = match cfg.clock {
        ClockMode::Virtual => run_virtual(&mut c)?,
        ClockMode::Wall => {
            let started = Instant::now();
            run_wall(&mut c)?;
            started.elapsed().as_millis() as u64
        }
    };
    let Controller { g, mut metrics, events, .. } = c;
    metrics.finish(&g, wall_ms);
    let reasoning = derive_reasoning_graph(&g);
    Ok(RunOutcome { graph: g, reasoning, metrics, events })
}

fn run_virtual(c: &mut Controller<'_>) -> Result<u64, RunError> {
    let mut now = 0u64;
    let mut running: Vec<Done> = Vec::new();
    let mut rng = c.cfg.interleave_seed.map(ChaCha8Rng::seed_from_u64);
    loop {
        while running.len() < c.cfg.max_concurrency.max(1) {
            let Some(op) = c.sched.pop() else { break };
            let inputs = c.start(&op)?;
            let result = c.execute(&c.g, &op, &inputs, OpClock::virtual_at(now));
            let dur = result.as_ref().map_or(0, |r| r.duration_ms);
            running.push(Done { op, result, start_ms: now, finish_ms: now + dur });
        }
        if running.is_empty() {
            let stuck = c.stuck();
            return if stuck.is_empty() { Ok(now) } else { Err(RunError::Deadlock { stuck }) };
        }
        let idx = match rng.as_mut() {
            Some(r) => r.random_range(0..running.len()),
            None => (0..running.len()).min_by(|&a, &b| (running[a].finish_ms, &running[a].op).cmp(&(running[b].finish_ms, &running[b].op))).expect("non-empty"),
        };
        let done = running.swap_remove(idx);
        now = now.max(done.finish_ms);
        c.commit(done)?;
    }
}

fn run_wall(c: &mut Controller<'_>) -> Result<(), RunError> {
    let origin = Instant::now();
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Done>();
        let mut in_flight = 0usize;
        loop {
            let mut snapshot: Option<std::sync::Arc<ExecutionGraph>> = None;
            while in_flight < c.cfg.max_concurrency.max(1) {
                let Some(op) = c.sched.pop() else { break };
                let inputs = c.start(&op)?;
                let snap = snapshot.get_or_insert_with(|| std::sync::Arc::new(c.g.clone())).clone();
                let tx = tx.clone();
                let (rt, cfg) = (c.rt, c.cfg);
                scope.spawn(move || {
                    let start_ms = origin.elapsed().as_millis() as u64;
                    let result = execute_in(rt, cfg, &snap, &op, &inputs, OpClock::wall());
                    let finish_ms = origin.elapsed().as_millis() as u64;
                    let _ = tx.send(Done { op, result, start_ms, finish_ms });
                });
                in_flight += 1;
            }
            if in_flight == 0 {
                let stuck = c.stuck();
                return if stuck.is_empty() { Ok(()) } else { Err(RunError::Deadlock { stuck }) };
            }
            let done = rx.recv().expect("workers hold a sender while in flight");
            in_flight -= 1;
            if let Err(e) = c.commit(done) {
                // Let in-flight workers finish before the scope joins them.
                for _ in 0..in_flight {
                    let _ = rx.recv();
                }
                return Err(e);
            }
        }
    })
}

#[cfg(test)]
mod tests;
