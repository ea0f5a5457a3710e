//! Operation contract and the registry of operation kinds.
//!
//! An operation consumes the thoughts on its incoming connections and returns
//! one payload per output port plus an optional mutation batch. Backend calls
//! go through [`OpContext::generate`], which applies the cache and keeps the
//! per-operation cost and time accounting.

pub mod builtins;
pub mod parse;
pub mod template;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{BackendError, GenRequest, ThoughtGenerator};
use crate::cache::{now_unix, CacheEntry, CacheFacade, CacheKey, CacheStats, Claim};
use crate::canonical;
use crate::graph::{
    visible_subgraph, Connection, ConnId, Endpoint, ExecutionGraph, GraphError, IdAllocator, MutationBatch, OpId,
    OperationNode, Rewire, Thought,
};
pub use template::{PromptLibrary, Template, TemplateError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpError {
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("malformed config: {0}")]
    MalformedConfig(String),
    #[error("cost budget of ${0} exceeded")]
    BudgetExceeded(f64),
    #[error("template: {0}")]
    Template(#[from] TemplateError),
    #[error("unknown operation kind `{0}`")]
    UnknownKind(String),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
}

impl OpError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, OpError::Backend(e) if e.is_retryable())
    }
}

/// Identity of an operation's behavior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpFingerprint {
    pub kind: String,
    pub config_hash: String,
    pub code_version: String,
}

impl OpFingerprint {
    pub fn of(node: &OperationNode, code_version: &str) -> Self {
        OpFingerprint { kind: node.kind.clone(), config_hash: canonical::hash_of(&node.config), code_version: code_version.to_string() }
    }

    /// Part of the cache key. The config is left out on purpose: its effect
    /// reaches the backend only through the rendered request, which is keyed.
    pub fn cache_fingerprint(&self) -> String {
        canonical::hash_of(&json!({"kind": self.kind, "code_version": self.code_version}))
    }
}

/// What an operation kind returns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpOutput {
    pub outputs: BTreeMap<String, Value>,
    pub mutation: Option<MutationBatch>,
}

impl OpOutput {
    /// The same payload on every listed port.
    pub fn broadcast(ports: &[String], payload: Value) -> Self {
        OpOutput { outputs: ports.iter().map(|p| (p.clone(), payload.clone())).collect(), mutation: None }
    }

    pub fn with_mutation(mut self, m: MutationBatch) -> Self {
        self.mutation = Some(m);
        self
    }
}

/// Executed operation: outputs, mutation and accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct OpResult {
    pub outputs: BTreeMap<String, Value>,
    pub mutation: MutationBatch,
    pub cost_usd: f64,
    pub duration_ms: u64,
    pub backend_calls: u64,
    pub cache: CacheStats,
}

pub trait OpKind: Send + Sync {
    fn name(&self) -> &str;

    /// Bump when behavior changes so cached results are not reused.
    fn code_version(&self) -> &str {
        "1"
    }

    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError>;
}

#[derive(Clone, Default)]
pub struct OpRegistry {
    kinds: BTreeMap<String, Arc<dyn OpKind>>,
}

impl std::fmt::Debug for OpRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.kinds.keys()).finish()
    }
}

impl OpRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Built-in kinds plus every scheme's kinds.
    pub fn standard() -> Self {
        let mut r = Self::default();
        builtins::register(&mut r);
        crate::schemes::register_kinds(&mut r);
        r
    }

    pub fn register(&mut self, kind: impl OpKind + 'static) {
        self.kinds.insert(kind.name().to_string(), Arc::new(kind));
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn OpKind>, OpError> {
        self.kinds.get(name).ok_or_else(|| OpError::UnknownKind(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }
}

/// Time source for one operation execution.
#[derive(Debug, Clone, Copy)]
pub enum OpClock {
    /// Simulated milliseconds; backend latency advances `now`.
    Virtual { start: u64, now: u64 },
    Wall { start: Instant },
}

impl OpClock {
    pub fn virtual_at(t: u64) -> Self {
        OpClock::Virtual { start: t, now: t }
    }

    pub fn wall() -> Self {
        OpClock::Wall { start: Instant::now() }
    }

    fn now_vt(&self) -> u64 {
        match *self {
            OpClock::Virtual { now, .. } => now,
            OpClock::Wall { .. } => 0,
        }
    }

    fn advance(&mut self, ms: u64) {
        if let OpClock::Virtual { now, .. } = self {
            *now += ms;
        }
    }

    fn wait_until(&mut self, t: u64) {
        if let OpClock::Virtual { now, .. } = self {
            *now = (*now).max(t);
        }
    }

    pub fn elapsed_ms(&self) -> u64 {
        match *self {
            OpClock::Virtual { start, now } => now - start,
            OpClock::Wall { start } => start.elapsed().as_millis() as u64,
        }
    }
}

/// Accounting accumulated while an operation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Usage {
    pub cost_usd: f64,
    pub backend_calls: u64,
    pub cache: CacheStats,
}

/// Everything an operation may touch while executing.
pub struct OpContext<'a> {
    pub op_id: OpId,
    /// Pure function of the run seed and the op id.
    pub rng_seed: u64,
    pub backend: &'a dyn ThoughtGenerator,
    pub cache: &'a CacheFacade,
    pub prompts: &'a PromptLibrary,
    pub hyperparams: &'a Value,
    pub budget_usd: Option<f64>,
    graph: &'a ExecutionGraph,
    fingerprint: String,
    clock: OpClock,
    usage: Usage,
}

impl<'a> OpContext<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        node: &OperationNode,
        run_seed: u64,
        backend: &'a dyn ThoughtGenerator,
        cache: &'a CacheFacade,
        prompts: &'a PromptLibrary,
        hyperparams: &'a Value,
        graph: &'a ExecutionGraph,
        clock: OpClock,
    ) -> Self {
        OpContext {
            op_id: node.id.clone(),
            rng_seed: op_seed(run_seed, &node.id),
            backend,
            cache,
            prompts,
            hyperparams,
            budget_usd: None,
            graph,
            fingerprint: String::new(),
            clock,
            usage: Usage::default(),
        }
    }

    /// The actor's visible subgraph: ancestors, descendants and itself.
    pub fn graph_view(&self) -> Result<ExecutionGraph, OpError> {
        Ok(visible_subgraph(self.graph, &self.op_id)?)
    }

    /// Outgoing connections of this op in the snapshot it was dispatched on.
    pub fn outgoing(&self) -> Vec<Connection> {
        self.graph.outgoing(&self.op_id).into_iter().cloned().collect()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }

    pub fn usage(&self) -> Usage {
        self.usage
    }

    pub fn clock(&self) -> OpClock {
        self.clock
    }

    /// Renders a template and requests `n` samples starting at `offset`.
    pub fn generate_from(
        &mut self,
        template: &str,
        vars: &BTreeMap<String, String>,
        n: u32,
        offset: u32,
        temperature: f64,
    ) -> Result<Vec<String>, OpError> {
        let messages = self.prompts.render(template, vars)?;
        let req = GenRequest::new(messages).with_n(n).with_offset(offset).with_temperature(temperature);
        self.generate(&req)
    }

    /// Cached backend call. Each sample index is cached separately, so a
    /// request for fewer samples reuses a prefix of an earlier one.
    pub fn generate(&mut self, req: &GenRequest) -> Result<Vec<String>, OpError> {
        req.validate()?;
        let inputs_hash = canonical::hash_of(&json!({"backend": self.backend.id(), "prompt": req.prompt_identity()}));
        let keys: Vec<CacheKey> = (0..req.n)
            .map(|i| CacheKey {
                fingerprint: self.fingerprint.clone(),
                inputs_hash: inputs_hash.clone(),
                sample_index: req.sample_offset + i,
            })
            .collect();
        let mut texts: Vec<Option<String>> = vec![None; req.n as usize];
        let mut owned: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            match self.cache.claim(key) {
                Claim::Hit { entry, ready_at } => {
                    self.clock.wait_until(ready_at);
                    self.usage.cache.record_hit(&entry);
                    texts[i] = Some(entry.text().to_string());
                }
                Claim::Owner => {
                    self.usage.cache.misses += 1;
                    owned.push(i);
                }
            }
        }
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &i in &owned {
            match runs.last_mut() {
                Some((_, end)) if *end == i => *end += 1,
                _ => runs.push((i, i + 1)),
            }
        }
        for (r, &(lo, hi)) in runs.iter().enumerate() {
            let sub = GenRequest { n: (hi - lo) as u32, sample_offset: req.sample_offset + lo as u32, ..req.clone() };
            let resp = match self.backend.generate(&sub) {
                Ok(resp) if resp.texts.len() == hi - lo => resp,
                other => {
                    for &(a, b) in &runs[r..] {
                        keys[a..b].iter().for_each(|k| self.cache.abandon(k));
                    }
                    return Err(match other {
                        Err(e) => e.into(),
                        Ok(resp) => OpError::Backend(BackendError::Http {
                            status: 200,
                            message: format!("expected {} samples, got {}", hi - lo, resp.texts.len()),
                        }),
                    });
                }
            };
            self.usage.backend_calls += 1;
            self.usage.cost_usd += resp.cost_usd;
            self.clock.advance(resp.latency_ms);
            let per = (hi - lo) as f64;
            let ready_at = self.clock.now_vt();
            for (j, text) in resp.texts.into_iter().enumerate() {
                let i = lo + j;
                let entry = CacheEntry {
                    key: keys[i].clone(),
                    outputs: [("text".to_string(), Value::String(text.clone()))].into_iter().collect(),
                    cost_usd: resp.cost_usd / per,
                    duration_ms: resp.latency_ms / (hi - lo) as u64,
                    created_at: now_unix(),
                    backend_id: self.backend.id().to_string(),
                };
                self.cache.fill(entry, ready_at);
                texts[i] = Some(text);
            }
            if let Some(b) = self.budget_usd {
                if self.usage.cost_usd > b {
                    for &(a, c) in &runs[r + 1..] {
                        keys[a..c].iter().for_each(|k| self.cache.abandon(k));
                    }
                    return Err(OpError::BudgetExceeded(b));
                }
            }
        }
        Ok(texts.into_iter().map(|t| t.expect("every sample filled")).collect())
    }
}

pub fn op_seed(run_seed: u64, op_id: &str) -> u64 {
    canonical::seed_from(&[&run_seed.to_string(), op_id])
}

/// Runs `node` on `inputs` and checks that every declared output port is set.
pub fn execute_op(
    registry: &OpRegistry,
    node: &OperationNode,
    inputs: &[Thought],
    ctx: &mut OpContext<'_>,
) -> Result<OpResult, OpError> {
    let kind = registry.get(&node.kind)?;
    ctx.fingerprint = OpFingerprint::of(node, kind.code_version()).cache_fingerprint();
    let out = kind.execute(node, inputs, ctx)?;
    for p in &node.output_ports {
        if !out.outputs.contains_key(p) {
            return Err(OpError::MalformedInput(format!("`{}` produced nothing on port `{p}`", node.id)));
        }
    }
    if let Some(extra) = out.outputs.keys().find(|p| !node.output_ports.contains(p)) {
        return Err(OpError::MalformedInput(format!("`{}` produced undeclared port `{extra}`", node.id)));
    }
    let mutation = out.mutation.unwrap_or_else(|| MutationBatch::new(node.id.clone()));
    Ok(OpResult {
        outputs: out.outputs,
        mutation,
        cost_usd: ctx.usage.cost_usd,
        duration_ms: ctx.clock.elapsed_ms(),
        backend_calls: ctx.usage.backend_calls,
        cache: ctx.usage.cache,
    })
}

/// Builds a mutation batch with ids allocated under the actor.
#[derive(Debug)]
pub struct MutationBuilder {
    batch: MutationBatch,
    ids: IdAllocator,
}

impl MutationBuilder {
    pub fn new(actor: &str) -> Self {
        MutationBuilder { batch: MutationBatch::new(actor), ids: IdAllocator::new(actor) }
    }

    pub fn actor(&self) -> &str {
        &self.batch.actor
    }

    pub fn add_op(&mut self, kind: &str, config: Value, inputs: &[&str], outputs: &[&str]) -> OpId {
        let id = self.ids.op_id(kind);
        self.batch.add_ops.push(OperationNode::new(id.clone(), kind, config, inputs, outputs));
        id
    }

    /// Adds a node built by `f` from its allocated id.
    pub fn add_node(&mut self, kind: &str, f: impl FnOnce(OpId) -> OperationNode) -> OpId {
        let id = self.ids.op_id(kind);
        self.batch.add_ops.push(f(id.clone()));
        id
    }

    pub fn connect(&mut self, src: &str, src_port: &str, dst: &str, dst_port: &str) -> ConnId {
        let id = self.ids.conn_id();
        self.batch.add_conns.push(Connection::new(id.clone(), Endpoint::new(src, src_port), Endpoint::new(dst, dst_port)));
        id
    }

    pub fn rewire(&mut self, conn: &str, new_src: &str, port: &str) {
        self.batch.rewire.push(Rewire { conn: conn.to_string(), new_source: Endpoint::new(new_src, port) });
    }

    pub fn remove_op(&mut self, op: &str) {
        self.batch.remove_ops.push(op.to_string());
    }

    pub fn remove_conn(&mut self, conn: &str) {
        self.batch.remove_conns.push(conn.to_string());
    }

    pub fn build(self) -> MutationBatch {
        self.batch
    }
}
