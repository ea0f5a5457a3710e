//! Execution graph and reasoning graph data model.
//!
//! The execution graph is a directed multigraph: operations are nodes and
//! connections are edges that carry at most one thought each. A connection
//! whose source has not run yet carries `None` (the empty payload).
//!
//! Mutations are checked against the region rules in [`mutation`] before
//! they are applied; region queries live in [`regions`].

mod dot;
pub mod mutation;
pub mod reasoning;
pub mod regions;
mod serialize;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use dot::to_dot;
pub use mutation::{apply_mutation, apply_mutation_with_fault, validate_mutation, MutationBatch, Rewire, Rule, Violation};
pub use reasoning::{derive_reasoning_graph, ReasoningGraph};
pub use regions::{ancestors, descendants, exclusive_descendants, regions, visible_subgraph, GraphRegions};
pub use serialize::{canonical_parse, canonical_serialize};

pub type OpId = String;
pub type ConnId = String;
pub type ThoughtId = String;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown operation `{0}`")]
    UnknownOp(OpId),
    #[error("actor `{0}` is not running")]
    ActorNotRunning(OpId),
    #[error("operation `{0}` is not running")]
    OpNotRunning(OpId),
    #[error("operation `{op}` produced no thought for output port `{port}`")]
    MissingPortOutput { op: OpId, port: String },
    #[error("mutation rejected: {}", format_violations(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("injected fault after {0} edits")]
    InjectedFault(usize),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpStatus {
    Planned,
    Ready,
    Running,
    Done,
    Removed,
}

impl OpStatus {
    /// Legal forward transitions: planned→ready→running→done, planned→removed.
    pub fn can_become(self, next: OpStatus) -> bool {
        use OpStatus::*;
        matches!((self, next), (Planned, Ready) | (Ready, Running) | (Running, Done) | (Planned, Removed))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpStatus::Planned => "planned",
            OpStatus::Ready => "ready",
            OpStatus::Running => "running",
            OpStatus::Done => "done",
            OpStatus::Removed => "removed",
        }
    }
}

/// `(operation, port)` pair at either end of a connection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub op: OpId,
    pub port: String,
}

impl Endpoint {
    pub fn new(op: impl Into<OpId>, port: impl Into<String>) -> Self {
        Endpoint { op: op.into(), port: port.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationNode {
    pub id: OpId,
    pub kind: String,
    pub config: Value,
    pub status: OpStatus,
    pub input_ports: Vec<String>,
    pub output_ports: Vec<String>,
    /// Input ports that must be filled before the op may run. `None` means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_inputs: Option<Vec<String>>,
    /// Thought emitted per output port, set when the op is done.
    #[serde(default)]
    pub outputs: BTreeMap<String, ThoughtId>,
    /// Thoughts the op consumed when it ran, in input order.
    #[serde(default)]
    pub consumed: Vec<ThoughtId>,
}

impl OperationNode {
    pub fn new(id: impl Into<OpId>, kind: impl Into<String>, config: Value, inputs: &[&str], outputs: &[&str]) -> Self {
        OperationNode {
            id: id.into(),
            kind: kind.into(),
            config,
            status: OpStatus::Planned,
            input_ports: inputs.iter().map(|s| s.to_string()).collect(),
            output_ports: outputs.iter().map(|s| s.to_string()).collect(),
            required_inputs: None,
            outputs: BTreeMap::new(),
            consumed: Vec::new(),
        }
    }

    pub fn with_output_ports(mut self, ports: Vec<String>) -> Self {
        self.output_ports = ports;
        self
    }

    pub fn with_required_inputs(mut self, ports: &[&str]) -> Self {
        self.required_inputs = Some(ports.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn is_required(&self, port: &str) -> bool {
        match &self.required_inputs {
            None => true,
            Some(req) => req.iter().any(|p| p == port),
        }
    }

    pub fn is_live(&self) -> bool {
        self.status != OpStatus::Removed
    }

    fn input_index(&self, port: &str) -> usize {
        self.input_ports.iter().position(|p| p == port).unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub id: ConnId,
    pub source: Endpoint,
    pub target: Endpoint,
    /// `None` until the source has produced a thought for this connection.
    pub payload: Option<ThoughtId>,
}

impl Connection {
    pub fn new(id: impl Into<ConnId>, source: Endpoint, target: Endpoint) -> Self {
        Connection { id: id.into(), source, target, payload: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ThoughtMeta {
    pub producer_op_id: OpId,
    pub created_step: u64,
    pub cost_usd: f64,
    pub duration_ms: u64,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub id: ThoughtId,
    pub payload: Value,
    pub meta: ThoughtMeta,
}

impl Thought {
    /// Thoughts are keyed by the port that emitted them; one thought per port per run.
    pub fn id_for(op: &str, port: &str) -> ThoughtId {
        format!("{op}@{port}")
    }

    /// Numeric score stored under the reserved `_value` key, if any.
    pub fn value(&self) -> Option<f64> {
        self.payload.get("_value").and_then(Value::as_f64)
    }
}

/// Execution graph state at one step.
///
/// `conns` is readable directly; structural edits to connections go through
/// [`insert_conn`](Self::insert_conn), [`remove_conn`](Self::remove_conn) and
/// [`move_source`](Self::move_source) so the adjacency index stays in sync.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "GraphRepr")]
pub struct ExecutionGraph {
    pub step: u64,
    pub ops: BTreeMap<OpId, OperationNode>,
    pub conns: BTreeMap<ConnId, Connection>,
    pub thoughts: BTreeMap<ThoughtId, Thought>,
    #[serde(skip)]
    index: AdjacencyIndex,
}

#[derive(Debug, Clone, Default)]
struct AdjacencyIndex {
    incoming: BTreeMap<OpId, BTreeSet<ConnId>>,
    outgoing: BTreeMap<OpId, BTreeSet<ConnId>>,
}

impl AdjacencyIndex {
    fn add(&mut self, c: &Connection) {
        self.incoming.entry(c.target.op.clone()).or_default().insert(c.id.clone());
        self.outgoing.entry(c.source.op.clone()).or_default().insert(c.id.clone());
    }

    fn remove(&mut self, c: &Connection) {
        if let Some(s) = self.incoming.get_mut(&c.target.op) {
            s.remove(&c.id);
        }
        if let Some(s) = self.outgoing.get_mut(&c.source.op) {
            s.remove(&c.id);
        }
    }
}

#[derive(Deserialize)]
struct GraphRepr {
    step: u64,
    ops: BTreeMap<OpId, OperationNode>,
    conns: BTreeMap<ConnId, Connection>,
    thoughts: BTreeMap<ThoughtId, Thought>,
}

impl From<GraphRepr> for ExecutionGraph {
    fn from(r: GraphRepr) -> Self {
        let mut g = ExecutionGraph { step: r.step, ops: r.ops, conns: r.conns, thoughts: r.thoughts, index: Default::default() };
        g.reindex();
        g
    }
}

impl PartialEq for ExecutionGraph {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step && self.ops == other.ops && self.conns == other.conns && self.thoughts == other.thoughts
    }
}

impl ExecutionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn op(&self, id: &str) -> Result<&OperationNode, GraphError> {
        self.ops.get(id).ok_or_else(|| GraphError::UnknownOp(id.to_string()))
    }

    pub fn live_op(&self, id: &str) -> Result<&OperationNode, GraphError> {
        match self.ops.get(id) {
            Some(op) if op.is_live() => Ok(op),
            _ => Err(GraphError::UnknownOp(id.to_string())),
        }
    }

    pub fn live_ops(&self) -> impl Iterator<Item = &OperationNode> {
        self.ops.values().filter(|o| o.is_live())
    }

    pub fn live_count(&self) -> usize {
        self.live_ops().count()
    }

    /// Rebuilds the adjacency index from `conns`.
    pub fn reindex(&mut self) {
        let mut index = AdjacencyIndex::default();
        for c in self.conns.values() {
            index.add(c);
        }
        self.index = index;
    }

    /// Incoming connections of `op`, ordered by input port then connection id.
    pub fn incoming(&self, op: &str) -> Vec<&Connection> {
        let node = self.ops.get(op);
        let mut v: Vec<&Connection> = match self.index.incoming.get(op) {
            Some(ids) => ids.iter().filter_map(|id| self.conns.get(id)).collect(),
            None => Vec::new(),
        };
        if let Some(node) = node {
            v.sort_by(|a, b| {
                (node.input_index(&a.target.port), &a.id).cmp(&(node.input_index(&b.target.port), &b.id))
            });
        }
        v
    }

    /// Outgoing connections of `op` in connection-id order.
    pub fn outgoing(&self, op: &str) -> Vec<&Connection> {
        match self.index.outgoing.get(op) {
            Some(ids) => ids.iter().filter_map(|id| self.conns.get(id)).collect(),
            None => Vec::new(),
        }
    }

    pub fn successors(&self, op: &str) -> impl Iterator<Item = &str> {
        self.outgoing(op).into_iter().map(|c| c.target.op.as_str())
    }

    pub fn thought(&self, id: &str) -> Option<&Thought> {
        self.thoughts.get(id)
    }

    /// Thought the source endpoint emitted, if its op is done.
    pub fn output_of(&self, ep: &Endpoint) -> Option<&ThoughtId> {
        let op = self.ops.get(&ep.op)?;
        if op.status != OpStatus::Done {
            return None;
        }
        op.outputs.get(&ep.port)
    }

    /// Outputs of done ops that have no outgoing connections, in id order.
    pub fn sink_outputs(&self) -> Vec<&Thought> {
        let has_out: BTreeSet<&str> = self.conns.values().map(|c| c.source.op.as_str()).collect();
        self.ops
            .values()
            .filter(|o| o.status == OpStatus::Done && !has_out.contains(o.id.as_str()))
            .flat_map(|o| o.outputs.values())
            .filter_map(|t| self.thoughts.get(t))
            .collect()
    }

    pub fn insert_op(&mut self, node: OperationNode) {
        self.ops.insert(node.id.clone(), node);
    }

    pub fn insert_conn(&mut self, conn: Connection) {
        if let Some(old) = self.conns.remove(&conn.id) {
            self.index.remove(&old);
        }
        self.index.add(&conn);
        self.conns.insert(conn.id.clone(), conn);
    }

    pub fn remove_conn(&mut self, id: &str) -> Option<Connection> {
        let c = self.conns.remove(id)?;
        self.index.remove(&c);
        Some(c)
    }

    /// Moves the start of connection `id` to `source`, refreshing its payload.
    pub fn move_source(&mut self, id: &str, source: Endpoint) -> Option<Connection> {
        let old = self.conns.get(id)?.clone();
        let mut c = old.clone();
        c.payload = self.output_of(&source).cloned();
        c.source = source;
        self.index.remove(&old);
        self.index.add(&c);
        self.conns.insert(c.id.clone(), c);
        Some(old)
    }

    pub fn set_status(&mut self, op: &str, status: OpStatus) -> Result<(), GraphError> {
        let node = self.ops.get_mut(op).ok_or_else(|| GraphError::UnknownOp(op.to_string()))?;
        if node.status == status {
            return Ok(());
        }
        if !node.status.can_become(status) {
            return Err(GraphError::Malformed(format!(
                "illegal status transition {} -> {} for `{op}`",
                node.status.as_str(),
                status.as_str()
            )));
        }
        node.status = status;
        Ok(())
    }

    /// Writes `outputs` onto every outgoing connection of `op` and marks it done.
    pub fn record_outputs(&mut self, op: &str, outputs: BTreeMap<String, Thought>) -> Result<u64, GraphError> {
        let node = self.ops.get(op).ok_or_else(|| GraphError::UnknownOp(op.to_string()))?;
        if node.status != OpStatus::Running {
            return Err(GraphError::OpNotRunning(op.to_string()));
        }
        for c in self.outgoing(op) {
            if !outputs.contains_key(&c.source.port) {
                return Err(GraphError::MissingPortOutput { op: op.to_string(), port: c.source.port.clone() });
            }
        }
        let step = self.step + 1;
        let mut port_map = BTreeMap::new();
        for (port, mut thought) in outputs {
            thought.meta.created_step = step;
            port_map.insert(port, thought.id.clone());
            self.thoughts.insert(thought.id.clone(), thought);
        }
        let out_ids: Vec<ConnId> = self.outgoing(op).iter().map(|c| c.id.clone()).collect();
        for id in out_ids {
            if let Some(c) = self.conns.get_mut(&id) {
                c.payload = port_map.get(&c.source.port).cloned();
            }
        }
        let node = self.ops.get_mut(op).expect("checked above");
        node.outputs = port_map;
        node.status = OpStatus::Done;
        self.step = step;
        Ok(step)
    }

    /// Checks the structural invariants; returns every problem found.
    pub fn check_invariants(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        for (id, op) in &self.ops {
            if id != &op.id {
                problems.push(format!("op key `{id}` does not match id `{}`", op.id));
            }
        }
        for c in self.conns.values() {
            for ep in [&c.source, &c.target] {
                match self.ops.get(&ep.op) {
                    Some(op) if op.is_live() => {}
                    _ => problems.push(format!("connection `{}` references missing or removed op `{}`", c.id, ep.op)),
                }
            }
            if let Some(src) = self.ops.get(&c.source.op) {
                if !src.output_ports.contains(&c.source.port) {
                    problems.push(format!("connection `{}` uses undeclared output port `{}`", c.id, c.source.port));
                }
                match (&c.payload, src.status) {
                    (Some(_), s) if s != OpStatus::Done => {
                        problems.push(format!("connection `{}` carries a thought but source is {}", c.id, s.as_str()))
                    }
                    (None, OpStatus::Done) => problems.push(format!("done op `{}` left connection `{}` empty", src.id, c.id)),
                    _ => {}
                }
                if let Some(t) = &c.payload {
                    if !self.thoughts.contains_key(t) {
                        problems.push(format!("connection `{}` references unknown thought `{t}`", c.id));
                    }
                }
            }
            if let Some(dst) = self.ops.get(&c.target.op) {
                if !dst.input_ports.contains(&c.target.port) {
                    problems.push(format!("connection `{}` uses undeclared input port `{}`", c.id, c.target.port));
                }
            }
        }
        if regions::Topology::of(self).has_cycle() {
            problems.push("graph of live operations contains a cycle".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

/// Assigns deterministic ids for ops and connections created by one actor.
///
/// Ops are named `parent/NNN#kind`; graph roots use `root/NNN`. Connections
/// are named `parent/eNNN`.
#[derive(Debug, Clone)]
pub struct IdAllocator {
    parent: String,
    next_op: usize,
    next_conn: usize,
}

impl IdAllocator {
    pub fn new(parent: impl Into<String>) -> Self {
        IdAllocator { parent: parent.into(), next_op: 0, next_conn: 0 }
    }

    pub fn root() -> Self {
        Self::new("root")
    }

    pub fn op_id(&mut self, kind: &str) -> OpId {
        let n = self.next_op;
        self.next_op += 1;
        if self.parent == "root" {
            format!("root/{n:03}")
        } else {
            format!("{}/{n:03}#{kind}", self.parent)
        }
    }

    pub fn conn_id(&mut self) -> ConnId {
        let n = self.next_conn;
        self.next_conn += 1;
        format!("{}/e{n:03}", self.parent)
    }
}

/// Convenience builder for initial graphs.
#[derive(Debug)]
pub struct GraphBuilder {
    graph: ExecutionGraph,
    ids: IdAllocator,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder { graph: ExecutionGraph::new(), ids: IdAllocator::root() }
    }

    pub fn op(&mut self, kind: &str, config: Value, inputs: &[&str], outputs: &[&str]) -> OpId {
        let id = self.ids.op_id(kind);
        self.graph.insert_op(OperationNode::new(id.clone(), kind, config, inputs, outputs));
        id
    }

    pub fn node(&mut self, node_fn: impl FnOnce(OpId) -> OperationNode) -> OpId {
        let id = self.ids.op_id("");
        let node = node_fn(id.clone());
        self.graph.insert_op(node);
        id
    }

    pub fn connect(&mut self, src: &str, src_port: &str, dst: &str, dst_port: &str) -> ConnId {
        let id = self.ids.conn_id();
        self.graph.insert_conn(Connection::new(id.clone(), Endpoint::new(src, src_port), Endpoint::new(dst, dst_port)));
        id
    }

    pub fn build(self) -> ExecutionGraph {
        self.graph
    }
}
