//! Graph mutations proposed by running operations, and the rules that gate them.
//!
//! With `a` the actor, `A`/`D`/`E` its ancestors, descendants and exclusive
//! descendants, and `N` the ops added by the batch:
//!
//! * R1: nothing inside `A`, and nothing feeding `a` itself, may change.
//! * R2: nothing inside `D∖E` may change; edges into `D∖E` only move by rewiring.
//! * R3: free edits inside `E` (including edges leaving `a`); anything outside
//!   the visible region, removing `a` itself, or removing a non-planned op is refused.
//! * R4: a new edge leaving `A` must end in `E ∪ N`.
//! * R5: a rewire moves the start of an edge `E∪{a} → D` to some op in `E ∪ A ∪ {a} ∪ N`.
//! * R6: every op in `N` is an exclusive descendant of `a` once the batch is applied.
//! * R7: the result stays acyclic, ids are fresh, endpoints and ports exist.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::regions::Topology;
use super::{ConnId, Connection, Endpoint, ExecutionGraph, GraphError, OpId, OpStatus, OperationNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewire {
    pub conn: ConnId,
    pub new_source: Endpoint,
}

/// One atomic set of edits proposed by `actor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationBatch {
    pub actor: OpId,
    #[serde(default)]
    pub add_ops: Vec<OperationNode>,
    #[serde(default)]
    pub remove_ops: Vec<OpId>,
    #[serde(default)]
    pub add_conns: Vec<Connection>,
    #[serde(default)]
    pub remove_conns: Vec<ConnId>,
    #[serde(default)]
    pub rewire: Vec<Rewire>,
}

impl MutationBatch {
    pub fn new(actor: impl Into<OpId>) -> Self {
        MutationBatch {
            actor: actor.into(),
            add_ops: Vec::new(),
            remove_ops: Vec::new(),
            add_conns: Vec::new(),
            remove_conns: Vec::new(),
            rewire: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.add_ops.is_empty()
            && self.remove_ops.is_empty()
            && self.add_conns.is_empty()
            && self.remove_conns.is_empty()
            && self.rewire.is_empty()
    }

    /// Drops every edit that names one of `elements`; used for partial commits.
    pub fn without(&self, elements: &BTreeSet<String>) -> MutationBatch {
        MutationBatch {
            actor: self.actor.clone(),
            add_ops: self.add_ops.iter().filter(|o| !elements.contains(&o.id)).cloned().collect(),
            remove_ops: self.remove_ops.iter().filter(|o| !elements.contains(*o)).cloned().collect(),
            add_conns: self.add_conns.iter().filter(|c| !elements.contains(&c.id)).cloned().collect(),
            remove_conns: self.remove_conns.iter().filter(|c| !elements.contains(*c)).cloned().collect(),
            rewire: self.rewire.iter().filter(|r| !elements.contains(&r.conn)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub element: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} `{}`: {}", self.rule, self.element, self.detail)
    }
}

struct Ctx<'a> {
    g: &'a ExecutionGraph,
    actor: &'a str,
    anc: BTreeSet<OpId>,
    desc: BTreeSet<OpId>,
    excl: BTreeSet<OpId>,
    new_ops: BTreeMap<&'a str, &'a OperationNode>,
    removed_ops: BTreeSet<&'a str>,
    out: Vec<Violation>,
}

impl<'a> Ctx<'a> {
    fn flag(&mut self, rule: Rule, element: &str, detail: impl Into<String>) {
        self.out.push(Violation { rule, element: element.to_string(), detail: detail.into() });
    }
    fn in_a(&self, o: &str) -> bool {
        self.anc.contains(o)
    }
    fn in_e(&self, o: &str) -> bool {
        self.excl.contains(o)
    }
    fn in_shared(&self, o: &str) -> bool {
        self.desc.contains(o) && !self.excl.contains(o)
    }
    fn is_new(&self, o: &str) -> bool {
        self.new_ops.contains_key(o)
    }
    fn is_actor(&self, o: &str) -> bool {
        o == self.actor
    }
    /// Op that will exist after the batch: live, not removed here, or newly added.
    fn exists_after(&self, o: &str) -> bool {
        self.is_new(o) || (self.g.ops.get(o).is_some_and(|n| n.is_live()) && !self.removed_ops.contains(o))
    }
    fn node_after(&self, o: &str) -> Option<&OperationNode> {
        self.new_ops.get(o).copied().or_else(|| self.g.ops.get(o))
    }
}

/// Checks `m` against the current graph. `Ok(vec![])` means the batch may be applied.
pub fn validate_mutation(g: &ExecutionGraph, m: &MutationBatch) -> Result<Vec<Violation>, GraphError> {
    let actor_node = g.live_op(&m.actor)?;
    if actor_node.status != OpStatus::Running {
        return Err(GraphError::ActorNotRunning(m.actor.clone()));
    }
    let topo = Topology::of(g);
    let desc = topo.descendants(&m.actor);
    let excl = topo.exclusive_descendants_given(&m.actor, &desc);
    let mut cx = Ctx {
        g,
        actor: &m.actor,
        anc: topo.ancestors(&m.actor),
        desc,
        excl,
        new_ops: BTreeMap::new(),
        removed_ops: m.remove_ops.iter().map(String::as_str).collect(),
        out: Vec::new(),
    };

    for op in &m.add_ops {
        if g.ops.contains_key(&op.id) || cx.new_ops.contains_key(op.id.as_str()) {
            cx.flag(Rule::R7, &op.id, "operation id is not fresh");
            continue;
        }
        if op.status != OpStatus::Planned || !op.outputs.is_empty() {
            cx.flag(Rule::R7, &op.id, "new operations must be planned and carry no outputs");
        }
        cx.new_ops.insert(&op.id, op);
    }

    for x in &m.remove_ops {
        match g.ops.get(x) {
            None => cx.flag(Rule::R7, x, "removed operation does not exist"),
            Some(n) if !n.is_live() => cx.flag(Rule::R7, x, "operation already removed"),
            Some(n) => {
                if cx.is_actor(x) {
                    cx.flag(Rule::R3, x, "an operation may not remove itself");
                } else if cx.in_a(x) {
                    cx.flag(Rule::R1, x, "operation is an ancestor of the actor");
                } else if cx.in_shared(x) {
                    cx.flag(Rule::R2, x, "operation is a non-exclusive descendant");
                } else if !cx.in_e(x) {
                    cx.flag(Rule::R3, x, "operation is outside the actor's visible region");
                } else if n.status != OpStatus::Planned {
                    cx.flag(Rule::R3, x, "only planned operations can be removed");
                }
            }
        }
    }

    let removed_conns: BTreeSet<&str> = m.remove_conns.iter().map(String::as_str).collect();
    for id in &m.remove_conns {
        let Some(c) = g.conns.get(id) else {
            cx.flag(Rule::R7, id, "removed connection does not exist");
            continue;
        };
        let (s, t) = (c.source.op.as_str(), c.target.op.as_str());
        if cx.in_e(t) || ((cx.in_e(s) || cx.is_actor(s)) && cx.desc.contains(t)) {
            continue;
        }
        if cx.in_a(t) || cx.is_actor(t) {
            cx.flag(Rule::R1, id, "connection feeds the actor or its ancestors");
        } else if cx.in_shared(t) || cx.in_shared(s) {
            cx.flag(Rule::R2, id, "connection lies among non-exclusive descendants");
        } else {
            cx.flag(Rule::R3, id, "connection is outside the actor's editable region");
        }
    }

    let mut new_conn_ids = BTreeSet::new();
    for c in &m.add_conns {
        if g.conns.contains_key(&c.id) || !new_conn_ids.insert(c.id.as_str()) {
            cx.flag(Rule::R7, &c.id, "connection id is not fresh");
            continue;
        }
        let (s, t) = (c.source.op.as_str(), c.target.op.as_str());
        if !cx.exists_after(s) || !cx.exists_after(t) {
            cx.flag(Rule::R7, &c.id, "connection endpoint does not exist");
            continue;
        }
        if c.payload.is_some() {
            cx.flag(Rule::R7, &c.id, "new connections start empty");
        }
        check_ports(&mut cx, &c.id, &c.source, Some(&c.target));
        let t_ok = cx.in_e(t) || cx.is_new(t);
        if cx.in_a(t) || cx.is_actor(t) {
            cx.flag(Rule::R1, &c.id, "connection would feed the actor or its ancestors");
        } else if cx.in_a(s) {
            if !t_ok {
                cx.flag(Rule::R4, &c.id, "edges from ancestors must end in exclusive descendants");
            }
        } else if cx.is_actor(s) || cx.in_e(s) || cx.is_new(s) {
            if !t_ok {
                if cx.in_shared(t) {
                    cx.flag(Rule::R2, &c.id, "edges into non-exclusive descendants can only be rewired");
                } else {
                    cx.flag(Rule::R3, &c.id, "target is outside the actor's visible region");
                }
            }
        } else if cx.in_shared(s) {
            cx.flag(Rule::R2, &c.id, "source is a non-exclusive descendant");
        } else {
            cx.flag(Rule::R3, &c.id, "source is outside the actor's visible region");
        }
    }

    let mut rewired = BTreeSet::new();
    for r in &m.rewire {
        let Some(c) = g.conns.get(&r.conn) else {
            cx.flag(Rule::R7, &r.conn, "rewired connection does not exist");
            continue;
        };
        if removed_conns.contains(r.conn.as_str()) || !rewired.insert(r.conn.as_str()) {
            cx.flag(Rule::R7, &r.conn, "connection is edited twice in one batch");
            continue;
        }
        let (s, t) = (c.source.op.as_str(), c.target.op.as_str());
        if !(cx.in_e(s) || cx.is_actor(s)) || !cx.desc.contains(t) {
            cx.flag(Rule::R5, &r.conn, "only edges from the actor or its exclusive descendants into its descendants move");
            continue;
        }
        let ns = r.new_source.op.as_str();
        if !(cx.in_e(ns) || cx.in_a(ns) || cx.is_actor(ns) || cx.is_new(ns)) {
            cx.flag(Rule::R5, &r.conn, "new source must be the actor, an ancestor or an exclusive descendant");
            continue;
        }
        if !cx.exists_after(ns) {
            cx.flag(Rule::R7, &r.conn, "new source does not exist");
            continue;
        }
        check_ports(&mut cx, &r.conn, &r.new_source, None);
    }

    // R6 and R7 on the graph as it would look after the batch.
    let post = post_topology(&cx, m);
    if post.has_cycle() {
        cx.flag(Rule::R7, &m.actor, "batch would introduce a cycle");
    } else if !cx.new_ops.is_empty() {
        let post_excl = post.exclusive_descendants(&m.actor);
        let new_ids: Vec<&str> = cx.new_ops.keys().copied().collect();
        for id in new_ids {
            if !post_excl.contains(id) {
                cx.flag(Rule::R6, id, "new operation is not an exclusive descendant of the actor");
            }
        }
    }

    let mut out = cx.out;
    out.sort();
    out.dedup();
    Ok(out)
}

fn check_ports(cx: &mut Ctx<'_>, element: &str, source: &Endpoint, target: Option<&Endpoint>) {
    if let Some(n) = cx.node_after(&source.op) {
        if !n.output_ports.contains(&source.port) {
            let msg = format!("`{}` has no output port `{}`", source.op, source.port);
            cx.flag(Rule::R7, element, msg);
        }
    }
    if let Some(t) = target {
        if let Some(n) = cx.node_after(&t.op) {
            if !n.input_ports.contains(&t.port) {
                let msg = format!("`{}` has no input port `{}`", t.op, t.port);
                cx.flag(Rule::R7, element, msg);
            }
        }
    }
}

fn post_topology(cx: &Ctx<'_>, m: &MutationBatch) -> Topology {
    let removed_conns: BTreeSet<&str> = m.remove_conns.iter().map(String::as_str).collect();
    let rewires: BTreeMap<&str, &str> = m.rewire.iter().map(|r| (r.conn.as_str(), r.new_source.op.as_str())).collect();
    let mut t = Topology::default();
    for op in cx.g.live_ops() {
        if !cx.removed_ops.contains(op.id.as_str()) {
            t.nodes.insert(op.id.clone());
        }
    }
    for id in cx.new_ops.keys() {
        t.nodes.insert(id.to_string());
    }
    for c in cx.g.conns.values() {
        if removed_conns.contains(c.id.as_str()) {
            continue;
        }
        let s = rewires.get(c.id.as_str()).copied().unwrap_or(c.source.op.as_str());
        if t.nodes.contains(s) && t.nodes.contains(&c.target.op) {
            t.add_edge(s, &c.target.op);
        }
    }
    for c in &m.add_conns {
        if t.nodes.contains(&c.source.op) && t.nodes.contains(&c.target.op) {
            t.add_edge(&c.source.op, &c.target.op);
        }
    }
    t
}

enum Undo {
    Op(OpId, Option<OperationNode>),
    Conn(ConnId, Option<Connection>),
}

/// Validates and applies `m` atomically; returns the new step index.
pub fn apply_mutation(g: &mut ExecutionGraph, m: &MutationBatch) -> Result<u64, GraphError> {
    apply_mutation_with_fault(g, m, None)
}

/// Like [`apply_mutation`], but aborts after `fail_after` edits when set.
/// The journal is rolled back on abort, leaving `g` exactly as it was.
#[doc(hidden)]
pub fn apply_mutation_with_fault(g: &mut ExecutionGraph, m: &MutationBatch, fail_after: Option<usize>) -> Result<u64, GraphError> {
    let violations = validate_mutation(g, m)?;
    if !violations.is_empty() {
        return Err(GraphError::ValidationFailed(violations));
    }
    let mut journal: Vec<Undo> = Vec::new();
    match apply_journaled(g, m, fail_after, &mut journal) {
        Ok(()) => {
            g.step += 1;
            Ok(g.step)
        }
        Err(e) => {
            rollback(g, journal);
            Err(e)
        }
    }
}

fn apply_journaled(g: &mut ExecutionGraph, m: &MutationBatch, fail_after: Option<usize>, journal: &mut Vec<Undo>) -> Result<(), GraphError> {
    let mut edits = 0usize;
    let tick = |edits: &mut usize| -> Result<(), GraphError> {
        if fail_after == Some(*edits) {
            return Err(GraphError::InjectedFault(*edits));
        }
        *edits += 1;
        Ok(())
    };

    for x in &m.remove_ops {
        tick(&mut edits)?;
        let old = g.ops.get(x).cloned();
        journal.push(Undo::Op(x.clone(), old));
        g.set_status(x, OpStatus::Removed)?;
        let incident: Vec<ConnId> = g
            .incoming(x)
            .into_iter()
            .chain(g.outgoing(x))
            .map(|c| c.id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for id in incident {
            tick(&mut edits)?;
            if let Some(old) = g.remove_conn(&id) {
                journal.push(Undo::Conn(id, Some(old)));
            }
        }
    }
    for id in &m.remove_conns {
        tick(&mut edits)?;
        if let Some(old) = g.remove_conn(id) {
            journal.push(Undo::Conn(id.clone(), Some(old)));
        }
    }
    for op in &m.add_ops {
        tick(&mut edits)?;
        journal.push(Undo::Op(op.id.clone(), None));
        g.insert_op(op.clone());
    }
    for c in &m.add_conns {
        tick(&mut edits)?;
        let mut c = c.clone();
        c.payload = g.output_of(&c.source).cloned();
        journal.push(Undo::Conn(c.id.clone(), None));
        g.insert_conn(c);
    }
    for r in &m.rewire {
        tick(&mut edits)?;
        if let Some(old) = g.move_source(&r.conn, r.new_source.clone()) {
            journal.push(Undo::Conn(r.conn.clone(), Some(old)));
        }
    }
    Ok(())
}

fn rollback(g: &mut ExecutionGraph, journal: Vec<Undo>) {
    for undo in journal.into_iter().rev() {
        match undo {
            Undo::Op(id, Some(old)) => {
                g.ops.insert(id, old);
            }
            Undo::Op(id, None) => {
                g.ops.remove(&id);
            }
            Undo::Conn(_, Some(old)) => g.insert_conn(old),
            Undo::Conn(id, None) => {
                g.remove_conn(&id);
            }
        }
    }
}
