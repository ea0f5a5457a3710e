//! Reasoning graph: which thoughts exist and which thoughts influenced them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::regions::Topology;
use super::{ExecutionGraph, OpId, OpStatus, ThoughtId};
use crate::canonical;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningGraph {
    pub thoughts: BTreeSet<ThoughtId>,
    /// `(u, v)`: `u` was an input of the operation that produced `v`.
    pub deps: BTreeSet<(ThoughtId, ThoughtId)>,
    pub producer: BTreeMap<ThoughtId, OpId>,
    pub payloads: BTreeMap<ThoughtId, Value>,
}

#[derive(Serialize)]
struct CanonicalThought<'a> {
    id: &'a str,
    payload: &'a Value,
    producer: &'a str,
    deps: Vec<&'a str>,
}

/// Thoughts carried by connections plus the outputs of finished sinks, with
/// influence edges taken from what each producer consumed.
pub fn derive_reasoning_graph(g: &ExecutionGraph) -> ReasoningGraph {
    let mut rg = ReasoningGraph::default();
    let add = |rg: &mut ReasoningGraph, t: &ThoughtId| {
        if rg.thoughts.insert(t.clone()) {
            if let Some(th) = g.thoughts.get(t) {
                rg.producer.insert(t.clone(), th.meta.producer_op_id.clone());
                rg.payloads.insert(t.clone(), th.payload.clone());
            }
        }
    };
    for c in g.conns.values() {
        if let Some(t) = &c.payload {
            add(&mut rg, t);
        }
    }
    for op in g.ops.values().filter(|o| o.status == OpStatus::Done) {
        for t in op.outputs.values() {
            add(&mut rg, t);
        }
    }
    for op in g.ops.values().filter(|o| o.status == OpStatus::Done) {
        for v in op.outputs.values() {
            for u in &op.consumed {
                if rg.thoughts.contains(u) {
                    rg.deps.insert((u.clone(), v.clone()));
                }
            }
        }
    }
    rg
}

impl ReasoningGraph {
    pub fn len(&self) -> usize {
        self.thoughts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thoughts.is_empty()
    }

    /// Deterministic encoding: ids, payloads, producers and deps only.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (u, v) in &self.deps {
            parents.entry(v.as_str()).or_default().push(u.as_str());
        }
        let list: Vec<CanonicalThought<'_>> = self
            .thoughts
            .iter()
            .map(|t| CanonicalThought {
                id: t,
                payload: self.payloads.get(t).unwrap_or(&Value::Null),
                producer: self.producer.get(t).map(String::as_str).unwrap_or(""),
                deps: parents.remove(t.as_str()).unwrap_or_default(),
            })
            .collect();
        canonical::to_canonical_bytes(&list).expect("reasoning graph serializes")
    }

    pub fn hash(&self) -> String {
        canonical::sha256_hex(&self.canonical_bytes())
    }

    pub fn parents(&self, t: &str) -> Vec<&ThoughtId> {
        self.deps.iter().filter(|(_, v)| v == t).map(|(u, _)| u).collect()
    }

    pub fn children(&self, t: &str) -> Vec<&ThoughtId> {
        self.deps.iter().filter(|(u, _)| u == t).map(|(_, v)| v).collect()
    }

    /// Thoughts that influenced nothing else.
    pub fn leaves(&self) -> BTreeSet<&ThoughtId> {
        let has_child: BTreeSet<&str> = self.deps.iter().map(|(u, _)| u.as_str()).collect();
        self.thoughts.iter().filter(|t| !has_child.contains(t.as_str())).collect()
    }

    pub fn roots(&self) -> BTreeSet<&ThoughtId> {
        let has_parent: BTreeSet<&str> = self.deps.iter().map(|(_, v)| v.as_str()).collect();
        self.thoughts.iter().filter(|t| !has_parent.contains(t.as_str())).collect()
    }

    pub fn is_acyclic(&self) -> bool {
        let mut t = Topology { nodes: self.thoughts.clone(), ..Default::default() };
        for (u, v) in &self.deps {
            t.add_edge(u, v);
        }
        !t.has_cycle()
    }
}
