//! Ancestor / descendant / exclusive-descendant regions of an operation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{ExecutionGraph, GraphError, OpId};

/// The three regions that decide what an operation may see and edit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphRegions {
    pub ancestors: BTreeSet<OpId>,
    pub descendants: BTreeSet<OpId>,
    pub exclusive_descendants: BTreeSet<OpId>,
}

/// Plain adjacency over live operations. Parallel connections collapse to one edge.
#[derive(Debug, Clone, Default)]
pub(crate) struct Topology {
    pub nodes: BTreeSet<OpId>,
    pub succ: BTreeMap<OpId, BTreeSet<OpId>>,
    pub pred: BTreeMap<OpId, BTreeSet<OpId>>,
}

impl Topology {
    pub fn of(g: &ExecutionGraph) -> Self {
        let mut t = Topology::default();
        for op in g.live_ops() {
            t.nodes.insert(op.id.clone());
        }
        for c in g.conns.values() {
            if t.nodes.contains(&c.source.op) && t.nodes.contains(&c.target.op) {
                t.add_edge(&c.source.op, &c.target.op);
            }
        }
        t
    }

    pub fn add_edge(&mut self, from: &str, to: &str) {
        self.succ.entry(from.to_string()).or_default().insert(to.to_string());
        self.pred.entry(to.to_string()).or_default().insert(from.to_string());
    }

    fn reach(&self, start: impl IntoIterator<Item = OpId>, forward: bool, blocked: Option<&str>) -> BTreeSet<OpId> {
        let adj = if forward { &self.succ } else { &self.pred };
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<OpId> = start.into_iter().collect();
        while let Some(n) = queue.pop_front() {
            if let Some(next) = adj.get(&n) {
                for m in next {
                    if Some(m.as_str()) == blocked {
                        continue;
                    }
                    if seen.insert(m.clone()) {
                        queue.push_back(m.clone());
                    }
                }
            }
        }
        seen
    }

    pub fn ancestors(&self, o: &str) -> BTreeSet<OpId> {
        let mut a = self.reach([o.to_string()], false, None);
        a.remove(o);
        a
    }

    pub fn descendants(&self, o: &str) -> BTreeSet<OpId> {
        let mut d = self.reach([o.to_string()], true, None);
        d.remove(o);
        d
    }

    /// D(o) minus everything reachable from outside D(o)∪{o} without passing o.
    pub fn exclusive_descendants_given(&self, o: &str, desc: &BTreeSet<OpId>) -> BTreeSet<OpId> {
        let outside: Vec<OpId> = self.nodes.iter().filter(|n| n.as_str() != o && !desc.contains(*n)).cloned().collect();
        let tainted = self.reach(outside, true, Some(o));
        desc.iter().filter(|d| !tainted.contains(*d)).cloned().collect()
    }

    pub fn exclusive_descendants(&self, o: &str) -> BTreeSet<OpId> {
        let d = self.descendants(o);
        self.exclusive_descendants_given(o, &d)
    }

    pub fn has_cycle(&self) -> bool {
        // Kahn's algorithm.
        let mut indeg: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for next in self.succ.values() {
            for m in next {
                if let Some(d) = indeg.get_mut(m.as_str()) {
                    *d += 1;
                }
            }
        }
        let mut queue: VecDeque<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut visited = 0;
        while let Some(n) = queue.pop_front() {
            visited += 1;
            if let Some(next) = self.succ.get(n) {
                for m in next {
                    if let Some(d) = indeg.get_mut(m.as_str()) {
                        *d -= 1;
                        if *d == 0 {
                            queue.push_back(m.as_str());
                        }
                    }
                }
            }
        }
        visited != self.nodes.len()
    }
}

fn require_live(g: &ExecutionGraph, o: &str) -> Result<(), GraphError> {
    g.live_op(o).map(|_| ())
}

pub fn ancestors(g: &ExecutionGraph, o: &str) -> Result<BTreeSet<OpId>, GraphError> {
    require_live(g, o)?;
    Ok(Topology::of(g).ancestors(o))
}

pub fn descendants(g: &ExecutionGraph, o: &str) -> Result<BTreeSet<OpId>, GraphError> {
    require_live(g, o)?;
    Ok(Topology::of(g).descendants(o))
}

pub fn exclusive_descendants(g: &ExecutionGraph, o: &str) -> Result<BTreeSet<OpId>, GraphError> {
    require_live(g, o)?;
    Ok(Topology::of(g).exclusive_descendants(o))
}

pub fn regions(g: &ExecutionGraph, o: &str) -> Result<GraphRegions, GraphError> {
    require_live(g, o)?;
    let t = Topology::of(g);
    let descendants = t.descendants(o);
    let exclusive_descendants = t.exclusive_descendants_given(o, &descendants);
    Ok(GraphRegions { ancestors: t.ancestors(o), descendants, exclusive_descendants })
}

/// The subgraph induced by A(o) ∪ D(o) ∪ {o}, including the thoughts its connections carry.
pub fn visible_subgraph(g: &ExecutionGraph, o: &str) -> Result<ExecutionGraph, GraphError> {
    let r = regions(g, o)?;
    let mut keep: BTreeSet<&str> = r.ancestors.iter().chain(r.descendants.iter()).map(String::as_str).collect();
    keep.insert(o);
    let mut view = ExecutionGraph { step: g.step, ..Default::default() };
    for id in &keep {
        let node = g.op(id)?;
        view.ops.insert(node.id.clone(), node.clone());
        for t in node.outputs.values() {
            if let Some(th) = g.thoughts.get(t) {
                view.thoughts.insert(th.id.clone(), th.clone());
            }
        }
    }
    for c in g.conns.values() {
        if keep.contains(c.source.op.as_str()) && keep.contains(c.target.op.as_str()) {
            view.insert_conn(c.clone());
        }
    }
    Ok(view)
}
