use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cache::CacheStats;
use crate::graph::regions::Topology;
use crate::graph::{ExecutionGraph, OpId};
use crate::ops::OpResult;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OpMetrics {
    pub duration_ms: u64,
    pub cost_usd: f64,
    /// Every sample the op needed came from the cache.
    pub cache_hit: bool,
    pub backend_calls: u64,
    pub start_ms: u64,
    pub finish_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_op: BTreeMap<OpId, OpMetrics>,
    pub wall_ms: u64,
    pub critical_path_ms: u64,
    pub total_cost_usd: f64,
    pub backend_calls: u64,
    pub cache: CacheStats,
}

impl RunMetrics {
    pub(crate) fn record(&mut self, op: &str, r: &OpResult, start_ms: u64, finish_ms: u64) {
        self.per_op.insert(
            op.to_string(),
            OpMetrics {
                duration_ms: r.duration_ms,
                cost_usd: r.cost_usd,
                cache_hit: r.cache.hits > 0 && r.cache.misses == 0,
                backend_calls: r.backend_calls,
                start_ms,
                finish_ms,
            },
        );
        self.total_cost_usd += r.cost_usd;
        self.backend_calls += r.backend_calls;
        self.cache.merge(&r.cache);
    }

    pub(crate) fn finish(&mut self, g: &ExecutionGraph, wall_ms: u64) {
        self.wall_ms = wall_ms;
        let durations = self.per_op.iter().map(|(k, m)| (k.clone(), m.duration_ms)).collect();
        self.critical_path_ms = critical_path(g, &durations);
    }

    pub fn sum_durations_ms(&self) -> u64 {
        self.per_op.values().map(|m| m.duration_ms).sum()
    }
}

/// Longest path over live operations, weighting each op by its duration.
pub fn critical_path(g: &ExecutionGraph, durations: &BTreeMap<OpId, u64>) -> u64 {
    let t = Topology::of(g);
    let mut indeg: BTreeMap<&str, usize> = t.nodes.iter().map(|n| (n.as_str(), t.pred.get(n).map_or(0, |p| p.len()))).collect();
    let mut queue: VecDeque<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut finish: BTreeMap<&str, u64> = BTreeMap::new();
    let mut best = 0;
    while let Some(n) = queue.pop_front() {
        let start = t.pred.get(n).into_iter().flatten().filter_map(|p| finish.get(p.as_str())).max().copied().unwrap_or(0);
        let f = start + durations.get(n).copied().unwrap_or(0);
        best = best.max(f);
        finish.insert(n, f);
        for m in t.succ.get(n).into_iter().flatten() {
            let d = indeg.get_mut(m.as_str()).expect("successor is a node");
            *d -= 1;
            if *d == 0 {
                queue.push_back(m.as_str());
            }
        }
    }
    best
}
