//! Sorting lists of digits: graph-of-thoughts and tree-of-thoughts pipelines.
//!
//! Every list payload carries `reference`, the multiset it must contain, so
//! the mistake scorer can run locally at each stage.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::SchemeError;
use crate::backend::{BackendError, GenRequest, Responder};
use crate::canonical::seed_from;
use crate::graph::{ExecutionGraph, GraphBuilder, OpId};
use crate::ops::parse::{format_list, list_from_value, parse_list};

pub const LIST_LEN: usize = 128;
pub const CHUNKS: usize = 8;

/// Adjacent inversions in `list` plus, per value, the absolute difference
/// between its count in `reference` and in `list`. Zero iff `list` is the
/// sorted permutation of `reference`.
pub fn count_mistakes(reference: &[i64], list: &[i64]) -> usize {
    let inversions = list.windows(2).filter(|w| w[0] > w[1]).count();
    let mut diff: BTreeMap<i64, i64> = BTreeMap::new();
    for x in reference {
        *diff.entry(*x).or_default() += 1;
    }
    for x in list {
        *diff.entry(*x).or_default() -= 1;
    }
    inversions + diff.values().map(|d| d.unsigned_abs() as usize).sum::<usize>()
}

pub fn validate_instance(list: &[i64]) -> Result<(), SchemeError> {
    if list.is_empty() || list.iter().any(|d| !(0..=9).contains(d)) {
        return Err(SchemeError::InvalidInstance("sorting input must be a non-empty list of digits".into()));
    }
    Ok(())
}

/// Seeded uniform digits.
pub fn random_instance(seed: u64, len: usize) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..10)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GotSortHp {
    pub sort_branches: u32,
    pub merge_branches: u32,
    pub improve_rounds: u32,
}

impl Default for GotSortHp {
    fn default() -> Self {
        GotSortHp { sort_branches: 5, merge_branches: 10, improve_rounds: 1 }
    }
}

fn in_range(name: &str, v: u32, lo: u32, hi: u32) -> Result<(), SchemeError> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(SchemeError::InvalidHyperparams(format!("{name} {v} outside [{lo}, {hi}]")))
    }
}

impl GotSortHp {
    pub fn validate(&self) -> Result<(), SchemeError> {
        in_range("sort_branches", self.sort_branches, 1, 10)?;
        in_range("merge_branches", self.merge_branches, 5, 25)?;
        in_range("improve_rounds", self.improve_rounds, 1, 3)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TotSortHp {
    pub num_branches: u32,
    pub improvement_levels: u32,
}

impl Default for TotSortHp {
    fn default() -> Self {
        TotSortHp { num_branches: 20, improvement_levels: 4 }
    }
}

impl TotSortHp {
    pub fn validate(&self) -> Result<(), SchemeError> {
        in_range("num_branches", self.num_branches, 5, 20)?;
        in_range("improvement_levels", self.improvement_levels, 1, 6)
    }
}

fn keep_best(b: &mut GraphBuilder) -> OpId {
    b.op("filter_keep_top", json!({"k": 1}), &["in"], &["out", "best"])
}

fn generate(b: &mut GraphBuilder, offset: u32) -> OpId {
    b.op("generate", json!({"template": "sort_generate", "parse": "list", "score": "mistakes", "sample_offset": offset}), &["in"], &["out"])
}

fn improve(b: &mut GraphBuilder, offset: u32) -> OpId {
    b.op("improve", json!({"rounds": 1, "score": "mistakes", "sample_offset": offset}), &["in"], &["out"])
}

fn source(b: &mut GraphBuilder, list: &[i64]) -> OpId {
    b.op("source", json!({"payload": {"list": list, "reference": list}}), &[], &["out"])
}

/// Split into 8 chunks, sort each `sort_branches` times and keep the best,
/// merge neighbours `merge_branches` times per pair over three stages, then
/// `improve_rounds` sequential repairs each followed by keep-best.
pub fn build_got_sorting(list: &[i64], hp: &GotSortHp) -> Result<ExecutionGraph, SchemeError> {
    validate_instance(list)?;
    hp.validate()?;
    let mut b = GraphBuilder::new();
    let src = source(&mut b, list);
    let parts: Vec<String> = (0..CHUNKS).map(|i| format!("p{i}")).collect();
    let part_refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    let split = b.op("split", json!({"parts": CHUNKS}), &["in"], &part_refs);
    b.connect(&src, "out", &split, "in");
    let mut level: Vec<OpId> = Vec::new();
    for p in &parts {
        let best = keep_best(&mut b);
        for i in 0..hp.sort_branches {
            let g = generate(&mut b, i);
            b.connect(&split, p, &g, "in");
            b.connect(&g, "out", &best, "in");
        }
        level.push(best);
    }
    while level.len() > 1 {
        let mut next = Vec::new();
        for pair in level.chunks(2) {
            let best = keep_best(&mut b);
            for i in 0..hp.merge_branches {
                let a = b.op("aggregate", json!({"score": "mistakes", "sample_offset": i}), &["in"], &["out"]);
                b.connect(&pair[0], "best", &a, "in");
                b.connect(&pair[1], "best", &a, "in");
                b.connect(&a, "out", &best, "in");
            }
            next.push(best);
        }
        level = next;
    }
    let mut best = level.remove(0);
    for r in 0..hp.improve_rounds {
        let imp = improve(&mut b, r);
        let keep = keep_best(&mut b);
        b.connect(&best, "best", &imp, "in");
        b.connect(&best, "best", &keep, "in");
        b.connect(&imp, "out", &keep, "in");
        best = keep;
    }
    Ok(b.build())
}

/// `num_branches` sorts and keep-best, then `improvement_levels` rounds of
/// `num_branches` repairs of the current best and keep-best over those and it.
pub fn build_tot_sorting(list: &[i64], hp: &TotSortHp) -> Result<ExecutionGraph, SchemeError> {
    validate_instance(list)?;
    hp.validate()?;
    let mut b = GraphBuilder::new();
    let src = source(&mut b, list);
    let mut best = keep_best(&mut b);
    for i in 0..hp.num_branches {
        let g = generate(&mut b, i);
        b.connect(&src, "out", &g, "in");
        b.connect(&g, "out", &best, "in");
    }
    for level in 0..hp.improvement_levels {
        let keep = keep_best(&mut b);
        b.connect(&best, "best", &keep, "in");
        for i in 0..hp.num_branches {
            let imp = improve(&mut b, level * hp.num_branches + i);
            b.connect(&best, "best", &imp, "in");
            b.connect(&imp, "out", &keep, "in");
        }
        best = keep;
    }
    Ok(b.build())
}

/// Sorted list emitted by the pipeline's final keep-best.
pub fn final_list(g: &ExecutionGraph) -> Option<Vec<i64>> {
    g.sink_outputs().into_iter().find_map(|t| t.payload.get("list").and_then(list_from_value))
}

/// Sorts perfectly, then drops each element with probability `drop_p`,
/// seeded by the prompt, the sample ordinal and `seed`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SortOracle {
    pub drop_p: f64,
    pub seed: u64,
}

impl SortOracle {
    pub fn perfect() -> Self {
        SortOracle::default()
    }

    pub fn noisy(drop_p: f64, seed: u64) -> Self {
        SortOracle { drop_p, seed }
    }
}

fn last_list_after(text: &str, prefix: &str) -> Option<Vec<i64>> {
    text.lines().rev().find_map(|l| l.trim().strip_prefix(prefix)).and_then(parse_list)
}

impl Responder for SortOracle {
    fn respond(&self, req: &GenRequest, ordinal: u32) -> Result<String, BackendError> {
        let user = req.user_text();
        let unrecognized = || BackendError::Unrecognized("not a sorting prompt".into());
        let mut list = if user.contains("Merge the following") {
            let a = last_list_after(user, "1:").ok_or_else(unrecognized)?;
            let b = last_list_after(user, "2:").ok_or_else(unrecognized)?;
            [a, b].concat()
        } else if user.contains("Incorrectly Sorted:") || user.contains("Sort the following list") {
            last_list_after(user, "Input:").ok_or_else(unrecognized)?
        } else {
            return Err(unrecognized());
        };
        list.sort_unstable();
        if self.drop_p > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[&req.prompt_hash(), &ordinal.to_string(), &self.seed.to_string()]));
            list.retain(|_| !rng.random_bool(self.drop_p));
        }
        Ok(format_list(&list))
    }
}

/// Mistakes of a list payload against its reference.
pub fn payload_mistakes(v: &Value) -> Option<usize> {
    let list = v.get("list").and_then(list_from_value)?;
    let reference = v.get("reference").and_then(list_from_value)?;
    Some(count_mistakes(&reference, &list))
}
