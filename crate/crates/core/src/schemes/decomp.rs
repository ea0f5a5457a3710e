//! Dynamic question decomposition.
//!
//! The initial graph is one `expand` op. Running it asks the backend for a
//! decomposition tree and grows the graph: sub-questions become leaves or
//! nested expands, and a `join` per inner node answers it from its children.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::SchemeError;
use crate::backend::{BackendError, GenRequest, Responder};
use crate::graph::{ExecutionGraph, GraphBuilder, OpStatus};

/// A question with its scripted decomposition tree and answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompInstance {
    pub question: String,
    /// Question to sub-questions; `None` means no fixture was provided.
    pub tree: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
}

impl DecompInstance {
    /// Ops a full run adds: per inner node one join plus one op per child;
    /// an undecomposed root adds a single passthrough leaf.
    pub fn expected_added_ops(&self) -> usize {
        let tree = self.tree.clone().unwrap_or_default();
        let kids = |q: &str| tree.get(q).map_or(0, Vec::len);
        if kids(&self.question) == 0 {
            return 1;
        }
        let mut count = 0;
        let mut stack = vec![self.question.clone()];
        while let Some(q) = stack.pop() {
            if kids(&q) > 0 {
                count += 1 + kids(&q);
                stack.extend(tree[&q].iter().cloned());
            }
        }
        count
    }

    /// Mutation commits a full run performs: one per inner node, or one for the passthrough.
    pub fn expected_commits(&self) -> usize {
        let tree = self.tree.clone().unwrap_or_default();
        let mut count = 0;
        let mut stack = vec![self.question.clone()];
        while let Some(q) = stack.pop() {
            if let Some(kids) = tree.get(&q).filter(|k| !k.is_empty()) {
                count += 1;
                stack.extend(kids.iter().cloned());
            }
        }
        count.max(1)
    }
}

pub fn build_dynamic_decomp(inst: &DecompInstance) -> Result<ExecutionGraph, SchemeError> {
    if inst.tree.is_none() {
        return Err(SchemeError::FixtureMissing(inst.question.clone()));
    }
    let mut b = GraphBuilder::new();
    b.op("expand", json!({"question": inst.question}), &[], &["out"]);
    Ok(b.build())
}

/// Answers the understanding, closed-book and aggregation prompts from a fixture.
#[derive(Debug, Clone)]
pub struct DecompResponder {
    tree: BTreeMap<String, Vec<String>>,
    answers: BTreeMap<String, String>,
}

impl DecompResponder {
    pub fn new(inst: &DecompInstance) -> Self {
        DecompResponder { tree: inst.tree.clone().unwrap_or_default(), answers: inst.answers.clone() }
    }

    /// Several instances served by one backend.
    pub fn merged<'a>(insts: impl IntoIterator<Item = &'a DecompInstance>) -> Self {
        let mut r = DecompResponder { tree: BTreeMap::new(), answers: BTreeMap::new() };
        for i in insts {
            r.tree.extend(i.tree.clone().unwrap_or_default());
            r.answers.extend(i.answers.clone());
        }
        r
    }

    fn answer(&self, q: &str) -> String {
        format!("So the answer is: {}.", self.answers.get(q).map_or("unknown", String::as_str))
    }
}

fn last_after<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().rev().find_map(|l| l.trim().strip_prefix(prefix)).map(str::trim)
}

impl Responder for DecompResponder {
    fn respond(&self, req: &GenRequest, _: u32) -> Result<String, BackendError> {
        let user = req.user_text();
        if user.contains("decomposition tree") {
            let q = last_after(user, "Q:").ok_or_else(|| BackendError::Unrecognized("no question".into()))?;
            // The subtree rooted at q, as question -> sub-questions.
            let mut sub = Map::new();
            let mut stack = vec![q.to_string()];
            while let Some(x) = stack.pop() {
                if let Some(kids) = self.tree.get(&x).filter(|k| !k.is_empty()) {
                    sub.insert(x.clone(), json!(kids));
                    stack.extend(kids.iter().cloned());
                }
            }
            return Ok(format!("{}.", Value::Object(sub)));
        }
        if user.contains("Context:") {
            let lines: Vec<&str> = user.lines().map(str::trim).collect();
            let at = lines.iter().rposition(|l| *l == "Question:").ok_or_else(|| BackendError::Unrecognized("no question".into()))?;
            let q = lines.get(at + 1).copied().unwrap_or("");
            return Ok(self.answer(q));
        }
        if let Some(q) = last_after(user, "Q:") {
            return Ok(self.answer(q));
        }
        Err(BackendError::Unrecognized("not a decomposition prompt".into()))
    }
}

/// Answer of the op that finished last in the chain: the root join, or the passthrough leaf.
pub fn final_answer(g: &ExecutionGraph) -> Option<String> {
    g.sink_outputs().into_iter().find_map(|t| t.payload.get("answer").and_then(Value::as_str).map(str::to_string))
}

pub fn fixture_two_subquestions() -> DecompInstance {
    let q = "Jeremy Theobald and Christopher Nolan share what profession?";
    let a = "What is Jeremy Theobald's profession?";
    let b = "What is Christopher Nolan's profession?";
    DecompInstance {
        question: q.into(),
        tree: Some(BTreeMap::from([(q.into(), vec![a.into(), b.into()])])),
        answers: BTreeMap::from([(q.into(), "producer".into()), (a.into(), "actor and producer".into()), (b.into(), "director and producer".into())]),
    }
}

/// Root with two children, the first of which decomposes again.
pub fn fixture_depth2() -> DecompInstance {
    let q = "Which country is the director of the film that won the 1994 festival prize from?";
    let a = "Who directed the film that won the 1994 festival prize?";
    let a1 = "Which film won the 1994 festival prize?";
    let a2 = "Who directed <1>?";
    let b = "Which country is <1> from?";
    DecompInstance {
        question: q.into(),
        tree: Some(BTreeMap::from([(q.into(), vec![a.into(), b.into()]), (a.into(), vec![a1.into(), a2.into()])])),
        answers: BTreeMap::from([
            (q.into(), "United States".into()),
            (a.into(), "Quentin Tarantino".into()),
            (a1.into(), "Pulp Fiction".into()),
            (a2.into(), "Quentin Tarantino".into()),
            (b.into(), "United States".into()),
        ]),
    }
}

pub fn fixture_empty() -> DecompInstance {
    let q = "What is the capital of France?";
    DecompInstance { question: q.into(), tree: Some(BTreeMap::new()), answers: BTreeMap::from([(q.into(), "Paris".into())]) }
}

pub fn is_finished(g: &ExecutionGraph) -> bool {
    g.live_ops().all(|o| o.status == OpStatus::Done)
}
