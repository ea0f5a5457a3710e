//! Built-in operation kinds.
//!
//! Payload conventions: `_value` holds a numeric score, `_void` marks an empty
//! slot, list payloads use `list` (and `reference`, the ground-truth multiset
//! the list should contain). A `list` key also exposes `{input_list}` and
//! `{length_input_list}` to templates.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::parse::{extract_json_object, format_list, list_from_value, parse_answer, parse_label, parse_list, render_value};
use super::{MutationBuilder, OpContext, OpError, OpKind, OpOutput, OpRegistry};
use crate::graph::{OperationNode, Thought};
use crate::schemes::sorting::count_mistakes;

pub fn register(r: &mut OpRegistry) {
    r.register(Source);
    r.register(Identity);
    r.register(Generate);
    r.register(Score);
    r.register(FilterKeepTop);
    r.register(Split);
    r.register(Aggregate);
    r.register(Improve);
    r.register(Expand);
    r.register(Join);
}

pub(crate) fn cfg_u64(node: &OperationNode, key: &str, default: u64) -> Result<u64, OpError> {
    match node.config.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_u64().ok_or_else(|| OpError::MalformedConfig(format!("`{key}` must be a non-negative integer"))),
    }
}

pub(crate) fn cfg_f64(node: &OperationNode, key: &str, default: f64) -> Result<f64, OpError> {
    match node.config.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| OpError::MalformedConfig(format!("`{key}` must be a number"))),
    }
}

pub(crate) fn cfg_str<'a>(node: &'a OperationNode, key: &str, default: &'a str) -> Result<&'a str, OpError> {
    match node.config.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_str().ok_or_else(|| OpError::MalformedConfig(format!("`{key}` must be a string"))),
    }
}

pub fn is_void(v: &Value) -> bool {
    v.get("_void").and_then(Value::as_bool).unwrap_or(false)
}

pub fn void() -> Value {
    json!({"_void": true})
}

fn live_inputs(inputs: &[Thought]) -> impl Iterator<Item = &Thought> {
    inputs.iter().filter(|t| !is_void(&t.payload))
}

/// Template variables from input payloads (later inputs win), then config `vars`.
fn template_vars(node: &OperationNode, inputs: &[Thought]) -> BTreeMap<String, String> {
    let mut vars = BTreeMap::new();
    for t in live_inputs(inputs) {
        if let Value::Object(m) = &t.payload {
            for (k, v) in m.iter().filter(|(k, _)| !k.starts_with('_')) {
                vars.insert(k.clone(), render_value(v));
            }
            if let Some(xs) = m.get("list").and_then(list_from_value) {
                vars.insert("input_list".into(), format_list(&xs));
                vars.insert("length_input_list".into(), xs.len().to_string());
            }
        }
    }
    if let Some(Value::Object(m)) = node.config.get("vars") {
        for (k, v) in m {
            vars.insert(k.clone(), render_value(v));
        }
    }
    vars
}

fn reference_of(payload: &Value) -> Option<Vec<i64>> {
    payload.get("reference").and_then(list_from_value).or_else(|| payload.get("list").and_then(list_from_value))
}

fn list_payload(list: Vec<i64>, reference: Vec<i64>, score: &str) -> Result<Value, OpError> {
    let mut v = json!({"list": list, "reference": reference});
    match score {
        "" | "none" => {}
        "mistakes" => v["_value"] = json!(-(count_mistakes(&reference, &list) as f64)),
        other => return Err(OpError::MalformedConfig(format!("unknown scorer `{other}`"))),
    }
    Ok(v)
}

/// Emits `config.payload` on every port.
pub struct Source;

impl OpKind for Source {
    fn name(&self) -> &str {
        "source"
    }
    fn execute(&self, node: &OperationNode, _: &[Thought], _: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let payload = node.config.get("payload").cloned().unwrap_or(Value::Null);
        Ok(OpOutput::broadcast(&node.output_ports, payload))
    }
}

/// First input payload on every port.
pub struct Identity;

impl OpKind for Identity {
    fn name(&self) -> &str {
        "identity"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], _: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let payload = inputs.first().map(|t| t.payload.clone()).unwrap_or(Value::Null);
        Ok(OpOutput::broadcast(&node.output_ports, payload))
    }
}

/// Renders `template` and samples `n` completions.
///
/// Config: `template`, `n` (1), `temperature` (0), `sample_offset` (0),
/// `vars`, `parse` (`text` | `list` | `answer`), `score` (`mistakes`).
pub struct Generate;

impl OpKind for Generate {
    fn name(&self) -> &str {
        "generate"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let template = cfg_str(node, "template", "")?;
        if template.is_empty() {
            return Err(OpError::MalformedConfig("`template` is required".into()));
        }
        let n = cfg_u64(node, "n", 1)? as u32;
        if n == 0 {
            return Err(OpError::MalformedConfig("`n` must be at least 1".into()));
        }
        let parse = cfg_str(node, "parse", "text")?;
        let score = cfg_str(node, "score", "")?;
        if parse == "list" && n != 1 {
            return Err(OpError::MalformedConfig("list parsing needs n = 1".into()));
        }
        let vars = template_vars(node, inputs);
        let texts = ctx.generate_from(template, &vars, n, cfg_u64(node, "sample_offset", 0)? as u32, cfg_f64(node, "temperature", 0.0)?)?;
        let mut payload = match node.config.get("vars") {
            Some(Value::Object(m)) => m.clone(),
            _ => Map::new(),
        };
        match parse {
            "text" | "answer" => {
                if n == 1 {
                    payload.insert("text".into(), json!(texts[0]));
                    if parse == "answer" {
                        payload.insert("answer".into(), json!(parse_answer(&texts[0])));
                    }
                } else {
                    payload.insert("texts".into(), json!(texts));
                }
            }
            "list" => {
                if inputs.is_empty() {
                    return Err(OpError::MalformedInput("list generation needs an input list".into()));
                }
                let reference = live_inputs(inputs).find_map(|t| reference_of(&t.payload)).unwrap_or_default();
                let list = parse_list(&texts[0]).unwrap_or_default();
                if let Value::Object(m) = list_payload(list, reference, score)? {
                    payload.extend(m);
                }
            }
            other => return Err(OpError::MalformedConfig(format!("unknown parse mode `{other}`"))),
        }
        Ok(OpOutput::broadcast(&node.output_ports, Value::Object(payload)))
    }
}

pub fn default_value_map() -> BTreeMap<String, f64> {
    [("sure", 20.0), ("likely", 1.0), ("impossible", 0.001)].into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Sum of mapped labels over `num_samples` classifications.
pub fn score_labels(texts: &[String], value_map: &BTreeMap<String, f64>, default: f64) -> f64 {
    let labels: Vec<&str> = value_map.keys().map(String::as_str).collect();
    texts.iter().map(|t| parse_label(t, &labels).map_or(default, |l| value_map[l])).sum()
}

pub(crate) fn value_map_of(node: &OperationNode) -> Result<BTreeMap<String, f64>, OpError> {
    match node.config.get("value_map") {
        None | Some(Value::Null) => Ok(default_value_map()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| OpError::MalformedConfig(format!("value_map: {e}"))),
    }
}

/// Samples `num_samples` labels and stores their mapped sum under `_value`.
///
/// Config: `template`, `num_samples` (1), `value_map`, `default` (0),
/// `temperature` (0), `sample_offset` (0).
pub struct Score;

impl OpKind for Score {
    fn name(&self) -> &str {
        "score"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let template = cfg_str(node, "template", "")?;
        let samples = cfg_u64(node, "num_samples", 1)? as u32;
        if samples == 0 {
            return Err(OpError::MalformedConfig("`num_samples` must be at least 1".into()));
        }
        let map = value_map_of(node)?;
        let vars = template_vars(node, inputs);
        let texts = ctx.generate_from(template, &vars, samples, cfg_u64(node, "sample_offset", 0)? as u32, cfg_f64(node, "temperature", 0.0)?)?;
        let value = score_labels(&texts, &map, cfg_f64(node, "default", 0.0)?);
        let mut payload = inputs.first().map(|t| t.payload.clone()).unwrap_or_else(|| json!({}));
        if !payload.is_object() {
            payload = json!({"input": payload});
        }
        payload["_value"] = json!(value);
        Ok(OpOutput::broadcast(&node.output_ports, payload))
    }
}

/// Indices of the `k` highest values, in input order; ties favor earlier items.
pub fn keep_top(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// Keeps the `k` best inputs by `_value`.
///
/// With `group_by`, inputs sharing that payload field are one candidate whose
/// value is the sum of theirs. Ports: `out` carries `{"kept": [...]}`, `best`
/// the single highest candidate.
pub struct FilterKeepTop;

impl OpKind for FilterKeepTop {
    fn name(&self) -> &str {
        "filter_keep_top"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], _: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let k = cfg_u64(node, "k", 1)? as usize;
        let group_by = cfg_str(node, "group_by", "")?;
        let mut candidates: Vec<Value> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut groups: BTreeMap<String, usize> = BTreeMap::new();
        for t in live_inputs(inputs) {
            let v = t.payload.get("_value").and_then(Value::as_f64).unwrap_or(0.0);
            let key = if group_by.is_empty() { None } else { t.payload.get(group_by).map(render_value) };
            match key.and_then(|g| groups.get(&g).copied().map(|i| (g, Some(i)))) {
                Some((_, Some(i))) => values[i] += v,
                _ => {
                    if !group_by.is_empty() {
                        if let Some(g) = t.payload.get(group_by) {
                            groups.insert(render_value(g), candidates.len());
                        }
                    }
                    candidates.push(t.payload.clone());
                    values.push(v);
                }
            }
        }
        let kept = keep_top(&values, k);
        let kept_payloads: Vec<Value> = kept
            .iter()
            .map(|&i| {
                let mut p = candidates[i].clone();
                if p.is_object() {
                    p["_value"] = json!(values[i]);
                }
                p
            })
            .collect();
        let best = keep_top(&values, 1).first().map(|&i| kept_payloads[kept.iter().position(|&j| j == i).unwrap_or(0)].clone());
        let mut out = OpOutput::default();
        for p in &node.output_ports {
            let v = match p.as_str() {
                "best" => best.clone().unwrap_or_else(void),
                _ => json!({"kept": kept_payloads}),
            };
            out.outputs.insert(p.clone(), v);
        }
        Ok(out)
    }
}

/// Equal contiguous chunks; earlier chunks take the remainder.
pub fn chunk(list: &[i64], parts: usize) -> Vec<Vec<i64>> {
    let base = list.len() / parts;
    let extra = list.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut at = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push(list[at..at + len].to_vec());
        at += len;
    }
    out
}

/// Splits `list` into `parts` chunks on ports `p0..`. Local; no backend call.
pub struct Split;

impl OpKind for Split {
    fn name(&self) -> &str {
        "split"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], _: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let parts = cfg_u64(node, "parts", 8)? as usize;
        if parts == 0 || node.output_ports.len() != parts {
            return Err(OpError::MalformedConfig(format!("split into {parts} parts needs {parts} output ports")));
        }
        let list = inputs
            .first()
            .and_then(|t| t.payload.get("list"))
            .and_then(list_from_value)
            .ok_or_else(|| OpError::MalformedInput("split needs a `list` payload".into()))?;
        let mut out = OpOutput::default();
        for (port, c) in node.output_ports.iter().zip(chunk(&list, parts)) {
            out.outputs.insert(port.clone(), json!({"list": c, "reference": c}));
        }
        Ok(out)
    }
}

/// Merges exactly two list inputs through the backend.
///
/// Config: `template` (`sort_aggregate`), `sample_offset`, `temperature`, `score`.
pub struct Aggregate;

impl OpKind for Aggregate {
    fn name(&self) -> &str {
        "aggregate"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let lists: Vec<(Vec<i64>, Vec<i64>)> = live_inputs(inputs)
            .map(|t| {
                let l = t.payload.get("list").and_then(list_from_value);
                l.map(|l| (reference_of(&t.payload).unwrap_or_else(|| l.clone()), l))
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| OpError::MalformedInput("aggregate inputs need `list` payloads".into()))?;
        if lists.len() != 2 {
            return Err(OpError::MalformedInput(format!("aggregate needs exactly 2 inputs, got {}", lists.len())));
        }
        let (r1, l1) = &lists[0];
        let (r2, l2) = &lists[1];
        let vars = super::template::vars([
            ("input1", format_list(l1)),
            ("input2", format_list(l2)),
            ("length_input1", l1.len().to_string()),
            ("length_merged", (l1.len() + l2.len()).to_string()),
        ]);
        let template = cfg_str(node, "template", "sort_aggregate")?;
        let texts = ctx.generate_from(template, &vars, 1, cfg_u64(node, "sample_offset", 0)? as u32, cfg_f64(node, "temperature", 0.0)?)?;
        let merged = parse_list(&texts[0]).unwrap_or_default();
        let reference: Vec<i64> = r1.iter().chain(r2).copied().collect();
        let payload = list_payload(merged, reference, cfg_str(node, "score", "")?)?;
        Ok(OpOutput::broadcast(&node.output_ports, payload))
    }
}

/// Applies `rounds` sequential backend repairs to a list.
///
/// Config: `template` (`sort_improve`), `rounds` (1), `sample_offset`, `temperature`, `score`.
pub struct Improve;

impl OpKind for Improve {
    fn name(&self) -> &str {
        "improve"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let input = live_inputs(inputs).next().ok_or_else(|| OpError::MalformedInput("improve needs an input".into()))?;
        let mut current = input
            .payload
            .get("list")
            .and_then(list_from_value)
            .ok_or_else(|| OpError::MalformedInput("improve needs a `list` payload".into()))?;
        let reference = reference_of(&input.payload).unwrap_or_else(|| current.clone());
        let template = cfg_str(node, "template", "sort_improve")?;
        let offset = cfg_u64(node, "sample_offset", 0)? as u32;
        let temperature = cfg_f64(node, "temperature", 0.0)?;
        for _ in 0..cfg_u64(node, "rounds", 1)? {
            let vars = super::template::vars([
                ("input_list", format_list(&reference)),
                ("length_input_list", reference.len().to_string()),
                ("incorrectly_sorted", format_list(&current)),
            ]);
            let texts = ctx.generate_from(template, &vars, 1, offset, temperature)?;
            if let Some(next) = parse_list(&texts[0]) {
                current = next;
            }
        }
        let payload = list_payload(current, reference, cfg_str(node, "score", "")?)?;
        Ok(OpOutput::broadcast(&node.output_ports, payload))
    }
}

/// Grows a question-decomposition tree.
///
/// Config: `question`, optional `tree` (a decomposition already obtained by an
/// ancestor), `template` (`decomp_understanding`), `leaf_template`
/// (`decomp_closed_book`), `join_template` (`decomp_child_aggregate`).
///
/// Each sub-question becomes a child: another `expand` when the tree
/// decomposes it further, else a `generate` leaf. Children feed one `join`.
/// Connections that left this op are moved to start at the join. An empty or
/// unparseable plan yields a single leaf answering the question directly.
pub struct Expand;

impl OpKind for Expand {
    fn name(&self) -> &str {
        "expand"
    }
    fn execute(&self, node: &OperationNode, _: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let question = cfg_str(node, "question", "")?.to_string();
        let leaf_template = cfg_str(node, "leaf_template", "decomp_closed_book")?.to_string();
        let join_template = cfg_str(node, "join_template", "decomp_child_aggregate")?.to_string();
        let tree: Map<String, Value> = match node.config.get("tree") {
            Some(Value::Object(m)) => m.clone(),
            _ => {
                let template = cfg_str(node, "template", "decomp_understanding")?;
                let vars = super::template::vars([("question", question.clone())]);
                let texts = ctx.generate_from(template, &vars, 1, 0, 0.0)?;
                extract_json_object(&texts[0]).unwrap_or_default()
            }
        };
        let children: Vec<String> = tree
            .get(&question)
            .or_else(|| if tree.len() == 1 { tree.values().next() } else { None })
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default();

        let actor = node.id.clone();
        let mut mb = MutationBuilder::new(&actor);
        let leaf = |mb: &mut MutationBuilder, q: &str| {
            mb.add_op(
                "generate",
                json!({"template": leaf_template, "vars": {"question": q}, "parse": "answer"}),
                &["in"],
                &["out"],
            )
        };
        let sink = if children.is_empty() {
            let l = leaf(&mut mb, &question);
            mb.connect(&actor, "out", &l, "in");
            l
        } else {
            let join = mb.add_op("join", json!({"template": join_template, "question": question}), &["in"], &["out"]);
            let mut child_ids = Vec::new();
            for q in &children {
                let nested = tree.get(q).and_then(Value::as_array).is_some_and(|a| !a.is_empty());
                let id = if nested {
                    mb.add_op(
                        "expand",
                        json!({"question": q, "tree": tree, "leaf_template": leaf_template, "join_template": join_template}),
                        &["in"],
                        &["out"],
                    )
                } else {
                    leaf(&mut mb, q)
                };
                child_ids.push(id);
            }
            for id in &child_ids {
                mb.connect(&actor, "out", id, "in");
            }
            for id in &child_ids {
                mb.connect(id, "out", &join, "in");
            }
            join
        };
        for c in ctx.outgoing() {
            mb.rewire(&c.id, &sink, "out");
        }
        Ok(OpOutput::broadcast(&node.output_ports, json!({"question": question})).with_mutation(mb.build()))
    }
}

/// Answers a question from its children's answers.
pub struct Join;

impl OpKind for Join {
    fn name(&self) -> &str {
        "join"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let question = cfg_str(node, "question", "")?.to_string();
        let context: Vec<String> = live_inputs(inputs)
            .map(|t| {
                let q = t.payload.get("question").map(render_value).unwrap_or_default();
                let a = t.payload.get("answer").map(render_value).unwrap_or_default();
                format!("{q} {a}.")
            })
            .collect();
        let vars = super::template::vars([("context", context.join("\n")), ("question", question.clone())]);
        let template = cfg_str(node, "template", "decomp_child_aggregate")?;
        let texts = ctx.generate_from(template, &vars, 1, 0, 0.0)?;
        let payload = json!({"question": question, "answer": parse_answer(&texts[0]), "text": texts[0]});
        Ok(OpOutput::broadcast(&node.output_ports, payload))
    }
}
