//! Tree-of-thoughts Game of 24.
//!
//! State payload: `{"steps": [line, ..], "left": ["3", "1/2", ..]}`. A step
//! line reads `a op b = c (left: x y z)`; the `left` list is the remaining
//! numbers after that step. Candidates whose line does not parse are dropped.

use std::collections::BTreeSet;

use num_rational::Rational64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::SchemeError;
use crate::backend::{BackendError, GenRequest, Responder};
use crate::graph::{ExecutionGraph, GraphBuilder, OpStatus, OperationNode, Thought};
use crate::ops::builtins::{cfg_u64, is_void, score_labels, value_map_of, void};
use crate::ops::template::vars;
use crate::ops::{MutationBuilder, OpContext, OpError, OpKind, OpOutput, OpRegistry};

pub type Q = Rational64;

pub const TARGET: i64 = 24;
/// Combining steps needed for four numbers.
pub const LAYERS: usize = 3;

pub fn format_q(q: &Q) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

pub fn parse_q(s: &str) -> Option<Q> {
    let s = s.trim().replace('−', "-");
    match s.split_once('/') {
        Some((n, d)) => {
            let d: i64 = d.trim().parse().ok()?;
            if d == 0 {
                return None;
            }
            Some(Q::new(n.trim().parse().ok()?, d))
        }
        None => {
            if let Ok(i) = s.parse::<i64>() {
                return Some(Q::from_integer(i));
            }
            // Decimal fallback, e.g. "0.5".
            let f: f64 = s.parse().ok()?;
            Q::approximate_float(f)
        }
    }
}

fn join_q(xs: &[Q]) -> String {
    xs.iter().map(format_q).collect::<Vec<_>>().join(" ")
}

/// Every combination of `a` and `b` as `(value, swapped, op)`, where
/// `swapped` means the expression reads `b op a`. Division by zero is skipped.
fn combine(a: Q, b: Q) -> Vec<(Q, bool, char)> {
    let mut out = vec![(a + b, false, '+'), (a - b, false, '-'), (b - a, true, '-'), (a * b, false, '*')];
    if !b.is_zero() {
        out.push((a / b, false, '/'));
    }
    if !a.is_zero() {
        out.push((b / a, true, '/'));
    }
    out
}

/// Exhaustive pairwise search: repeatedly replace two numbers by one
/// combination until a single number remains.
pub fn solve(nums: &[Q]) -> Option<String> {
    let items: Vec<(Q, String)> = nums.iter().map(|q| (*q, format_q(q))).collect();
    solve_items(&items).map(|e| strip_outer(&e).to_string())
}

fn solve_items(items: &[(Q, String)]) -> Option<String> {
    if items.len() == 1 {
        return (items[0].0 == Q::from_integer(TARGET)).then(|| items[0].1.clone());
    }
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let rest: Vec<(Q, String)> = items.iter().enumerate().filter(|(k, _)| *k != i && *k != j).map(|(_, x)| x.clone()).collect();
            let (a, ea) = &items[i];
            let (b, eb) = &items[j];
            for (v, swapped, op) in combine(*a, *b) {
                let (ex, ey) = if swapped { (eb, ea) } else { (ea, eb) };
                let mut next = rest.clone();
                next.push((v, format!("({ex} {op} {ey})")));
                if let Some(e) = solve_items(&next) {
                    return Some(e);
                }
            }
        }
    }
    None
}

pub fn solvable(nums: &[Q]) -> bool {
    solve(nums).is_some()
}

pub fn solvable_ints(nums: &[i64]) -> bool {
    solvable(&nums.iter().map(|&n| Q::from_integer(n)).collect::<Vec<_>>())
}

fn strip_outer(e: &str) -> &str {
    if e.starts_with('(') && e.ends_with(')') {
        // Only strip when the outer pair encloses the whole expression.
        let mut depth = 0;
        for (i, c) in e.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 && i != e.len() - 1 {
                        return e;
                    }
                }
                _ => {}
            }
        }
        return &e[1..e.len() - 1];
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(i64),
    Op(char),
    Open,
    Close,
}

fn tokenize(s: &str) -> Option<Vec<Tok>> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '0'..='9' => {
                let mut n: i64 = 0;
                while let Some(d) = chars.peek().and_then(|c| c.to_digit(10)) {
                    n = n.checked_mul(10)?.checked_add(d as i64)?;
                    chars.next();
                }
                out.push(Tok::Num(n));
            }
            '+' => {
                chars.next();
                out.push(Tok::Op('+'));
            }
            '-' | '−' => {
                chars.next();
                out.push(Tok::Op('-'));
            }
            '*' | '×' | 'x' => {
                chars.next();
                out.push(Tok::Op('*'));
            }
            '/' | '÷' => {
                chars.next();
                out.push(Tok::Op('/'));
            }
            '(' => {
                chars.next();
                out.push(Tok::Open);
            }
            ')' => {
                chars.next();
                out.push(Tok::Close);
            }
            _ => return None,
        }
    }
    Some(out)
}

struct Parser<'a> {
    toks: &'a [Tok],
    at: usize,
    literals: Vec<i64>,
}

impl Parser<'_> {
    fn expr(&mut self) -> Option<Q> {
        let mut v = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.toks.get(self.at) {
            self.at += 1;
            let r = self.term()?;
            v = if *op == '+' { v + r } else { v - r };
        }
        Some(v)
    }

    fn term(&mut self) -> Option<Q> {
        let mut v = self.factor()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.toks.get(self.at) {
            self.at += 1;
            let r = self.factor()?;
            v = if *op == '*' {
                v * r
            } else {
                if r.is_zero() {
                    return None;
                }
                v / r
            };
        }
        Some(v)
    }

    fn factor(&mut self) -> Option<Q> {
        match self.toks.get(self.at)? {
            Tok::Num(n) => {
                self.at += 1;
                self.literals.push(*n);
                Some(Q::from_integer(*n))
            }
            Tok::Open => {
                self.at += 1;
                let v = self.expr()?;
                (self.toks.get(self.at) == Some(&Tok::Close)).then_some(())?;
                self.at += 1;
                Some(v)
            }
            _ => None,
        }
    }
}

/// Evaluates an arithmetic expression, returning its value and literals.
pub fn evaluate(expression: &str) -> Option<(Q, Vec<i64>)> {
    let lhs = expression.split('=').next()?;
    let toks = tokenize(lhs)?;
    let mut p = Parser { toks: &toks, at: 0, literals: Vec::new() };
    let v = p.expr()?;
    (p.at == toks.len()).then_some((v, p.literals))
}

/// True iff `expression` uses each of `numbers` exactly once, no other
/// numbers, and equals 24 exactly. Text after `=` is ignored.
pub fn go24_check(numbers: &[i64], expression: &str) -> bool {
    let Some((v, mut lits)) = evaluate(expression) else { return false };
    let mut want = numbers.to_vec();
    lits.sort_unstable();
    want.sort_unstable();
    lits == want && v == Q::from_integer(TARGET)
}

/// A parsed step line.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub a: Q,
    pub op: char,
    pub b: Q,
    pub result: Q,
    pub left: Vec<Q>,
}

pub fn parse_step(line: &str) -> Option<Step> {
    let (calc, rest) = line.split_once("(left:")?;
    let left = rest.trim().trim_end_matches(')').split_whitespace().map(parse_q).collect::<Option<Vec<_>>>()?;
    let (lhs, rhs) = calc.split_once('=')?;
    let toks: Vec<&str> = lhs.split_whitespace().collect();
    let [a, op, b] = toks.as_slice() else { return None };
    let op = match *op {
        "+" => '+',
        "-" | "−" => '-',
        "*" | "×" | "x" => '*',
        "/" | "÷" => '/',
        _ => return None,
    };
    Some(Step { a: parse_q(a)?, op, b: parse_q(b)?, result: parse_q(rhs)?, left })
}

pub fn format_step(a: Q, op: char, b: Q, result: Q, left: &[Q]) -> String {
    format!("{} {op} {} = {} (left: {})", format_q(&a), format_q(&b), format_q(&result), join_q(left))
}

/// Every distinct next step from `nums`, solvable ones first, truncated to `limit`.
pub fn propose_steps(nums: &[Q], limit: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for i in 0..nums.len() {
        for j in i + 1..nums.len() {
            for (v, swapped, op) in combine(nums[i], nums[j]) {
                let (x, y) = if swapped { (nums[j], nums[i]) } else { (nums[i], nums[j]) };
                let mut left: Vec<Q> = nums.iter().enumerate().filter(|(k, _)| *k != i && *k != j).map(|(_, q)| *q).collect();
                left.push(v);
                left.sort();
                if !seen.insert(left.clone()) {
                    continue;
                }
                let line = format_step(x, op, y, v, &left);
                if solvable(&left) {
                    good.push(line);
                } else {
                    bad.push(line);
                }
            }
        }
    }
    good.extend(bad);
    good.truncate(limit);
    good
}

/// Rebuilds one expression over `numbers` from step lines by replacing each
/// step's operands with the expressions that produced them.
pub fn back_substitute(numbers: &[i64], steps: &[String]) -> Option<String> {
    let mut pool: Vec<(Q, String)> = numbers.iter().map(|&n| (Q::from_integer(n), n.to_string())).collect();
    for line in steps {
        let s = parse_step(line)?;
        let ia = pool.iter().position(|(v, _)| *v == s.a)?;
        let (_, ea) = pool.remove(ia);
        let ib = pool.iter().position(|(v, _)| *v == s.b)?;
        let (_, eb) = pool.remove(ib);
        let value = match s.op {
            '+' => s.a + s.b,
            '-' => s.a - s.b,
            '*' => s.a * s.b,
            _ if s.b.is_zero() => return None,
            _ => s.a / s.b,
        };
        pool.push((value, format!("({ea} {} {eb})", s.op)));
    }
    let [(_, e)] = pool.as_slice() else { return None };
    Some(strip_outer(e).to_string())
}

/// Test double answering the propose, value and last-step prompts by exhaustive search.
#[derive(Debug, Clone, Copy, Default)]
pub struct Go24Oracle;

fn last_line_after<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().rev().find_map(|l| l.trim().strip_prefix(prefix)).map(str::trim)
}

impl Responder for Go24Oracle {
    fn respond(&self, req: &GenRequest, _: u32) -> Result<String, BackendError> {
        let user = req.user_text();
        let unrecognized = || BackendError::Unrecognized("not a game-of-24 prompt".into());
        if user.contains("Possible next steps:") {
            let nums = last_line_after(user, "Input:")
                .and_then(|s| s.split_whitespace().map(parse_q).collect::<Option<Vec<_>>>())
                .ok_or_else(unrecognized)?;
            let system = req.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
            let limit = system
                .split("exactly ")
                .skip(1)
                .find_map(|s| s.split_whitespace().next().and_then(|w| w.parse().ok()))
                .unwrap_or(8);
            Ok(propose_steps(&nums, limit).join("\n"))
        } else if user.contains("give a judgement") {
            let input = last_line_after(user, "Input:").ok_or_else(unrecognized)?;
            let answer = last_line_after(user, "Answer:").ok_or_else(unrecognized)?;
            let numbers = input.split_whitespace().map(|s| s.parse().ok()).collect::<Option<Vec<i64>>>().ok_or_else(unrecognized)?;
            Ok(if go24_check(&numbers, answer) { "sure" } else { "impossible" }.to_string())
        } else if user.contains("Evaluate if given numbers can reach 24") {
            let last = user.lines().rev().find(|l| !l.trim().is_empty()).ok_or_else(unrecognized)?;
            let nums = last.split_whitespace().map(parse_q).collect::<Option<Vec<_>>>().ok_or_else(unrecognized)?;
            Ok(if solvable(&nums) { "sure" } else { "impossible" }.to_string())
        } else {
            Err(unrecognized())
        }
    }
}

/// Hyperparameters of the Game-of-24 scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Go24Hp {
    pub num_examples: u32,
    /// Value samples per layer.
    pub samples: [u32; 3],
    /// Candidates kept after the first and second layer; the last keeps one.
    pub keep_top: [u32; 2],
}

impl Default for Go24Hp {
    fn default() -> Self {
        Go24Hp { num_examples: 8, samples: [3, 3, 3], keep_top: [5, 5] }
    }
}

impl Go24Hp {
    pub fn validate(&self) -> Result<(), SchemeError> {
        let bad = |m: String| Err(SchemeError::InvalidHyperparams(m));
        if !(4..=12).contains(&self.num_examples) {
            return bad(format!("num_examples {} outside [4, 12]", self.num_examples));
        }
        if let Some(s) = self.samples.iter().find(|s| !(1..=5).contains(*s)) {
            return bad(format!("samples {s} outside [1, 5]"));
        }
        let hi = self.num_examples.min(7);
        if let Some(k) = self.keep_top.iter().find(|k| !(2..=hi).contains(*k)) {
            return bad(format!("keep_top {k} outside [2, {hi}]"));
        }
        Ok(())
    }

    fn ports_at(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.keep_top[layer - 1] as usize
        }
    }
}

fn ports(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn port_refs(p: &[String]) -> Vec<&str> {
    p.iter().map(String::as_str).collect()
}

pub fn validate_instance(numbers: &[i64]) -> Result<(), SchemeError> {
    if numbers.len() != 4 || numbers.iter().any(|n| !(1..=13).contains(n)) {
        return Err(SchemeError::InvalidInstance(format!("expected four integers in 1..13, got {numbers:?}")));
    }
    Ok(())
}

/// Initial graph: one `go24_expand` holding the instance. Each layer grows
/// the propose, value and filter ops of the next combining step at runtime.
pub fn build_tot_go24(numbers: &[i64], hp: &Go24Hp) -> Result<ExecutionGraph, SchemeError> {
    validate_instance(numbers)?;
    hp.validate()?;
    let mut b = GraphBuilder::new();
    let outs = ports("c", 1);
    b.op("go24_expand", json!({"layer": 0, "numbers": numbers, "hp": hp}), &[], &port_refs(&outs));
    Ok(b.build())
}

fn hp_of(node: &OperationNode) -> Result<Go24Hp, OpError> {
    serde_json::from_value(node.config.get("hp").cloned().unwrap_or(Value::Null)).map_err(|e| OpError::MalformedConfig(format!("hp: {e}")))
}

fn numbers_of(node: &OperationNode) -> Result<Vec<i64>, OpError> {
    serde_json::from_value(node.config.get("numbers").cloned().unwrap_or(Value::Null)).map_err(|e| OpError::MalformedConfig(format!("numbers: {e}")))
}

fn left_of(payload: &Value) -> Option<Vec<Q>> {
    payload.get("left")?.as_array()?.iter().map(|v| v.as_str().and_then(parse_q)).collect()
}

/// Spreads the surviving candidates on ports `c*` and adds the next layer.
pub struct Go24Expand;

impl OpKind for Go24Expand {
    fn name(&self) -> &str {
        "go24_expand"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], _: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let layer = cfg_u64(node, "layer", 0)? as usize;
        let hp = hp_of(node)?;
        let numbers = numbers_of(node)?;
        let candidates: Vec<Value> = if layer == 0 {
            vec![json!({"steps": [], "left": numbers.iter().map(|n| n.to_string()).collect::<Vec<_>>()})]
        } else {
            inputs
                .iter()
                .filter_map(|t| t.payload.get("kept").and_then(Value::as_array))
                .flatten()
                .filter(|p| !is_void(p))
                .map(|p| json!({"steps": p["steps"], "left": p["left"]}))
                .collect()
        };
        let mut out = OpOutput::default();
        for (i, p) in node.output_ports.iter().enumerate() {
            out.outputs.insert(p.clone(), candidates.get(i).cloned().unwrap_or_else(void));
        }
        let live = candidates.len().min(node.output_ports.len());
        let actor = node.id.clone();
        let mut mb = MutationBuilder::new(&actor);
        if live == 0 || layer >= LAYERS {
            let a = mb.add_op("go24_answer", json!({"numbers": numbers, "samples": hp.samples[LAYERS - 1]}), &["in"], &["out"]);
            mb.connect(&actor, &node.output_ports[0], &a, "in");
            return Ok(out.with_mutation(mb.build()));
        }
        let last = layer + 1 == LAYERS;
        let k = if last { 1 } else { hp.keep_top[layer] };
        let filter = mb.add_op("filter_keep_top", json!({"k": k, "group_by": "_source"}), &["in"], &["out", "best"]);
        let props = ports("p", hp.num_examples as usize);
        for cport in &node.output_ports[..live] {
            let prop = mb.add_op("go24_propose", json!({"num_examples": hp.num_examples}), &["in"], &port_refs(&props));
            mb.connect(&actor, cport, &prop, "in");
            for pport in &props {
                for s in 0..hp.samples[layer] {
                    let v = mb.add_op("go24_value", json!({"sample_offset": s}), &["in"], &["out"]);
                    mb.connect(&prop, pport, &v, "in");
                    mb.connect(&v, "out", &filter, "in");
                }
            }
        }
        if last {
            let a = mb.add_op("go24_answer", json!({"numbers": numbers, "samples": hp.samples[LAYERS - 1]}), &["in"], &["out"]);
            mb.connect(&filter, "best", &a, "in");
        } else {
            let next_ports = ports("c", hp.ports_at(layer + 1));
            let next = mb.add_op("go24_expand", json!({"layer": layer + 1, "numbers": numbers, "hp": hp}), &["in"], &port_refs(&next_ports));
            mb.connect(&filter, "out", &next, "in");
        }
        Ok(out.with_mutation(mb.build()))
    }
}

/// Asks the backend for next steps; one candidate per output port.
pub struct Go24Propose;

impl OpKind for Go24Propose {
    fn name(&self) -> &str {
        "go24_propose"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let input = inputs.first().map(|t| &t.payload).filter(|p| !is_void(p));
        let mut out = OpOutput::default();
        let mut candidates = Vec::new();
        if let Some(parent) = input {
            let left = left_of(parent).ok_or_else(|| OpError::MalformedInput("candidate without `left`".into()))?;
            let steps: Vec<Value> = parent.get("steps").and_then(Value::as_array).cloned().unwrap_or_default();
            let v = vars([("num_examples", cfg_u64(node, "num_examples", 8)?.to_string()), ("input_list", join_q(&left))]);
            let text = ctx.generate_from("go24_propose", &v, 1, 0, 0.0)?.remove(0);
            for line in text.lines().map(str::trim) {
                match parse_step(line) {
                    Some(s) if s.left.len() + 1 == left.len() => {
                        let mut st = steps.clone();
                        st.push(json!(line));
                        candidates.push((st, s.left));
                    }
                    _ => {}
                }
            }
        }
        for (i, p) in node.output_ports.iter().enumerate() {
            let v = match candidates.get(i) {
                Some((steps, left)) => json!({
                    "steps": steps,
                    "left": left.iter().map(format_q).collect::<Vec<_>>(),
                    "_source": Thought::id_for(&node.id, p),
                }),
                None => void(),
            };
            out.outputs.insert(p.clone(), v);
        }
        Ok(out)
    }
}

/// One value sample of a candidate; void in, void out.
pub struct Go24Value;

impl OpKind for Go24Value {
    fn name(&self) -> &str {
        "go24_value"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let payload = inputs.first().map(|t| t.payload.clone()).unwrap_or_else(void);
        if is_void(&payload) {
            return Ok(OpOutput::broadcast(&node.output_ports, payload));
        }
        let left = left_of(&payload).ok_or_else(|| OpError::MalformedInput("candidate without `left`".into()))?;
        let texts = ctx.generate_from("go24_value", &vars([("left", join_q(&left))]), 1, cfg_u64(node, "sample_offset", 0)? as u32, 0.0)?;
        let mut scored = payload;
        scored["_value"] = json!(score_labels(&texts, &value_map_of(node)?, 0.0));
        Ok(OpOutput::broadcast(&node.output_ports, scored))
    }
}

/// Rebuilds the final expression, checks it locally, then asks the judge.
/// Emits the expression only when both accept.
pub struct Go24Answer;

impl OpKind for Go24Answer {
    fn name(&self) -> &str {
        "go24_answer"
    }
    fn execute(&self, node: &OperationNode, inputs: &[Thought], ctx: &mut OpContext<'_>) -> Result<OpOutput, OpError> {
        let numbers = numbers_of(node)?;
        let samples = cfg_u64(node, "samples", 1)?.max(1) as u32;
        let best = inputs.first().map(|t| &t.payload).filter(|p| !is_void(p));
        let steps: Vec<String> = best
            .and_then(|p| p.get("steps"))
            .and_then(|s| serde_json::from_value(s.clone()).ok())
            .unwrap_or_default();
        let expr = back_substitute(&numbers, &steps).filter(|e| go24_check(&numbers, e));
        let answer = match expr {
            Some(e) => {
                let input = numbers.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
                let v = vars([("left", input), ("answer", format!("{e} = {TARGET}"))]);
                let texts = ctx.generate_from("go24_value_last_step", &v, samples, 0, 0.0)?;
                let map = value_map_of(node)?;
                let sure = map.get("sure").copied().unwrap_or(20.0);
                (score_labels(&texts, &map, 0.0) >= samples as f64 * sure / 2.0).then_some(e)
            }
            None => None,
        };
        let payload = json!({"numbers": numbers, "answer": answer, "solved": answer.is_some()});
        Ok(OpOutput::broadcast(&node.output_ports, payload))
    }
}

pub fn register(r: &mut OpRegistry) {
    r.register(Go24Expand);
    r.register(Go24Propose);
    r.register(Go24Value);
    r.register(Go24Answer);
}

/// The emitted expression of a finished run, if any.
pub fn final_answer(g: &ExecutionGraph) -> Option<String> {
    g.live_ops()
        .filter(|o| o.kind == "go24_answer" && o.status == OpStatus::Done)
        .find_map(|o| o.outputs.get("out").and_then(|t| g.thought(t)))
        .and_then(|t| t.payload.get("answer").and_then(Value::as_str).map(str::to_string))
}

/// 1 for a correct expression, 0 otherwise.
pub fn score(numbers: &[i64], answer: Option<&str>) -> f64 {
    f64::from(u8::from(answer.is_some_and(|a| go24_check(numbers, a))))
}

/// Every 4-number multiset over 1..=13 with its solvability.
pub fn all_instances() -> Vec<([i64; 4], bool)> {
    let mut out = Vec::new();
    for a in 1..=13 {
        for b in a..=13 {
            for c in b..=13 {
                for d in c..=13 {
                    let n = [a, b, c, d];
                    out.push((n, solvable_ints(&n)));
                }
            }
        }
    }
    out
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_step(self.a, self.op, self.b, self.result, &self.left))
    }
}
