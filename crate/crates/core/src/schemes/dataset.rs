//! JSONL datasets: one `{id, input, ground_truth?}` object per line.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{decomp, go24, sorting};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub input: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Value>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Blank lines are skipped; ids must be unique.
pub fn parse_jsonl(text: &str) -> Result<Vec<Instance>, DatasetError> {
    let mut out: Vec<Instance> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(line).map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() })?;
        if out.iter().any(|o| o.id == inst.id) {
            return Err(DatasetError::DuplicateId(inst.id));
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn to_jsonl(instances: &[Instance]) -> String {
    instances.iter().map(|i| crate::canonical::to_canonical_string(i).expect("instance serializes") + "\n").collect()
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Instance>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_jsonl(&text)
}

/// `n` distinct multisets drawn from all 1,820, labeled by the exhaustive solver.
pub fn go24_fixtures(seed: u64, n: usize) -> Vec<Instance> {
    let all = go24::all_instances();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, all.len(), n.min(all.len())).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let (nums, solvable) = all[i];
            Instance { id: format!("go24-{}", nums.map(|x| x.to_string()).join("-")), input: json!(nums), ground_truth: Some(json!(solvable)) }
        })
        .collect()
}

/// Seeded uniform digit lists with their sorted form as ground truth.
pub fn sorting_instances(seed: u64, n: usize, len: usize) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let list = sorting::random_instance(crate::canonical::seed_from(&["sorting", &seed.to_string(), &i.to_string()]), len);
            let mut sorted = list.clone();
            sorted.sort_unstable();
            Instance { id: format!("sort-{i:03}"), input: json!(list), ground_truth: Some(json!(sorted)) }
        })
        .collect()
}

/// The shipped decomposition fixtures.
pub fn decomp_fixtures() -> Vec<Instance> {
    [("decomp-two", decomp::fixture_two_subquestions()), ("decomp-depth2", decomp::fixture_depth2()), ("decomp-empty", decomp::fixture_empty())]
        .into_iter()
        .map(|(id, d)| {
            let gt = d.answers.get(&d.question).cloned().map(Value::String);
            Instance { id: id.into(), input: serde_json::to_value(&d).expect("fixture serializes"), ground_truth: gt }
        })
        .collect()
}
