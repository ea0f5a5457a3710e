//! `fot optimize --study <file>`.

use std::path::{Path, PathBuf};

use fot_core::ops::{OpRegistry, PromptLibrary};
use fot_core::optimizer::{run_study, Objective, Sampler, Space, StudyConfig, StudyReport, Trial};
use fot_core::runtime::Runtime;
use fot_core::schemes::dataset::load_jsonl;
use fot_core::schemes::{apply_assignment, run_dataset, SchemeId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::{Global, OptimizeArgs};
use crate::setup::{self, CliError, CliResult};

/// Study file. A relative dataset path is resolved against the study file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub scheme: String,
    pub dataset: PathBuf,
    /// The scheme's own space when absent.
    #[serde(default)]
    pub space: Option<Space>,
    /// Without a `direction`, the scheme's natural direction is used.
    #[serde(default)]
    pub objective: Option<Value>,
    pub n_trials: usize,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub max_concurrency: usize,
    /// Merged over the scheme's default hyperparameters before each assignment.
    #[serde(default)]
    pub hyperparams: Option<Value>,
    #[serde(default)]
    pub limit: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Serialize)]
struct Report<'a> {
    scheme: &'a str,
    dataset: &'a Path,
    space: &'a Space,
    objective: &'a Objective,
    study: &'a StudyConfig,
    best_trial: Option<&'a Trial>,
    #[serde(flatten)]
    report: &'a StudyReport,
}

#[derive(Serialize)]
struct CsvRow {
    id: usize,
    status: String,
    feasible: bool,
    objective: Option<f64>,
    score: Option<f64>,
    cost_usd: f64,
    nominal_cost_usd: f64,
    runtime_ms: f64,
    assignment: String,
    error: String,
}

pub fn load_spec(path: &Path) -> CliResult<StudySpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut spec: StudySpec = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
    if spec.dataset.is_relative() && !spec.dataset.exists() {
        if let Some(dir) = path.parent() {
            spec.dataset = dir.join(&spec.dataset);
        }
    }
    if spec.n_trials == 0 {
        return Err(CliError::usage("n_trials must be at least 1"));
    }
    Ok(spec)
}

pub fn objective_for(scheme: SchemeId, raw: Option<&Value>) -> CliResult<Objective> {
    let Some(v) = raw else {
        return Ok(Objective { direction: scheme.direction(), ..Default::default() });
    };
    let mut o: Objective = serde_json::from_value(v.clone()).map_err(|e| CliError::usage(format!("objective: {e}")))?;
    if v.get("direction").is_none() {
        o.direction = scheme.direction();
    }
    Ok(o)
}

pub fn cmd_optimize(g: &Global, a: &OptimizeArgs) -> CliResult {
    let spec = load_spec(&a.study)?;
    let scheme: SchemeId = spec.scheme.parse().map_err(|e| CliError::usage(format!("{e}; known: {}", setup::scheme_names())))?;
    let mut dataset = load_jsonl(&spec.dataset).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(n) = spec.limit {
        dataset.truncate(n);
    }
    let space = spec.space.clone().unwrap_or_else(|| scheme.space());
    space.validate().map_err(|e| CliError::usage(format!("space: {e}")))?;
    let objective = objective_for(scheme, spec.objective.as_ref())?;
    let mut base = scheme.default_hp();
    if let Some(o) = &spec.hyperparams {
        setup::merge_into(&mut base, o)?;
    }
    let study = StudyConfig { n_trials: spec.n_trials, sampler: spec.sampler, seed: spec.seed, max_concurrency: spec.max_concurrency.max(1) };

    // One backend and cache for the whole study, so trials share cached samples.
    let backend = setup::backend(g, scheme, &dataset)?;
    let cache = setup::cache(g.cache, &g.cache_dir)?;
    let (registry, prompts) = (OpRegistry::standard(), PromptLibrary::default());
    let report = run_study(&space, &objective, &study, |assignment, _| {
        let mut hp = base.clone();
        apply_assignment(&mut hp, assignment).map_err(|e| e.to_string())?;
        let cfg = setup::run_config(g, g.concurrency as usize, &hp);
        let rt = Runtime { registry: &registry, backend: backend.as_ref(), cache: &cache, prompts: &prompts };
        run_dataset(rt, scheme, &dataset, &hp, &cfg).map(|r| r.eval_result()).map_err(|e| e.to_string())
    });

    setup::create_dir(&a.out)?;
    let full = Report {
        scheme: scheme.name(),
        dataset: &spec.dataset,
        space: &space,
        objective: &objective,
        study: &study,
        best_trial: report.best_trial(),
        report: &report,
    };
    setup::write_json(&a.out.join("study_report.json"), &full)?;
    write_csv(&a.out.join("trials.csv"), &report.trials)?;
    match report.best_trial() {
        Some(t) => println!(
            "best trial {} of {}: objective {:.4}, cost ${:.4}, {}",
            t.id,
            report.trials.len(),
            t.objective.unwrap_or(f64::NAN),
            t.nominal_cost_usd,
            serde_json::to_string(&t.assignment).expect("assignment serializes")
        ),
        None => println!("no feasible trial among {}", report.trials.len()),
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn write_csv(path: &Path, trials: &[Trial]) -> CliResult {
    let mut wr = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for t in trials {
        let row = CsvRow {
            id: t.id,
            status: serde_json::to_value(t.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            feasible: t.feasible,
            objective: t.objective,
            score: t.score,
            cost_usd: t.cost_usd,
            nominal_cost_usd: t.nominal_cost_usd,
            runtime_ms: t.runtime_ms,
            assignment: serde_json::to_string(&t.assignment).expect("assignment serializes"),
            error: t.error.clone().unwrap_or_default(),
        };
        wr.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    wr.flush().map_err(|e| CliError::io(path, e))
}
