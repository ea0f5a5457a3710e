//! Studies: batches of trials drawn from a sampler and scored by an evaluator.

use serde::{Deserialize, Serialize};

use super::space::{sample_random, Assignment, Space};
use super::tpe::{sample_tpe_with, TpeConfig};
use crate::cache::CacheStats;
use crate::canonical::seed_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    /// Lower is better.
    pub fn loss(self, objective: f64) -> f64 {
        match self {
            Direction::Maximize => -objective,
            Direction::Minimize => objective,
        }
    }

    pub fn better(self, a: f64, b: f64) -> bool {
        self.loss(a) < self.loss(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub score: f64,
    #[serde(default)]
    pub cost: f64,
    #[serde(default)]
    pub runtime: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { score: 1.0, cost: 0.0, runtime: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Objective {
    #[serde(default)]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_ceiling_usd: Option<f64>,
}

impl Objective {
    pub fn maximize() -> Self {
        Objective { direction: Direction::Maximize, ..Default::default() }
    }

    pub fn minimize() -> Self {
        Objective { direction: Direction::Minimize, ..Default::default() }
    }

    pub fn with_ceiling(mut self, usd: f64) -> Self {
        self.cost_ceiling_usd = Some(usd);
        self
    }

    /// Weighted scalarization. Cost and runtime always count against the trial.
    pub fn value(&self, r: &EvalResult) -> f64 {
        let w = self.weights.unwrap_or_default();
        let penalty = w.cost * r.nominal_cost_usd + w.runtime * r.runtime_ms;
        match self.direction {
            Direction::Maximize => w.score * r.score - penalty,
            Direction::Minimize => w.score * r.score + penalty,
        }
    }

    /// The ceiling applies to nominal cost, so cache hits cannot make a trial feasible.
    pub fn feasible(&self, r: &EvalResult) -> bool {
        self.cost_ceiling_usd.is_none_or(|c| r.nominal_cost_usd <= c)
    }
}

/// What an evaluator reports for one assignment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    pub score: f64,
    /// Cost actually paid to the backend.
    pub cost_usd: f64,
    /// Cost had nothing been cached.
    pub nominal_cost_usd: f64,
    pub runtime_ms: f64,
    pub backend_calls: u64,
    pub cache: CacheStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub assignment: Assignment,
    pub objective: Option<f64>,
    pub score: Option<f64>,
    pub cost_usd: f64,
    pub nominal_cost_usd: f64,
    pub runtime_ms: f64,
    pub feasible: bool,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trial {
    /// Complete and feasible: eligible for "best" and for the TPE good set.
    pub fn is_usable(&self) -> bool {
        self.status == TrialStatus::Complete && self.feasible && self.objective.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Random,
    Tpe(TpeConfig),
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Tpe(TpeConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_trials: usize,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default)]
    pub seed: u64,
    /// Trials evaluated concurrently; all trials in a batch see the same history.
    #[serde(default = "one")]
    pub max_concurrency: usize,
}

fn one() -> usize {
    1
}

impl StudyConfig {
    pub fn new(n_trials: usize, sampler: Sampler, seed: u64) -> Self {
        StudyConfig { n_trials, sampler, seed, max_concurrency: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub trials: Vec<Trial>,
    pub best: Option<usize>,
    pub direction: Direction,
    pub total_cost_usd: f64,
    pub nominal_cost_usd: f64,
    pub backend_calls: u64,
    pub cache: CacheStats,
}

impl StudyReport {
    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|i| &self.trials[i])
    }

    /// Best objective among the first `n` trials, for convergence curves.
    pub fn best_after(&self, n: usize) -> Option<f64> {
        best_index(&self.trials[..n.min(self.trials.len())], self.direction).map(|i| self.trials[i].objective.expect("usable"))
    }
}

/// Best usable trial; ties go to the lowest id.
pub fn best_index(trials: &[Trial], direction: Direction) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        if !t.is_usable() {
            continue;
        }
        let o = t.objective.expect("usable");
        if best.is_none_or(|b| direction.better(o, trials[b].objective.expect("usable"))) {
            best = Some(i);
        }
    }
    best
}

pub fn trial_seed(study_seed: u64, id: usize) -> u64 {
    seed_from(&["trial", &study_seed.to_string(), &id.to_string()])
}

/// Runs `cfg.n_trials` evaluations. Evaluator errors become failed trials and the study continues.
pub fn run_study<F>(space: &Space, objective: &Objective, cfg: &StudyConfig, eval: F) -> StudyReport
where
    F: Fn(&Assignment, usize) -> Result<EvalResult, String> + Sync,
{
    let mut trials: Vec<Trial> = Vec::with_capacity(cfg.n_trials);
    let mut cache = CacheStats::default();
    let mut backend_calls = 0;
    let batch = cfg.max_concurrency.max(1);
    while trials.len() < cfg.n_trials {
        let start = trials.len();
        let end = (start + batch).min(cfg.n_trials);
        let proposals: Vec<(usize, Assignment)> = (start..end)
            .map(|id| {
                let seed = trial_seed(cfg.seed, id);
                let a = match cfg.sampler {
                    Sampler::Random => sample_random(space, seed),
                    Sampler::Tpe(tc) => sample_tpe_with(space, &trials, objective.direction, seed, &tc).0,
                };
                (id, a)
            })
            .collect();
        let results: Vec<Result<EvalResult, String>> = if proposals.len() == 1 {
            vec![eval(&proposals[0].1, proposals[0].0)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = proposals.iter().map(|(id, a)| s.spawn(|| eval(a, *id))).collect();
                handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("evaluator panicked".into()))).collect()
            })
        };
        for ((id, assignment), r) in proposals.into_iter().zip(results) {
            let t = match r {
                Ok(r) => {
                    cache.merge(&r.cache);
                    backend_calls += r.backend_calls;
                    Trial {
                        id,
                        assignment,
                        objective: Some(objective.value(&r)),
                        score: Some(r.score),
                        cost_usd: r.cost_usd,
                        nominal_cost_usd: r.nominal_cost_usd,
                        runtime_ms: r.runtime_ms,
                        feasible: objective.feasible(&r),
                        status: TrialStatus::Complete,
                        error: None,
                    }
                }
                Err(e) => Trial {
                    id,
                    assignment,
                    objective: None,
                    score: None,
                    cost_usd: 0.0,
                    nominal_cost_usd: 0.0,
                    runtime_ms: 0.0,
                    feasible: false,
                    status: TrialStatus::Failed,
                    error: Some(e),
                },
            };
            trials.push(t);
        }
    }
    StudyReport {
        best: best_index(&trials, objective.direction),
        direction: objective.direction,
        total_cost_usd: trials.iter().map(|t| t.cost_usd).sum(),
        nominal_cost_usd: trials.iter().map(|t| t.nominal_cost_usd).sum(),
        backend_calls,
        cache,
        trials,
    }
}
