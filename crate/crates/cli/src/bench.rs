//! `fot bench`: the {sequential, parallel} × {no cache, process, persistent} matrix.

use std::fmt::Write;

use fot_core::cache::{CacheFacade, CacheTier, PersistentCache};
use fot_core::ops::{OpRegistry, PromptLibrary};
use fot_core::runtime::Runtime;
use fot_core::schemes::{run_dataset, DatasetRun};
use serde::Serialize;

use crate::args::{BenchArgs, Global};
use crate::setup::{self, CliError, CliResult, Loaded};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub parallel: bool,
    pub tier: CacheTier,
}

impl BenchConfig {
    pub fn label(self) -> String {
        let tier = match self.tier {
            CacheTier::None => "No cache",
            CacheTier::Process => "Process",
            CacheTier::Persistent => "Persistent",
        };
        format!("{}+{tier}", if self.parallel { "P" } else { "S" })
    }
}

pub fn parse_config(s: &str) -> CliResult<BenchConfig> {
    let (mode, tier) = s.split_once(':').ok_or_else(|| CliError::usage(format!("config `{s}`: expected MODE:TIER, e.g. P:process")))?;
    let parallel = match mode {
        "S" | "s" => false,
        "P" | "p" => true,
        _ => return Err(CliError::usage(format!("config `{s}`: mode must be S or P"))),
    };
    let tier = tier.parse().map_err(CliError::usage)?;
    Ok(BenchConfig { parallel, tier })
}

pub fn default_matrix() -> Vec<BenchConfig> {
    let mut m = Vec::new();
    for parallel in [false, true] {
        for tier in [CacheTier::None, CacheTier::Process, CacheTier::Persistent] {
            m.push(BenchConfig { parallel, tier });
        }
    }
    m
}

#[derive(Debug, Serialize)]
pub struct Row {
    pub config: String,
    pub runtime_per_instance_s: f64,
    pub speedup: f64,
    pub relative_cost: f64,
    pub cost_usd: f64,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub mean_score: f64,
}

pub fn cmd_bench(g: &Global, a: &BenchArgs) -> CliResult {
    let configs = match &a.configs {
        Some(list) => list.iter().map(|s| parse_config(s)).collect::<CliResult<Vec<_>>>()?,
        None => default_matrix(),
    };
    if configs.len() < 2 {
        return Err(CliError::usage("bench compares configurations; give at least two"));
    }
    let w = setup::load_workload(&a.work)?;
    setup::create_dir(&a.out)?;
    let mut runs = Vec::new();
    for c in &configs {
        runs.push((*c, measure(g, a, &w, *c)?));
    }
    let rows = table(&runs, w.dataset.len());
    let md = markdown(&rows, w.scheme.name(), w.dataset.len(), g.virtual_clock);
    setup::write(&a.out.join("bench.md"), &md)?;
    let csv_path = a.out.join("bench.csv");
    let mut wr = csv::Writer::from_path(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    for r in &rows {
        wr.serialize(r).map_err(|e| CliError::io(&csv_path, e))?;
    }
    wr.flush().map_err(|e| CliError::io(&csv_path, e))?;
    setup::emit(&md)?;
    Ok(())
}

/// Persistent rows time a second pass over a store warmed by an unmeasured first pass.
fn measure(g: &Global, a: &BenchArgs, w: &Loaded, c: BenchConfig) -> CliResult<DatasetRun> {
    let concurrency = if c.parallel { a.parallel.max(1) } else { 1 };
    let cfg = setup::run_config(g, concurrency, &w.hp);
    let (registry, prompts) = (OpRegistry::standard(), PromptLibrary::default());
    let pass = |cache: &CacheFacade| -> CliResult<DatasetRun> {
        let backend = setup::backend(g, w.scheme, &w.dataset)?;
        let rt = Runtime { registry: &registry, backend: backend.as_ref(), cache, prompts: &prompts };
        run_dataset(rt, w.scheme, &w.dataset, &w.hp, &cfg).map_err(|e| CliError::usage(e.to_string()))
    };
    match c.tier {
        CacheTier::None => pass(&CacheFacade::none()),
        CacheTier::Process => pass(&CacheFacade::process()),
        CacheTier::Persistent => {
            let dir = a.out.join("bench-cache").join(if c.parallel { "P" } else { "S" });
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            }
            let open = || PersistentCache::open(&dir).map_err(|e| CliError::io(&dir, e));
            pass(&CacheFacade::persistent(open()?))?;
            pass(&CacheFacade::persistent(open()?))
        }
    }
}

/// Speed-up and cost are relative to S+No cache when present, else the first row.
pub fn table(runs: &[(BenchConfig, DatasetRun)], n: usize) -> Vec<Row> {
    let base_cfg = BenchConfig { parallel: false, tier: CacheTier::None };
    let base = runs.iter().find(|(c, _)| *c == base_cfg).unwrap_or(&runs[0]).1.clone();
    let per_instance = |r: &DatasetRun| r.wall_ms as f64 / 1000.0 / n.max(1) as f64;
    // x/0 is unbounded (a fully cached virtual-clock row); 0/0 stays NaN.
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else if a > 0.0 { f64::INFINITY } else { f64::NAN };
    runs.iter()
        .map(|(c, r)| Row {
            config: c.label(),
            runtime_per_instance_s: per_instance(r),
            speedup: ratio(per_instance(&base), per_instance(r)),
            relative_cost: ratio(r.total_cost_usd, base.total_cost_usd),
            cost_usd: r.total_cost_usd,
            backend_calls: r.backend_calls,
            cache_hits: r.cache.hits,
            mean_score: r.mean_score,
        })
        .collect()
}

pub fn markdown(rows: &[Row], scheme: &str, n: usize, virtual_clock: bool) -> String {
    let clock = if virtual_clock { "virtual" } else { "wall" };
    let mut s = format!("Average runtime per instance, in seconds (speed-up); {scheme}, {n} instances, {clock} clock\n\n");
    s.push_str("| Configuration | Runtime (s) | Relative cost | Backend calls | Cache hits | Mean score |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {:.2} ({}) | {:.1}% | {} | {} | {:.3} |",
            r.config,
            r.runtime_per_instance_s,
            times(r.speedup),
            100.0 * r.relative_cost,
            r.backend_calls,
            r.cache_hits,
            r.mean_score
        );
    }
    s
}

fn times(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.1}x")
    } else if x.is_nan() {
        "n/a".into()
    } else {
        "unbounded".into()
    }
}
