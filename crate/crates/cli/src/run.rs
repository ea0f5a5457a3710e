//! `fot run` and `fot export-dot`.

use std::path::PathBuf;

use fot_core::graph::{canonical_parse, canonical_serialize, to_dot, ExecutionGraph};
use fot_core::ops::{OpRegistry, PromptLibrary};
use fot_core::runtime::{run, RunConfig, Runtime};
use fot_core::schemes::dataset::load_jsonl;
use fot_core::schemes::{run_dataset_with, SchemeId};
use serde::Serialize;
use serde_json::json;

use crate::args::{ExportDotArgs, Global, RunArgs};
use crate::setup::{self, CliError, CliResult};

#[derive(Serialize)]
struct GraphFiles {
    id: String,
    final_graph: PathBuf,
    reasoning_graph: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    dot: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn cmd_run(g: &Global, a: &RunArgs) -> CliResult {
    let w = setup::load_workload(&a.work)?;
    let backend = setup::backend(g, w.scheme, &w.dataset)?;
    let cache = setup::cache(g.cache, &g.cache_dir)?;
    let (registry, prompts) = (OpRegistry::standard(), PromptLibrary::default());
    let rt = Runtime { registry: &registry, backend: backend.as_ref(), cache: &cache, prompts: &prompts };
    let cfg = setup::run_config(g, g.concurrency as usize, &w.hp);

    let graphs_dir = a.out.join("graphs");
    let dot_dir = a.out.join("dot");
    setup::create_dir(&graphs_dir)?;
    if a.export_dot {
        setup::create_dir(&dot_dir)?;
    }
    let mut files = Vec::new();
    let mut io_error = None;
    let mut exit = 0;
    let mut on_run = |inst: &fot_core::schemes::Instance, r: &Result<fot_core::runtime::RunOutcome, fot_core::runtime::RunError>| {
        let stem = setup::file_stem(&inst.id);
        let mut entry = GraphFiles {
            id: inst.id.clone(),
            final_graph: graphs_dir.join(format!("{stem}.final.json")),
            reasoning_graph: graphs_dir.join(format!("{stem}.reasoning.json")),
            dot: None,
            error: None,
        };
        match r {
            Ok(o) => {
                let mut res = setup::write(&entry.final_graph, canonical_serialize(&o.graph))
                    .and_then(|_| setup::write(&entry.reasoning_graph, o.reasoning.canonical_bytes()));
                if a.export_dot {
                    let p = dot_dir.join(format!("{stem}.dot"));
                    res = res.and_then(|_| setup::write(&p, to_dot(&o.graph)));
                    entry.dot = Some(p);
                }
                if let Err(e) = res {
                    io_error.get_or_insert(e);
                }
            }
            Err(e) => {
                log::error!("{}: {e}", inst.id);
                exit = exit.max(e.exit_code());
                entry.error = Some(e.to_string());
            }
        }
        files.push(entry);
    };
    let run = run_dataset_with(rt, w.scheme, &w.dataset, &w.hp, &cfg, &mut on_run).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(e) = io_error {
        return Err(e);
    }

    let mut lines = String::new();
    for r in &run.results {
        lines.push_str(&fot_core::canonical::to_canonical_string(r).expect("results serialize"));
        lines.push('\n');
    }
    let results_path = setup::write(&a.out.join("results.jsonl"), lines)?;
    let report = json!({
        "scheme": w.scheme.name(),
        "dataset": a.work.dataset,
        "hyperparams": w.hp,
        "config": cfg,
        "backend": backend.id(),
        "cache_tier": g.cache,
        "results": results_path,
        "metrics": {
            "instances": run.results.len(),
            "failed": run.results.iter().filter(|r| r.error.is_some()).count(),
            "mean_score": run.mean_score,
            "total_cost_usd": run.total_cost_usd,
            "nominal_cost_usd": run.nominal_cost_usd,
            "backend_calls": run.backend_calls,
            "wall_ms": run.wall_ms,
            "critical_path_ms": run.critical_path_ms,
            "cache": run.cache,
        },
        "graphs": files,
    });
    setup::write_json(&a.out.join("report.json"), &report)?;
    println!("{}", summary(w.scheme, &run));
    println!("wrote {}", a.out.display());
    if exit != 0 {
        return Err(CliError { code: exit, message: "some instances failed; see report.json".into() });
    }
    Ok(())
}

fn summary(scheme: SchemeId, run: &fot_core::schemes::DatasetRun) -> String {
    let n = run.results.len();
    let tail = format!("cost ${:.4}, {} backend calls, {} cache hits", run.total_cost_usd, run.backend_calls, run.cache.hits);
    match scheme {
        SchemeId::GotSorting | SchemeId::TotSorting => format!("{}: mean mistakes {:.2} over {n} instances; {tail}", scheme.name(), run.mean_score),
        _ => {
            let correct = run.results.iter().filter(|r| r.score >= 1.0).count();
            format!("{}: accuracy {correct}/{n} ({:.1}%); {tail}", scheme.name(), 100.0 * run.mean_score)
        }
    }
}

pub fn cmd_export_dot(g: &Global, a: &ExportDotArgs) -> CliResult {
    let graph = match (&a.graph, &a.scheme, &a.dataset) {
        (Some(path), _, _) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            canonical_parse(&bytes).map_err(|e| CliError::io(path, e))?
        }
        (None, Some(scheme), Some(dataset)) => scheme_graph(g, a, scheme, dataset)?,
        _ => return Err(CliError::usage("export-dot needs --graph or --scheme with --dataset")),
    };
    let dot = to_dot(&graph);
    match &a.out {
        Some(p) => {
            setup::write(p, dot)?;
        }
        None => setup::emit(&dot)?,
    }
    Ok(())
}

fn scheme_graph(g: &Global, a: &ExportDotArgs, scheme: &str, dataset: &std::path::Path) -> CliResult<ExecutionGraph> {
    let scheme: SchemeId = scheme.parse().map_err(|e| CliError::usage(format!("{e}; known: {}", setup::scheme_names())))?;
    let data = load_jsonl(dataset).map_err(|e| CliError::usage(e.to_string()))?;
    let inst = match &a.id {
        Some(id) => data.iter().find(|i| &i.id == id).ok_or_else(|| CliError::usage(format!("no instance `{id}`")))?,
        None => data.first().ok_or_else(|| CliError::usage("empty dataset"))?,
    };
    let hp = scheme.default_hp();
    let g0 = scheme.build(&inst.input, &hp).map_err(|e| CliError::usage(e.to_string()))?;
    if !a.execute {
        return Ok(g0);
    }
    let backend = setup::backend(g, scheme, std::slice::from_ref(inst))?;
    let cache = setup::cache(g.cache, &g.cache_dir)?;
    let (registry, prompts) = (OpRegistry::standard(), PromptLibrary::default());
    let rt = Runtime { registry: &registry, backend: backend.as_ref(), cache: &cache, prompts: &prompts };
    let cfg: RunConfig = setup::run_config(g, g.concurrency as usize, &hp);
    run(g0, &cfg, rt).map(|o| o.graph).map_err(|e| CliError { code: e.exit_code(), message: e.to_string() })
}
