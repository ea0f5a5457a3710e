//! Turns global flags into backends, caches and run configurations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fot_core::backend::{HttpBackend, HttpConfig, LatencyModel, MockBackend, PriceTable, RecordingBackend, ReplayBackend, ThoughtGenerator};
use fot_core::cache::{CacheFacade, CacheTier, PersistentCache};
use fot_core::runtime::{ClockMode, RunConfig, EXIT_USAGE};
use fot_core::schemes::dataset::{load_jsonl, Instance};
use fot_core::schemes::SchemeId;
use serde_json::Value;

use crate::args::{BackendKind, Global, Workload};

/// Exit code of `cache verify` when corruption is found.
pub const EXIT_CORRUPT: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError { code: EXIT_USAGE, message: format!("{}: {e}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub struct Loaded {
    pub scheme: SchemeId,
    pub dataset: Vec<Instance>,
    pub hp: Value,
}

pub fn load_workload(w: &Workload) -> CliResult<Loaded> {
    let scheme: SchemeId = w.scheme.parse().map_err(|e| CliError::usage(format!("{e}; known: {}", scheme_names())))?;
    let mut dataset = load_jsonl(&w.dataset).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(n) = w.limit {
        dataset.truncate(n);
    }
    if dataset.is_empty() {
        return Err(CliError::usage(format!("{}: no instances", w.dataset.display())));
    }
    let hp = merged_hp(scheme, w.hp.as_deref())?;
    Ok(Loaded { scheme, dataset, hp })
}

pub fn scheme_names() -> String {
    SchemeId::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}

/// Scheme defaults with the top-level keys of `overrides` replaced.
pub fn merged_hp(scheme: SchemeId, overrides: Option<&str>) -> CliResult<Value> {
    let mut hp = scheme.default_hp();
    if let Some(text) = overrides {
        let o: Value = serde_json::from_str(text).map_err(|e| CliError::usage(format!("--hp: {e}")))?;
        merge_into(&mut hp, &o)?;
    }
    Ok(hp)
}

pub fn merge_into(hp: &mut Value, overrides: &Value) -> CliResult {
    let Some(o) = overrides.as_object() else {
        return Err(CliError::usage("hyperparameter overrides must be a JSON object"));
    };
    match hp {
        Value::Object(m) => {
            for (k, v) in o {
                m.insert(k.clone(), v.clone());
            }
        }
        _ => *hp = overrides.clone(),
    }
    Ok(())
}

pub fn run_config(g: &Global, concurrency: usize, hp: &Value) -> RunConfig {
    RunConfig {
        seed: g.seed,
        clock: if g.virtual_clock { ClockMode::Virtual } else { ClockMode::Wall },
        hyperparams: hp.clone(),
        ..RunConfig::default().with_strategy(g.strategy).with_concurrency(concurrency)
    }
}

/// The backend named by the flags. Mock backends answer from the scheme's oracle.
pub fn backend(g: &Global, scheme: SchemeId, dataset: &[Instance]) -> CliResult<Box<dyn ThoughtGenerator>> {
    let prices = match &g.price_table {
        Some(p) => PriceTable::load(p).map_err(|e| CliError::io(p, e))?,
        None => PriceTable::default(),
    };
    let inner: Box<dyn ThoughtGenerator> = match g.backend {
        BackendKind::Mock => Box::new(
            MockBackend::new("mock", scheme.oracle(dataset, g.mock_noise.map(|p| (p, g.seed))))
                .with_latency(LatencyModel::Fixed { ms: g.mock_latency_ms })
                .with_prices(prices)
                .with_real_sleep(!g.virtual_clock),
        ),
        BackendKind::Replay => {
            let path = g.record.as_ref().ok_or_else(|| CliError::usage("--backend replay needs --record <file>"))?;
            return Ok(Box::new(ReplayBackend::open(path).map_err(|e| CliError::io(path, e))?));
        }
        BackendKind::Http => Box::new(HttpBackend::new(HttpConfig {
            base_url: g.base_url.clone(),
            model: g.model.clone(),
            api_key_env: g.api_key_env.clone(),
            prices,
            ..HttpConfig::default()
        })),
    };
    match &g.record {
        Some(path) => Ok(Box::new(RecordingBackend::create(Arc::from(inner), path).map_err(|e| CliError::io(path, e))?)),
        None => Ok(inner),
    }
}

pub fn cache(tier: CacheTier, dir: &Path) -> CliResult<CacheFacade> {
    Ok(match tier {
        CacheTier::None => CacheFacade::none(),
        CacheTier::Process => CacheFacade::process(),
        CacheTier::Persistent => CacheFacade::persistent(PersistentCache::open(dir).map_err(|e| CliError::io(dir, e))?),
    })
}

pub fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Bulk stdout output; a closed pipe (`fot export-dot | head`) is not an error.
pub fn emit(text: &str) -> CliResult {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

pub fn write_json(path: &Path, v: &impl serde::Serialize) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write(path, text)
}

/// Instance ids made safe for file names.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}
