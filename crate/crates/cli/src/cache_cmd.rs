//! `fot cache {stats|gc|verify}` over `--cache-dir`.

use std::collections::BTreeMap;

use fot_core::cache::{now_unix, PersistentCache};

use crate::args::{CacheCmd, Global};
use crate::setup::{CliError, CliResult, EXIT_CORRUPT};

pub fn cmd_cache(g: &Global, c: &CacheCmd) -> CliResult {
    let dir = &g.cache_dir;
    if !dir.is_dir() {
        return Err(CliError::usage(format!("{}: no cache directory", dir.display())));
    }
    let store = PersistentCache::open(dir).map_err(|e| CliError::io(dir, e))?;
    match c {
        CacheCmd::Stats => {
            let entries = store.entries();
            let bytes: u64 = store.files().iter().filter_map(|p| p.metadata().ok()).map(|m| m.len()).sum();
            let mut per_backend: BTreeMap<&str, usize> = BTreeMap::new();
            for e in &entries {
                *per_backend.entry(&e.backend_id).or_default() += 1;
            }
            println!("entries: {}", entries.len());
            println!("bytes: {bytes}");
            println!("stored cost usd: {:.6}", entries.iter().map(|e| e.cost_usd).sum::<f64>());
            println!("stored latency ms: {}", entries.iter().map(|e| e.duration_ms).sum::<u64>());
            for (b, n) in per_backend {
                println!("backend {b}: {n}");
            }
        }
        CacheCmd::Gc { older_than } => {
            let removed = store.gc(now_unix().saturating_sub(*older_than)).map_err(|e| CliError::io(dir, e))?;
            println!("removed {removed} entries");
        }
        CacheCmd::Verify => {
            let r = store.verify();
            println!("checked: {}", r.checked);
            println!("corrupt: {}", r.corrupt.len());
            for p in &r.corrupt {
                println!("  {}", p.display());
            }
            println!("index mismatches: {}", r.index_mismatches.len());
            if !r.corrupt.is_empty() {
                return Err(CliError { code: EXIT_CORRUPT, message: format!("{} corrupt entries", r.corrupt.len()) });
            }
        }
    }
    Ok(())
}
