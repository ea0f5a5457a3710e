//! Memoization of backend samples.
//!
//! A key names one sample of one prompt as issued by one operation kind:
//! `(fingerprint, inputs_hash, sample_index)`. The run seed is deliberately
//! not part of the key, so runs with different seeds share results.
//!
//! Claims give single-flight semantics: the first caller to miss owns the
//! key until it fills or abandons it, and concurrent callers wait. Entries
//! carry the virtual time at which they became available so simulated runs
//! can model waiting on a duplicate call that is still in flight.

mod persistent;

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;

pub use persistent::{PersistentCache, StoreOutcome, VerifyReport};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub fingerprint: String,
    pub inputs_hash: String,
    pub sample_index: u32,
}

impl CacheKey {
    pub fn hash(&self) -> String {
        canonical::hash_of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub outputs: std::collections::BTreeMap<String, Value>,
    pub cost_usd: f64,
    pub duration_ms: u64,
    /// Unix seconds.
    pub created_at: u64,
    pub backend_id: String,
}

impl CacheEntry {
    pub fn text(&self) -> &str {
        self.outputs.get("text").and_then(Value::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub cost_saved_usd: f64,
    pub time_saved_ms: u64,
}

impl CacheStats {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn record_hit(&mut self, e: &CacheEntry) {
        self.hits += 1;
        self.cost_saved_usd += e.cost_usd;
        self.time_saved_ms += e.duration_ms;
    }

    pub fn merge(&mut self, other: &CacheStats) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.cost_saved_usd += other.cost_saved_usd;
        self.time_saved_ms += other.time_saved_ms;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CacheTier {
    #[default]
    None,
    Process,
    Persistent,
}

impl std::str::FromStr for CacheTier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CacheTier::None),
            "process" => Ok(CacheTier::Process),
            "persistent" => Ok(CacheTier::Persistent),
            other => Err(format!("unknown cache tier `{other}`")),
        }
    }
}

/// Result of claiming a key.
#[derive(Debug, Clone, PartialEq)]
pub enum Claim {
    /// Entry available from virtual time `ready_at` on.
    Hit { entry: CacheEntry, ready_at: u64 },
    /// Caller must [`fill`](CacheFacade::fill) or [`abandon`](CacheFacade::abandon).
    Owner,
}

enum Slot {
    InFlight,
    Ready { entry: CacheEntry, ready_at: u64 },
}

/// The cache seen by operations: a tier plus hit/miss accounting.
pub struct CacheFacade {
    tier: CacheTier,
    slots: Mutex<HashMap<String, Slot>>,
    filled: Condvar,
    disk: Option<PersistentCache>,
    stats: Mutex<CacheStats>,
}

impl CacheFacade {
    pub fn none() -> Self {
        Self::with_tier(CacheTier::None, None)
    }

    pub fn process() -> Self {
        Self::with_tier(CacheTier::Process, None)
    }

    pub fn persistent(store: PersistentCache) -> Self {
        Self::with_tier(CacheTier::Persistent, Some(store))
    }

    fn with_tier(tier: CacheTier, disk: Option<PersistentCache>) -> Self {
        CacheFacade { tier, slots: Mutex::new(HashMap::new()), filled: Condvar::new(), disk, stats: Mutex::new(CacheStats::default()) }
    }

    pub fn tier(&self) -> CacheTier {
        self.tier
    }

    pub fn stats(&self) -> CacheStats {
        *self.stats.lock().expect("stats lock")
    }

    pub fn disk(&self) -> Option<&PersistentCache> {
        self.disk.as_ref()
    }

    /// Plain lookup without claiming. Counts toward the stats.
    pub fn lookup(&self, key: &CacheKey) -> Option<CacheEntry> {
        if self.tier == CacheTier::None {
            return None;
        }
        let h = key.hash();
        let found = match self.slots.lock().expect("cache lock").get(&h) {
            Some(Slot::Ready { entry, .. }) => Some(entry.clone()),
            _ => None,
        };
        let found = found.or_else(|| self.disk.as_ref().and_then(|d| d.lookup(key)));
        let mut s = self.stats.lock().expect("stats lock");
        match &found {
            Some(e) => s.record_hit(e),
            None => s.misses += 1,
        }
        found
    }

    /// Stores without a prior claim; first writer wins.
    pub fn store(&self, entry: CacheEntry, ready_at: u64) {
        if self.tier == CacheTier::None {
            return;
        }
        let h = entry.key.hash();
        let mut slots = self.slots.lock().expect("cache lock");
        if let Some(Slot::Ready { entry: old, .. }) = slots.get(&h) {
            if old.outputs != entry.outputs {
                log::warn!("conflicting cache store for {h}; keeping the first entry");
            }
            return;
        }
        if let Some(d) = &self.disk {
            if let Err(e) = d.store(&entry) {
                log::warn!("persistent cache store failed: {e}");
            }
        }
        slots.insert(h, Slot::Ready { entry, ready_at });
        self.filled.notify_all();
    }

    /// Claims `key`: returns a hit, or makes the caller the owner. Blocks while
    /// another caller owns the key.
    pub fn claim(&self, key: &CacheKey) -> Claim {
        if self.tier == CacheTier::None {
            self.stats.lock().expect("stats lock").misses += 1;
            return Claim::Owner;
        }
        let h = key.hash();
        let mut slots = self.slots.lock().expect("cache lock");
        loop {
            match slots.get(&h) {
                Some(Slot::Ready { entry, ready_at }) => {
                    let claim = Claim::Hit { entry: entry.clone(), ready_at: *ready_at };
                    self.stats.lock().expect("stats lock").record_hit(entry);
                    return claim;
                }
                Some(Slot::InFlight) => {
                    slots = self.filled.wait(slots).expect("cache wait");
                }
                None => {
                    if let Some(entry) = self.disk.as_ref().and_then(|d| d.lookup(key)) {
                        self.stats.lock().expect("stats lock").record_hit(&entry);
                        slots.insert(h, Slot::Ready { entry: entry.clone(), ready_at: 0 });
                        return Claim::Hit { entry, ready_at: 0 };
                    }
                    slots.insert(h, Slot::InFlight);
                    self.stats.lock().expect("stats lock").misses += 1;
                    return Claim::Owner;
                }
            }
        }
    }

    /// Completes an owned claim.
    pub fn fill(&self, entry: CacheEntry, ready_at: u64) {
        if self.tier == CacheTier::None {
            return;
        }
        if let Some(d) = &self.disk {
            if let Err(e) = d.store(&entry) {
                log::warn!("persistent cache store failed: {e}");
            }
        }
        let h = entry.key.hash();
        self.slots.lock().expect("cache lock").insert(h, Slot::Ready { entry, ready_at });
        self.filled.notify_all();
    }

    /// Releases an owned claim without a result, waking waiters.
    pub fn abandon(&self, key: &CacheKey) {
        if self.tier == CacheTier::None {
            return;
        }
        let h = key.hash();
        let mut slots = self.slots.lock().expect("cache lock");
        if matches!(slots.get(&h), Some(Slot::InFlight)) {
            slots.remove(&h);
        }
        self.filled.notify_all();
    }

    /// Forgets in-memory entries and their virtual timestamps. Persistent entries remain.
    pub fn clear_memory(&self) {
        self.slots.lock().expect("cache lock").clear();
    }
}

/// Zero on targets without a system clock; timestamps only drive `gc`.
pub fn now_unix() -> u64 {
    if cfg!(all(target_arch = "wasm32", target_os = "unknown")) {
        return 0;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
