//! Content-addressed on-disk store.
//!
//! Layout: `<dir>/<first 2 hex chars>/<key hash>.json` plus an append-only
//! `index.log` with one `<key hash> <created_at>` line per stored entry.
//! Each file is the canonical JSON of `{"entry": …, "sha256": …}` where the
//! digest covers the canonical entry bytes. A file is intact only if its
//! bytes are exactly the canonical re-encoding of what they parse to and the
//! digest matches, so any flipped bit is detected.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CacheEntry, CacheKey};
use crate::canonical;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Corrupt(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOutcome {
    Stored,
    /// An identical entry was already present.
    AlreadyPresent,
    /// A different entry was present and kept.
    ConflictIgnored,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub corrupt: Vec<PathBuf>,
    /// Hashes listed in the index without a file, or files missing from the index.
    pub index_mismatches: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FileRepr {
    entry: CacheEntry,
    sha256: String,
}

fn encode(entry: &CacheEntry) -> Vec<u8> {
    let entry_bytes = canonical::to_canonical_bytes(entry).expect("entry serializes");
    let repr = FileRepr { entry: entry.clone(), sha256: canonical::sha256_hex(&entry_bytes) };
    canonical::to_canonical_bytes(&repr).expect("entry serializes")
}

/// Decodes and checks a stored file.
fn decode(bytes: &[u8], expected_hash: Option<&str>) -> Result<CacheEntry, String> {
    let repr: FileRepr = serde_json::from_slice(bytes).map_err(|e| format!("unparseable: {e}"))?;
    let entry_bytes = canonical::to_canonical_bytes(&repr.entry).map_err(|e| e.to_string())?;
    if canonical::sha256_hex(&entry_bytes) != repr.sha256 {
        return Err("digest mismatch".into());
    }
    if encode(&repr.entry) != bytes {
        return Err("bytes are not canonical".into());
    }
    if let Some(h) = expected_hash {
        if repr.entry.key.hash() != h {
            return Err("file name does not match key".into());
        }
    }
    Ok(repr.entry)
}

pub struct PersistentCache {
    dir: PathBuf,
    index: Mutex<File>,
    tmp_counter: AtomicU64,
}

impl std::fmt::Debug for PersistentCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PersistentCache").field("dir", &self.dir).finish()
    }
}

impl PersistentCache {
    /// Opens or creates a store, discarding temp files left by interrupted writes.
    pub fn open(dir: &Path) -> Result<Self, PersistError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for shard in fs::read_dir(dir).map_err(io_err(dir))?.flatten() {
            if shard.path().is_dir() {
                for f in fs::read_dir(shard.path()).map_err(io_err(dir))?.flatten() {
                    if f.path().extension().and_then(|e| e.to_str()) == Some("tmp") {
                        let _ = fs::remove_file(f.path());
                    }
                }
            }
        }
        let index_path = dir.join("index.log");
        let index = OpenOptions::new().create(true).append(true).open(&index_path).map_err(io_err(&index_path))?;
        Ok(PersistentCache { dir: dir.to_path_buf(), index: Mutex::new(index), tmp_counter: AtomicU64::new(0) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(&hash[..2]).join(format!("{hash}.json"))
    }

    /// Returns the entry if present and intact; corrupt files count as misses.
    pub fn lookup(&self, key: &CacheKey) -> Option<CacheEntry> {
        let h = key.hash();
        let path = self.path_for(&h);
        let bytes = fs::read(&path).ok()?;
        match decode(&bytes, Some(&h)) {
            Ok(e) => Some(e),
            Err(why) => {
                log::warn!("ignoring corrupt cache entry {}: {why}", path.display());
                None
            }
        }
    }

    /// Durable once this returns: the file is fsynced before it becomes visible.
    pub fn store(&self, entry: &CacheEntry) -> Result<StoreOutcome, PersistError> {
        let h = entry.key.hash();
        let path = self.path_for(&h);
        let shard = path.parent().expect("entry path has a shard dir");
        fs::create_dir_all(shard).map_err(io_err(shard))?;
        let bytes = encode(entry);
        if let Ok(existing) = fs::read(&path) {
            match decode(&existing, Some(&h)) {
                Ok(e) if e.outputs == entry.outputs => return Ok(StoreOutcome::AlreadyPresent),
                Ok(_) => {
                    log::warn!("conflicting persistent store for {h}; keeping the first entry");
                    return Ok(StoreOutcome::ConflictIgnored);
                }
                Err(_) => {}
            }
        }
        let n = self.tmp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = shard.join(format!(".{h}.{}.{n}.tmp", std::process::id()));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        // hard_link refuses to replace, which makes the first writer win.
        let outcome = match fs::hard_link(&tmp, &path) {
            Ok(()) => StoreOutcome::Stored,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let existing = fs::read(&path).map_err(io_err(&path))?;
                match decode(&existing, Some(&h)) {
                    Ok(e) if e.outputs == entry.outputs => StoreOutcome::AlreadyPresent,
                    Ok(_) => StoreOutcome::ConflictIgnored,
                    Err(_) => {
                        // Replace a corrupt file.
                        fs::rename(&tmp, &path).map_err(io_err(&path))?;
                        StoreOutcome::Stored
                    }
                }
            }
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                return Err(PersistError::Io { path, source: e });
            }
        };
        let _ = fs::remove_file(&tmp);
        if let Ok(d) = File::open(shard) {
            let _ = d.sync_all();
        }
        if outcome == StoreOutcome::Stored {
            let mut idx = self.index.lock().expect("index lock");
            let line = format!("{h} {}\n", entry.created_at);
            let index_path = self.dir.join("index.log");
            idx.write_all(line.as_bytes()).map_err(io_err(&index_path))?;
            idx.sync_data().map_err(io_err(&index_path))?;
        }
        Ok(outcome)
    }

    /// Paths of every entry file, sorted.
    pub fn files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if let Ok(shards) = fs::read_dir(&self.dir) {
            for shard in shards.flatten().filter(|s| s.path().is_dir()) {
                if let Ok(files) = fs::read_dir(shard.path()) {
                    for f in files.flatten() {
                        let p = f.path();
                        if p.extension().and_then(|e| e.to_str()) == Some("json") {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    pub fn len(&self) -> usize {
        self.files().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hashes listed in `index.log`.
    pub fn index_hashes(&self) -> BTreeSet<String> {
        let path = self.dir.join("index.log");
        let Ok(f) = File::open(&path) else { return BTreeSet::new() };
        BufReader::new(f)
            .lines()
            .map_while(Result::ok)
            .filter_map(|l| l.split_whitespace().next().map(str::to_string))
            .collect()
    }

    /// Re-hashes every file and cross-checks the index.
    pub fn verify(&self) -> VerifyReport {
        let mut report = VerifyReport::default();
        let mut on_disk = BTreeSet::new();
        for p in self.files() {
            report.checked += 1;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
            let ok = fs::read(&p).map_err(|e| e.to_string()).and_then(|b| decode(&b, Some(&stem))).is_ok();
            if !ok {
                report.corrupt.push(p);
            }
            on_disk.insert(stem);
        }
        let indexed = self.index_hashes();
        report.index_mismatches = indexed.symmetric_difference(&on_disk).cloned().collect();
        report
    }

    /// Every intact entry.
    pub fn entries(&self) -> Vec<CacheEntry> {
        self.files().iter().filter_map(|p| fs::read(p).ok().and_then(|b| decode(&b, None).ok())).collect()
    }

    /// Deletes entries created before `cutoff` (unix seconds) and rewrites the index.
    pub fn gc(&self, cutoff: u64) -> Result<usize, PersistError> {
        let mut removed = 0;
        let mut keep = Vec::new();
        for p in self.files() {
            let entry = fs::read(&p).ok().and_then(|b| decode(&b, None).ok());
            match entry {
                Some(e) if e.created_at >= cutoff => keep.push((e.key.hash(), e.created_at)),
                _ => {
                    fs::remove_file(&p).map_err(io_err(&p))?;
                    removed += 1;
                }
            }
        }
        let mut idx = self.index.lock().expect("index lock");
        let index_path = self.dir.join("index.log");
        let tmp = self.dir.join("index.log.tmp");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            for (h, t) in &keep {
                writeln!(f, "{h} {t}").map_err(io_err(&tmp))?;
            }
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &index_path).map_err(io_err(&index_path))?;
        *idx = OpenOptions::new().append(true).open(&index_path).map_err(io_err(&index_path))?;
        Ok(removed)
    }
}
