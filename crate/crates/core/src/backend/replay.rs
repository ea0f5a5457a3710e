//! Record/replay of backend sessions as JSONL.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{BackendError, GenRequest, GenResponse, ThoughtGenerator};
use crate::canonical;

/// One line of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub request_hash: String,
    pub request: GenRequest,
    pub response: GenResponse,
}

/// Forwards to an inner backend and appends every exchange to a JSONL file.
pub struct RecordingBackend {
    inner: Arc<dyn ThoughtGenerator>,
    out: Mutex<File>,
}

impl RecordingBackend {
    pub fn create(inner: Arc<dyn ThoughtGenerator>, path: &Path) -> Result<Self, BackendError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Io(e.to_string()))?;
        Ok(RecordingBackend { inner, out: Mutex::new(file) })
    }
}

impl ThoughtGenerator for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let response = self.inner.generate(req)?;
        let line = RecordLine { request_hash: req.request_hash(), request: req.clone(), response: response.clone() };
        let mut text = canonical::to_canonical_string(&line).map_err(|e| BackendError::Io(e.to_string()))?;
        text.push('\n');
        let mut f = self.out.lock().expect("record file lock");
        f.write_all(text.as_bytes()).map_err(|e| BackendError::Io(e.to_string()))?;
        Ok(response)
    }
}

/// Serves responses from a record file; never performs I/O after loading.
pub struct ReplayBackend {
    id: String,
    responses: BTreeMap<String, GenResponse>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let f = File::open(path).map_err(|e| BackendError::Io(e.to_string()))?;
        let mut responses = BTreeMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine =
                serde_json::from_str(&line).map_err(|e| BackendError::Io(format!("line {}: {e}", i + 1)))?;
            // First recording of a request wins.
            responses.entry(rec.request_hash).or_insert(rec.response);
        }
        Ok(ReplayBackend { id: "replay".to_string(), responses })
    }

    /// Replays under the identity of the recorded backend so cache keys match.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ThoughtGenerator for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let h = req.request_hash();
        self.responses.get(&h).cloned().ok_or(BackendError::ReplayMiss(h))
    }
}
