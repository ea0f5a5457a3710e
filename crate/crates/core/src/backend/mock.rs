//! Deterministic mock backend with simulated latency and token costs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{prompt_tokens, token_proxy, BackendError, GenRequest, GenResponse, PriceTable, ThoughtGenerator};
use crate::canonical;

/// Produces the text of sample `ordinal` for a request. Must be a pure function.
pub trait Responder: Send + Sync {
    fn respond(&self, req: &GenRequest, ordinal: u32) -> Result<String, BackendError>;
}

impl Responder for Box<dyn Responder> {
    fn respond(&self, req: &GenRequest, ordinal: u32) -> Result<String, BackendError> {
        (**self).respond(req, ordinal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { ms: u64 },
    Uniform { lo_ms: u64, hi_ms: u64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed { ms: 100 }
    }
}

impl LatencyModel {
    /// Latency of one call, seeded by the request so it is reproducible.
    pub fn sample(&self, req: &GenRequest) -> u64 {
        match *self {
            LatencyModel::Fixed { ms } => ms,
            LatencyModel::Uniform { lo_ms, hi_ms } => {
                let mut rng = ChaCha8Rng::seed_from_u64(canonical::seed_from(&["latency", &req.request_hash()]));
                rng.random_range(lo_ms..=hi_ms.max(lo_ms))
            }
        }
    }
}

/// Wraps a [`Responder`] with token counting, pricing and latency.
pub struct MockBackend {
    id: String,
    responder: Box<dyn Responder>,
    latency: LatencyModel,
    prices: PriceTable,
    real_sleep: bool,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, responder: impl Responder + 'static) -> Self {
        MockBackend {
            id: id.into(),
            responder: Box::new(responder),
            latency: LatencyModel::default(),
            prices: PriceTable::default(),
            real_sleep: false,
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_prices(mut self, prices: PriceTable) -> Self {
        self.prices = prices;
        self
    }

    /// Actually sleep for the simulated latency; for wall-clock runs.
    pub fn with_real_sleep(mut self, sleep: bool) -> Self {
        self.real_sleep = sleep;
        self
    }

    /// Number of `generate` calls served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ThoughtGenerator for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        req.validate()?;
        let texts = (0..req.n)
            .map(|i| self.responder.respond(req, req.sample_offset + i))
            .collect::<Result<Vec<_>, _>>()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt_tokens = prompt_tokens(&req.messages);
        let completion_tokens = texts.iter().map(|t| token_proxy(t)).sum();
        let latency_ms = self.latency.sample(req);
        if self.real_sleep {
            std::thread::sleep(Duration::from_millis(latency_ms));
        }
        Ok(GenResponse {
            texts,
            prompt_tokens,
            completion_tokens,
            cost_usd: self.prices.cost(prompt_tokens, completion_tokens),
            latency_ms,
            logprobs: None,
        })
    }
}

/// Table lookup keyed by the normalized prompt and sample ordinal.
///
/// An entry registered without an ordinal answers every ordinal that has no
/// specific entry.
#[derive(Debug, Clone, Default)]
pub struct ScriptedResponder {
    by_ordinal: BTreeMap<(String, u32), String>,
    any_ordinal: BTreeMap<String, String>,
}

impl ScriptedResponder {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(req: &GenRequest) -> String {
        req.prompt_hash()
    }

    /// Script `text` for every sample of a single-user-message prompt.
    pub fn with_user(mut self, prompt: &str, text: &str) -> Self {
        let req = GenRequest::new(vec![super::Message::user(prompt)]);
        self.any_ordinal.insert(Self::key(&req), text.to_string());
        self
    }

    pub fn insert(&mut self, req: &GenRequest, ordinal: Option<u32>, text: impl Into<String>) {
        match ordinal {
            Some(o) => {
                self.by_ordinal.insert((Self::key(req), o), text.into());
            }
            None => {
                self.any_ordinal.insert(Self::key(req), text.into());
            }
        }
    }
}

impl Responder for ScriptedResponder {
    fn respond(&self, req: &GenRequest, ordinal: u32) -> Result<String, BackendError> {
        let key = Self::key(req);
        if let Some(t) = self.by_ordinal.get(&(key.clone(), ordinal)) {
            return Ok(t.clone());
        }
        self.any_ordinal.get(&key).cloned().ok_or_else(|| BackendError::MockMiss(key[..12].to_string()))
    }
}
