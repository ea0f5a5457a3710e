//! Chat-completions HTTP client.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{network_forbidden, BackendError, GenRequest, GenResponse, PriceTable, ThoughtGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub timeout_s: u64,
    pub prices: PriceTable,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-4o".to_string(),
            api_key_env: "FOT_API_KEY".to_string(),
            max_in_flight: 8,
            retries: 3,
            timeout_s: 120,
            prices: PriceTable::default(),
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore wait");
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    id: String,
    config: HttpConfig,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            id: format!("http:{}:{}", config.base_url, config.model),
            slots: Semaphore { free: Mutex::new(config.max_in_flight.max(1)), cv: Condvar::new() },
            config,
            agent,
        }
    }

    fn body(&self, req: &GenRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "n": req.n,
        });
        if let Some(m) = req.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if req.want_logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }

    fn call_once(&self, key: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(body)
            .map_err(|e| BackendError::Http { status: 0, message: e.to_string() })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let message = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Http { status, message });
        }
        resp.body_mut().read_json::<Value>().map_err(|e| BackendError::Http { status, message: e.to_string() })
    }
}

/// (completions, prompt tokens, completion tokens, per-token logprobs).
type Parsed = (Vec<String>, u64, u64, Option<Vec<Vec<f64>>>);

fn parse_response(v: &Value) -> Result<Parsed, BackendError> {
    let bad = |m: &str| BackendError::Http { status: 200, message: m.to_string() };
    let choices = v["choices"].as_array().ok_or_else(|| bad("response has no choices"))?;
    let texts = choices.iter().map(|c| c["message"]["content"].as_str().unwrap_or("").to_string()).collect();
    let logprobs = choices
        .iter()
        .map(|c| {
            c["logprobs"]["content"]
                .as_array()
                .map(|toks| toks.iter().filter_map(|t| t["logprob"].as_f64()).collect::<Vec<_>>())
        })
        .collect::<Option<Vec<_>>>();
    let usage = &v["usage"];
    Ok((texts, usage["prompt_tokens"].as_u64().unwrap_or(0), usage["completion_tokens"].as_u64().unwrap_or(0), logprobs))
}

impl ThoughtGenerator for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        req.validate()?;
        if network_forbidden() {
            return Err(BackendError::NetworkForbidden);
        }
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| BackendError::Invalid(format!("environment variable {} is not set", self.config.api_key_env)))?;
        let body = self.body(req);
        let _slot = self.slots.acquire();
        let start = Instant::now();
        let mut attempt = 0;
        let v = loop {
            match self.call_once(&key, &body) {
                Ok(v) => break v,
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    log::warn!("retrying backend call after error: {e}");
                    std::thread::sleep(Duration::from_millis(500 << attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let (texts, prompt_tokens, completion_tokens, logprobs) = parse_response(&v)?;
        Ok(GenResponse {
            texts,
            prompt_tokens,
            completion_tokens,
            cost_usd: self.config.prices.cost(prompt_tokens, completion_tokens),
            latency_ms: start.elapsed().as_millis() as u64,
            logprobs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{forbid_network, Message};

    #[test]
    fn request_body_has_chat_shape() {
        let b = HttpBackend::new(HttpConfig::default());
        let req = GenRequest::new(vec![Message::system("s"), Message::user("u")]).with_n(2);
        let body = b.body(&req);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["n"], 2);
        assert!(body.get("max_tokens").is_none());
    }

    #[test]
    fn parses_choices_and_usage() {
        let v = json!({"choices": [{"message": {"content": "4"}}], "usage": {"prompt_tokens": 10, "completion_tokens": 1}});
        let (texts, p, c, lp) = parse_response(&v).unwrap();
        assert_eq!((texts, p, c, lp), (vec!["4".to_string()], 10, 1, None));
    }

    #[test]
    fn guard_blocks_network() {
        forbid_network(true);
        let b = HttpBackend::new(HttpConfig { base_url: "http://127.0.0.1:9".into(), ..Default::default() });
        let r = b.generate(&GenRequest::new(vec![Message::user("x")]));
        forbid_network(false);
        assert_eq!(r, Err(BackendError::NetworkForbidden));
    }
}
