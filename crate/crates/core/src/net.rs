//! Blocking HTTP with per-host rate limiting and exponential backoff, shared by
//! the chat, embedding, search and page-fetch clients.

use std::collections::HashMap;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpPolicy {
    pub timeout: Duration,
    /// Retries after the first attempt on transport errors, 429 and 5xx.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Minimum spacing between requests to the same host.
    pub min_interval: Duration,
}

impl Default for HttpPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            max_retries: 4,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            min_interval: Duration::ZERO,
        }
    }
}

impl HttpPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// Spaces requests per host by at least `min_interval`. Slots are reserved
/// under the lock and slept on outside it, so concurrent callers queue up.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            next_slot: Default::default(),
        }
    }

    pub fn acquire(&self, host: &str) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait_until = {
            let mut slots = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = slots.get(host).copied().filter(|t| *t > now).unwrap_or(now);
            slots.insert(host.to_string(), slot + self.min_interval);
            slot
        };
        let now = Instant::now();
        if wait_until > now {
            thread::sleep(wait_until - now);
        }
    }
}

pub struct PoliteClient {
    http: reqwest::blocking::Client,
    policy: HttpPolicy,
    limiter: RateLimiter,
    bearer: Option<String>,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl PoliteClient {
    pub fn new(policy: HttpPolicy, bearer: Option<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(policy.timeout)
            .user_agent(concat!("dforge/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            http,
            limiter: RateLimiter::new(policy.min_interval),
            policy,
            bearer: bearer.filter(|k| !k.is_empty()),
        })
    }

    fn execute<T>(
        &self,
        url: &str,
        build: impl Fn() -> reqwest::blocking::RequestBuilder,
        read: impl Fn(reqwest::blocking::Response) -> Result<T>,
    ) -> Result<T> {
        let host = url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default();
        let mut last = String::new();
        for attempt in 0..=self.policy.max_retries {
            if attempt > 0 {
                let delay = self.policy.backoff(attempt - 1);
                warn!("retrying {url} in {delay:?} after: {last}");
                thread::sleep(delay);
            }
            self.limiter.acquire(&host);
            let mut req = build();
            if let Some(key) = &self.bearer {
                req = req.bearer_auth(key);
            }
            let outcome = match req.send() {
                Err(e) => Attempt::Retry(e.to_string()),
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        Attempt::Done(read(resp)?)
                    } else if status.as_u16() == 429 || status.is_server_error() {
                        Attempt::Retry(format!("HTTP {status}"))
                    } else {
                        let body = resp.text().unwrap_or_default();
                        return Err(Error::Transport(format!(
                            "HTTP {status} from {url}: {}",
                            body.chars().take(200).collect::<String>()
                        )));
                    }
                }
            };
            match outcome {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(msg) => {
                    debug!("attempt {attempt} for {url} failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(Error::Transport(format!(
            "{url}: giving up after {} attempts: {last}",
            self.policy.max_retries + 1
        )))
    }

    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R> {
        self.execute(
            url,
            || self.http.post(url).json(body),
            |resp| resp.json::<R>().map_err(|e| Error::Transport(e.to_string())),
        )
    }

    pub fn get_json<R: DeserializeOwned>(&self, url: &str, query: &[(&str, String)]) -> Result<R> {
        let full =
            url::Url::parse_with_params(url, query).map_err(|e| Error::Config(format!("invalid URL {url:?}: {e}")))?;
        self.execute(
            url,
            || self.http.get(full.clone()),
            |resp| resp.json::<R>().map_err(|e| Error::Transport(e.to_string())),
        )
    }

    pub fn get_text(&self, url: &str) -> Result<String> {
        self.execute(
            url,
            || self.http.get(url),
            |resp| resp.text().map_err(|e| Error::Transport(e.to_string())),
        )
    }
}
