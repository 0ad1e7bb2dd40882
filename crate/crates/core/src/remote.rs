//! Blocking JSON-over-HTTP client shared by the remote generator and scorer:
//! bounded retries with exponential backoff and a cap on in-flight calls.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_ATTEMPTS: u32 = 3;
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: DEFAULT_ATTEMPTS,
            base_delay: Duration::from_millis(200),
            timeout: Duration::from_secs(60),
        }
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub(crate) struct JsonClient {
    base_url: String,
    agent: ureq::Agent,
    policy: RetryPolicy,
    limiter: Limiter,
}

impl JsonClient {
    pub fn new(base_url: &str, policy: RetryPolicy, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(policy.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient {
            base_url: base_url.trim_end_matches('/').to_owned(),
            agent,
            policy,
            limiter: Limiter::new(max_in_flight),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// POSTs `body` to `base_url + path`. Anything but a 200 with a decodable
    /// body counts as a failed attempt.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{}", self.base_url, path);
        let attempts = self.policy.attempts.max(1);
        let mut delay = self.policy.base_delay;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.post_once(&url, body)
            };
            match outcome {
                Ok(r) => return Ok(r),
                Err(msg) => {
                    log::warn!("POST {url} attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                }
            }
            if attempt < attempts {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::Transport {
            attempts,
            message: format!("{url}: {last}"),
        })
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, String> {
        let mut resp = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(format!("HTTP {status}"));
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| format!("bad response body: {e}"))
    }
}
