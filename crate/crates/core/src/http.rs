//! Minimal JSON-over-HTTP plumbing shared by the remote generator and the
//! remote soft scorers. The transport is a trait so tests can swap in a
//! local server or a canned responder.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait HttpTransport: Send + Sync {
    /// `Err` means no response arrived (connection refused, timeout, ...).
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, String> {
        reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map(|client| ReqwestTransport { client })
            .map_err(|e| e.to_string())
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<HttpResponse, String> {
        let mut req = self.client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryFailure {
    pub status: Option<u16>,
    pub excerpt: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub limit: u32,
    pub backoff_ms: u64,
}

fn excerpt(s: &str) -> String {
    s.chars().take(200).collect()
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

/// Posts until a 2xx arrives, a non-retryable status is returned, or the
/// attempt limit is reached. Backoff doubles after each failed attempt.
pub fn post_with_retry(
    transport: &dyn HttpTransport,
    url: &str,
    headers: &[(String, String)],
    body: &Value,
    policy: RetryPolicy,
) -> Result<(HttpResponse, u32), RetryFailure> {
    let limit = policy.limit.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let failure = match transport.post_json(url, headers, body) {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok((resp, attempt)),
            Ok(resp) => {
                let f = RetryFailure {
                    status: Some(resp.status),
                    excerpt: excerpt(&resp.body),
                    attempts: attempt,
                };
                if !retryable(resp.status) {
                    return Err(f);
                }
                f
            }
            Err(e) => RetryFailure {
                status: None,
                excerpt: excerpt(&e),
                attempts: attempt,
            },
        };
        if attempt >= limit {
            return Err(failure);
        }
        log::warn!("attempt {attempt} to {url} failed ({:?}); retrying", failure.status);
        let delay = policy.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
        if delay > 0 {
            thread::sleep(Duration::from_millis(delay));
        }
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
pub struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

pub struct SlotGuard<'a>(&'a Slots);

impl Slots {
    pub fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}
