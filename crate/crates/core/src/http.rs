//! Blocking JSON-over-HTTP plumbing shared by the remote embedding and chat
//! providers: a swappable transport, the retry policy, and a cap on
//! concurrent in-flight requests.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Failure below the HTTP layer: DNS, connect, TLS, timeout.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// [`HttpTransport`] backed by `ureq`.
#[derive(Debug, Default)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req
            .send(body.as_bytes())
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Exponential backoff: attempt `n` (0-based) that fails waits
/// `base_delay * factor^n` before the next attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        self.base_delay * self.factor.pow(failed_attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    #[error("provider unreachable after {attempts} attempts: {last_error}")]
    Unreachable { attempts: u32, last_error: String },
    #[error("provider rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// POSTs `body`, retrying transport failures and 5xx/429 responses.
/// Returns the first 2xx response; any other status fails immediately.
pub fn post_with_retry(
    transport: &dyn HttpTransport,
    sleeper: &dyn Sleeper,
    policy: &RetryPolicy,
    url: &str,
    headers: &[(String, String)],
    body: &str,
    timeout: Duration,
) -> Result<HttpResponse, CallError> {
    let attempts = policy.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 0..attempts {
        match transport.post_json(url, headers, body, timeout) {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp),
            Ok(resp) if retryable(resp.status) => {
                last_error = format!("HTTP {}: {}", resp.status, truncate(&resp.body, 200));
            }
            Ok(resp) => {
                return Err(CallError::Rejected {
                    status: resp.status,
                    body: truncate(&resp.body, 500),
                })
            }
            Err(e) => last_error = e.0,
        }
        tracing::warn!(attempt = attempt + 1, url, error = %last_error, "provider call failed");
        if attempt + 1 < attempts {
            sleeper.sleep(policy.delay_after(attempt));
        }
    }
    Err(CallError::Unreachable {
        attempts,
        last_error,
    })
}

pub(crate) fn truncate(s: &str, max_chars: usize) -> String {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

/// Counting semaphore capping concurrent provider calls.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InflightPermit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InflightPermit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.active.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.limiter.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.limiter.freed.notify_one();
    }
}

/// `Authorization` header for an optional bearer token.
pub(crate) fn auth_headers(api_key: Option<&str>) -> Vec<(String, String)> {
    api_key
        .filter(|k| !k.is_empty())
        .map(|k| vec![("Authorization".to_string(), format!("Bearer {k}"))])
        .unwrap_or_default()
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use std::sync::Arc;

    fn call(t: &ScriptedTransport, s: &RecordingSleeper) -> Result<HttpResponse, CallError> {
        post_with_retry(t, s, &RetryPolicy::default(), "http://x", &[], "{}", Duration::from_secs(1))
    }

    #[test]
    fn succeeds_after_two_failures() {
        let t = ScriptedTransport::new(vec![down(), status(503), ok("fine")]);
        let s = RecordingSleeper::default();
        assert_eq!(call(&t, &s).unwrap().body, "fine");
        assert_eq!(t.calls(), 3);
        assert_eq!(
            *s.delays.lock().unwrap(),
            vec![Duration::from_millis(250), Duration::from_millis(500)]
        );
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let t = ScriptedTransport::new(vec![down(), status(429), status(500), ok("late")]);
        let s = RecordingSleeper::default();
        let err = call(&t, &s).unwrap_err();
        assert!(matches!(err, CallError::Unreachable { attempts: 3, .. }));
        assert_eq!(t.calls(), 3);
        assert_eq!(s.delays.lock().unwrap().len(), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = ScriptedTransport::new(vec![status(400), ok("never")]);
        let s = RecordingSleeper::default();
        assert!(matches!(call(&t, &s), Err(CallError::Rejected { status: 400, .. })));
        assert_eq!(t.calls(), 1);
        assert!(s.delays.lock().unwrap().is_empty());
    }

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = Arc::new(InflightLimiter::new(2));
        let peak = Arc::new(Mutex::new(0usize));
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let limiter = Arc::clone(&limiter);
                let peak = Arc::clone(&peak);
                scope.spawn(move || {
                    let _permit = limiter.acquire();
                    let now = limiter.in_flight();
                    let mut p = peak.lock().unwrap();
                    *p = (*p).max(now);
                    drop(p);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }

    #[test]
    fn bearer_header_only_when_key_set() {
        assert!(auth_headers(None).is_empty());
        assert!(auth_headers(Some("")).is_empty());
        assert_eq!(auth_headers(Some("k"))[0].1, "Bearer k");
    }
}
