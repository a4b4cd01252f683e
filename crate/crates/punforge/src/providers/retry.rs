//! Bounded retry with geometric backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::clock::Clock;
use super::ProviderError;

/// Retry and rate-limit settings shared by every provider call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total invocations, first try included.
    pub max_attempts: u32,
    /// Sleep after the first failed attempt, in milliseconds.
    pub base_backoff_ms: u64,
    /// Each further sleep multiplies by this factor.
    pub backoff_factor: f64,
    /// Requests per provider per sliding 60-second window.
    pub rate_limit_rpm: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 1000,
            backoff_factor: 2.0,
            rate_limit_rpm: 60,
        }
    }
}

impl RetryPolicy {
    pub fn base_backoff(&self) -> Duration {
        Duration::from_millis(self.base_backoff_ms)
    }

    /// Sleep before attempt `attempt + 1`, i.e. after the `attempt`-th failure.
    pub fn backoff_for(&self, attempt: u32) -> Duration {
        let factor = self.backoff_factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(self.base_backoff().as_secs_f64() * factor)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("max_attempts must be >= 1".into());
        }
        if self.backoff_factor < 1.0 {
            return Err("backoff_factor must be >= 1".into());
        }
        Ok(())
    }
}

/// Runs `op` up to `policy.max_attempts` times, sleeping
/// `base * factor^(attempt-1)` between attempts. Non-retryable errors and the
/// first success end the loop; the last error is propagated on exhaustion.
///
/// Returns the result together with the number of attempts actually made.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    clock: &dyn Clock,
    mut op: impl FnMut(u32) -> Result<T, ProviderError>,
) -> (Result<T, ProviderError>, u32) {
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op(attempt) {
            Ok(value) => return (Ok(value), attempt),
            Err(err) => {
                if attempt >= max || !err.is_retryable() {
                    return (Err(err), attempt);
                }
                clock.sleep(policy.backoff_for(attempt));
            }
        }
    }
}
