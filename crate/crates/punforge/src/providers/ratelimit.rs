//! Sliding-window rate limiter, one per live provider.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::clock::Clock;

const WINDOW: Duration = Duration::from_secs(60);

/// Admits at most `limit` requests in any sliding 60-second window,
/// sleeping callers until a slot frees up. Timestamps come from the
/// injected clock, so the window property is testable without waiting.
pub struct RateLimiter {
    limit: u32,
    clock: Arc<dyn Clock>,
    window: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(limit_per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            limit: limit_per_minute.max(1),
            clock,
            window: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (via the clock) until a request slot is available, then claims it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let now = self.clock.now();
                let mut window = self.window.lock().unwrap();
                while window.front().is_some_and(|&t| t + WINDOW <= now) {
                    window.pop_front();
                }
                if (window.len() as u32) < self.limit {
                    window.push_back(now);
                    return;
                }
                // oldest entry leaves the window first; never holds the lock
                // across the sleep
                *window.front().unwrap() + WINDOW - now
            };
            self.clock.sleep(wait);
        }
    }

    /// Timestamps currently inside the window (for assertions).
    pub fn admitted(&self) -> Vec<Duration> {
        self.window.lock().unwrap().iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ManualClock;

    /// Replays admission timestamps and checks no 60 s window exceeds `limit`.
    fn assert_window_property(times: &[Duration], limit: usize) {
        for (i, &start) in times.iter().enumerate() {
            let in_window = times[i..]
                .iter()
                .take_while(|&&t| t < start + WINDOW)
                .count();
            assert!(
                in_window <= limit,
                "window starting at {start:?} admitted {in_window} > {limit}"
            );
        }
    }

    #[test]
    fn admits_up_to_limit_without_sleeping() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::new(3, clock.clone());
        for _ in 0..3 {
            limiter.acquire();
        }
        assert!(clock.sleeps().is_empty());
    }

    #[test]
    fn burst_beyond_limit_is_spread_over_windows() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::new(3, clock.clone());
        let mut admitted = Vec::new();
        for _ in 0..8 {
            limiter.acquire();
            admitted.push(clock.now());
        }
        assert!(!clock.sleeps().is_empty());
        assert_window_property(&admitted, 3);
    }

    #[test]
    fn slots_free_after_window_passes() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::new(2, clock.clone());
        limiter.acquire();
        limiter.acquire();
        clock.advance(Duration::from_secs(61));
        limiter.acquire();
        assert!(clock.sleeps().is_empty());
    }
}
