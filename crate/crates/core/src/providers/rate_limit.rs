use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::Clock;

/// Admits at most `limit` request starts in any sliding window.
///
/// Shared by every worker talking to the same provider.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(limit: u32, window: Duration) -> Self {
        assert!(limit > 0, "rate limit must be positive");
        RateLimiter {
            limit: limit as usize,
            window,
            starts: Mutex::new(VecDeque::with_capacity(limit as usize)),
        }
    }

    pub fn per_minute(limit: u32) -> Self {
        Self::new(limit, Duration::from_secs(60))
    }

    /// Blocks until a start is admitted, then records it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().expect("rate limiter poisoned");
                let now = clock.now();
                while starts
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= self.window)
                {
                    starts.pop_front();
                }
                if starts.len() < self.limit {
                    starts.push_back(now);
                    return;
                }
                let oldest = *starts.front().expect("window is full");
                self.window - now.duration_since(oldest)
            };
            clock.sleep(wait);
        }
    }
}
