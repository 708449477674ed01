//! Token bucket shared by concurrent trees calling one endpoint.

use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    /// `per_second` must be positive; the bucket starts full.
    pub fn new(capacity: u32, per_second: f64) -> Self {
        assert!(per_second > 0.0, "refill rate must be positive");
        let capacity = f64::from(capacity.max(1));
        Self {
            capacity,
            per_second,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn refill(&self, state: &mut (f64, Instant)) {
        let now = Instant::now();
        let gained = now.duration_since(state.1).as_secs_f64() * self.per_second;
        state.0 = (state.0 + gained).min(self.capacity);
        state.1 = now;
    }

    pub fn try_acquire(&self) -> bool {
        let mut s = self.state.lock();
        self.refill(&mut s);
        if s.0 >= 1.0 {
            s.0 -= 1.0;
            true
        } else {
            false
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock();
                self.refill(&mut s);
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.per_second
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_throttle() {
        let b = TokenBucket::new(2, 1000.0);
        assert!(b.try_acquire());
        assert!(b.try_acquire());
        let start = Instant::now();
        b.acquire();
        assert!(start.elapsed() < Duration::from_millis(500));
    }

    #[test]
    fn empty_bucket_refuses() {
        let b = TokenBucket::new(1, 0.001);
        assert!(b.try_acquire());
        assert!(!b.try_acquire());
    }
}
