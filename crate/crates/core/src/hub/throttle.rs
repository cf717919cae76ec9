/// Token bucket refilled continuously at `rate` tokens per second, holding at
/// most `rate` tokens.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    rate: u32,
    // millitokens, so refill stays exact at 1 ms resolution
    level: u64,
    last_ms: u64,
}

impl RateLimiter {
    pub fn new(rate_per_s: u32, now_ms: u64) -> Self {
        Self {
            rate: rate_per_s,
            level: u64::from(rate_per_s) * 1000,
            last_ms: now_ms,
        }
    }

    pub fn allow(&mut self, now_ms: u64) -> bool {
        let cap = u64::from(self.rate) * 1000;
        let dt = now_ms.saturating_sub(self.last_ms);
        self.last_ms = self.last_ms.max(now_ms);
        self.level = (self.level + dt * u64::from(self.rate)).min(cap);
        if self.level >= 1000 {
            self.level -= 1000;
            true
        } else {
            false
        }
    }
}
