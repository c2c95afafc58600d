//! Exponential backoff with full jitter. The parameters are fixed constants.

use std::time::Duration;

use rand::Rng;

pub const BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const BACKOFF_FACTOR: u32 = 2;
/// Upper bound on any single ceiling so that large retry counts stay sane.
pub const BACKOFF_MAX: Duration = Duration::from_secs(64);

/// Ceiling of the delay before retry number `attempt` (0-based):
/// `base * factor^attempt`, capped at [`BACKOFF_MAX`].
pub fn backoff_ceiling(attempt: u32) -> Duration {
    let factor = BACKOFF_FACTOR.checked_pow(attempt).unwrap_or(u32::MAX);
    BACKOFF_BASE.checked_mul(factor).unwrap_or(BACKOFF_MAX).min(BACKOFF_MAX)
}

/// Full jitter: uniform in `[0, ceiling]`.
pub fn full_jitter_delay<R: Rng + ?Sized>(attempt: u32, rng: &mut R) -> Duration {
    let ceiling = backoff_ceiling(attempt);
    Duration::from_secs_f64(rng.gen_range(0.0..=ceiling.as_secs_f64()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
}

impl RetryPolicy {
    pub fn max_attempts(&self) -> u32 {
        1 + self.max_retries
    }
}
