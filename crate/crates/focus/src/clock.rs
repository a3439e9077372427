//! Monotonic time source, replaceable by a scripted clock in tests.
//!
//! Cache eviction compares row idle times against computed lifetimes, so the
//! tests that exercise it need full control over "now".

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

#[derive(Clone)]
pub struct Clock {
    inner: ClockInner,
}

#[derive(Clone)]
enum ClockInner {
    Monotonic(Instant),
    Scripted(Arc<AtomicU64>),
}

impl Clock {
    pub fn monotonic() -> Self {
        Clock {
            inner: ClockInner::Monotonic(Instant::now()),
        }
    }

    /// Clock driven by the returned handle; starts at zero.
    pub fn scripted() -> (Self, Arc<AtomicU64>) {
        let handle = Arc::new(AtomicU64::new(0));
        (
            Clock {
                inner: ClockInner::Scripted(handle.clone()),
            },
            handle,
        )
    }

    pub fn now_ms(&self) -> u64 {
        match &self.inner {
            ClockInner::Monotonic(base) => base.elapsed().as_millis() as u64,
            ClockInner::Scripted(t) => t.load(Ordering::Acquire),
        }
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::monotonic()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_clock_follows_handle() {
        let (clock, handle) = Clock::scripted();
        assert_eq!(clock.now_ms(), 0);
        handle.store(1500, Ordering::Release);
        assert_eq!(clock.now_ms(), 1500);
    }
}
