//! Monotonic time sources used for latency measurement.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// A monotonic clock. `now` returns the time elapsed since an arbitrary,
/// fixed origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;

    fn seconds_since(&self, start: Duration) -> f64 {
        self.now().saturating_sub(start).as_secs_f64()
    }
}

/// Wall clock backed by [`Instant`].
#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Deterministic clock that advances by a fixed step on every reading.
///
/// Benchmark runs driven by this clock produce reproducible latencies, which
/// makes reports byte-comparable across runs.
#[derive(Debug)]
pub struct StepClock {
    step_nanos: u64,
    ticks: AtomicU64,
}

impl StepClock {
    pub fn new(step: Duration) -> Self {
        Self {
            step_nanos: step.as_nanos() as u64,
            ticks: AtomicU64::new(0),
        }
    }
}

impl Clock for StepClock {
    fn now(&self) -> Duration {
        let tick = self.ticks.fetch_add(1, Ordering::SeqCst);
        Duration::from_nanos(tick * self.step_nanos)
    }
}
