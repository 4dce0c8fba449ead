//! Timestamps and cooperative stop signalling.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Condvar, Mutex};

struct Anchor {
    instant: Instant,
    epoch_ns: u64,
}

static ANCHOR: OnceLock<Anchor> = OnceLock::new();

/// Nanoseconds since the Unix epoch.
///
/// The wall clock is sampled once per process; afterwards time advances with
/// the monotonic clock, so deltas between two readings in one process never go
/// backwards.
pub fn now_ns() -> u64 {
    let anchor = ANCHOR.get_or_init(|| Anchor {
        instant: Instant::now(),
        epoch_ns: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0),
    });
    anchor.epoch_ns + anchor.instant.elapsed().as_nanos() as u64
}

pub fn ns_to_ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

/// A clonable stop flag whose sleeps wake up early when stop is requested.
#[derive(Clone, Default)]
pub struct StopToken {
    inner: Arc<StopInner>,
}

#[derive(Default)]
struct StopInner {
    flag: AtomicBool,
    lock: Mutex<()>,
    cv: Condvar,
}

impl StopToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        let _guard = self.inner.lock.lock();
        self.inner.flag.store(true, Ordering::SeqCst);
        self.inner.cv.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        self.inner.flag.load(Ordering::SeqCst)
    }

    /// Sleeps until `deadline`. Returns `true` if stop was requested first.
    pub fn sleep_until(&self, deadline: Instant) -> bool {
        let mut guard = self.inner.lock.lock();
        loop {
            if self.inner.flag.load(Ordering::SeqCst) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            self.inner.cv.wait_until(&mut guard, deadline);
        }
    }

    pub fn sleep(&self, duration: Duration) -> bool {
        self.sleep_until(Instant::now() + duration)
    }
}

impl std::fmt::Debug for StopToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StopToken")
            .field("stopped", &self.is_stopped())
            .finish()
    }
}
