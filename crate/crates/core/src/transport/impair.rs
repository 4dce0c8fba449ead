//! Deterministic loss and delay applied to outgoing traffic.
//!
//! This is a test shim: endpoints only carry it when configured explicitly,
//! and it must be installed before traffic starts.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TransportError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkConditions {
    /// Probability in `[0, 1]` that a frame is dropped.
    pub loss_rate: f64,
    pub delay: Duration,
    /// Uniform jitter in `[-jitter, +jitter]` added to `delay`.
    pub jitter: Duration,
    pub seed: u64,
    /// Specific `(msg_seq, frag_index)` frames to drop regardless of `loss_rate`.
    pub drop_fragments: Vec<(u64, u16)>,
}

impl NetworkConditions {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(0.0..=1.0).contains(&self.loss_rate) || self.loss_rate.is_nan() {
            return Err(TransportError::Config(format!(
                "loss_rate {} outside [0, 1]",
                self.loss_rate
            )));
        }
        Ok(())
    }

    pub fn delay_ms(delay: u64, jitter: u64, seed: u64) -> Self {
        NetworkConditions {
            delay: Duration::from_millis(delay),
            jitter: Duration::from_millis(jitter),
            seed,
            ..Default::default()
        }
    }

    pub fn loss(loss_rate: f64, seed: u64) -> Self {
        NetworkConditions {
            loss_rate,
            seed,
            ..Default::default()
        }
    }
}

pub(crate) enum Verdict {
    Drop,
    Send,
    SendAt(Instant),
}

pub(crate) struct Impairment {
    conditions: NetworkConditions,
    rng: ChaCha8Rng,
    last_release: Option<Instant>,
}

impl Impairment {
    pub fn new(conditions: NetworkConditions) -> Result<Self, TransportError> {
        conditions.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(conditions.seed);
        Ok(Impairment {
            conditions,
            rng,
            last_release: None,
        })
    }

    pub fn delays(&self) -> bool {
        !self.conditions.delay.is_zero() || !self.conditions.jitter.is_zero()
    }

    /// Draws the fate of one frame. With `keep_order`, release times never
    /// decrease (streams cannot reorder).
    pub fn decide(&mut self, seq: u64, frag: u16, keep_order: bool) -> Verdict {
        let lost = self.rng.random::<f64>() < self.conditions.loss_rate;
        let jitter_ns = self.conditions.jitter.as_nanos() as i128;
        let offset = if jitter_ns > 0 {
            self.rng.random_range(-jitter_ns..=jitter_ns)
        } else {
            0
        };
        if lost || self.conditions.drop_fragments.contains(&(seq, frag)) {
            return Verdict::Drop;
        }
        if !self.delays() {
            return Verdict::Send;
        }
        let total = (self.conditions.delay.as_nanos() as i128 + offset).max(0) as u64;
        let mut release = Instant::now() + Duration::from_nanos(total);
        if keep_order {
            if let Some(last) = self.last_release {
                release = release.max(last);
            }
            self.last_release = Some(release);
        }
        Verdict::SendAt(release)
    }
}

/// Background thread releasing items at their scheduled instants.
pub(crate) struct DelayLine<T: Send + 'static> {
    tx: Option<SyncSender<(Instant, u64, T)>>,
    counter: u64,
    thread: Option<JoinHandle<()>>,
}

struct Pending<T> {
    at: Instant,
    order: u64,
    item: T,
}

impl<T> PartialEq for Pending<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}
impl<T> Eq for Pending<T> {}
impl<T> PartialOrd for Pending<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Pending<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

impl<T: Send + 'static> DelayLine<T> {
    pub fn spawn<F>(capacity: usize, mut release: F) -> Self
    where
        F: FnMut(T) -> bool + Send + 'static,
    {
        let (tx, rx) = mpsc::sync_channel::<(Instant, u64, T)>(capacity);
        let thread = thread::Builder::new()
            .name("flexpipe-delay".into())
            .spawn(move || {
                let mut heap: BinaryHeap<Reverse<Pending<T>>> = BinaryHeap::new();
                let mut open = true;
                while open || !heap.is_empty() {
                    let now = Instant::now();
                    while heap.peek().is_some_and(|p| p.0.at <= now) {
                        let Reverse(p) = heap.pop().unwrap();
                        if !release(p.item) {
                            return;
                        }
                    }
                    let wait = heap
                        .peek()
                        .map(|p| p.0.at.saturating_duration_since(Instant::now()))
                        .unwrap_or(Duration::from_millis(50));
                    if !open {
                        thread::sleep(wait);
                        continue;
                    }
                    match rx.recv_timeout(wait) {
                        Ok((at, order, item)) => heap.push(Reverse(Pending { at, order, item })),
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => open = false,
                    }
                }
            })
            .expect("spawn delay line");
        DelayLine {
            tx: Some(tx),
            counter: 0,
            thread: Some(thread),
        }
    }

    /// Schedules `item`; waits only if the line already holds `capacity` items.
    pub fn schedule(&mut self, at: Instant, item: T) -> bool {
        self.counter += 1;
        match &self.tx {
            Some(tx) => tx.send((at, self.counter, item)).is_ok(),
            None => false,
        }
    }
}

impl<T: Send + 'static> DelayLine<T> {
    /// Releases everything still scheduled, then returns.
    pub fn flush(mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl<T: Send + 'static> Drop for DelayLine<T> {
    fn drop(&mut self) {
        // Closing the channel lets the thread flush what is scheduled and exit.
        self.tx.take();
        self.thread.take();
    }
}
