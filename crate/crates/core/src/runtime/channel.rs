//! Bounded single-producer single-consumer queue used for local connections
//! and as the hand-off buffer behind remote ports.
//!
//! Messages move through the queue by value, so payload buffers are never
//! copied. Waiting is done on condition variables: a blocked producer is
//! woken by a pop, a blocked consumer by a push or by close.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::message::Message;

struct State {
    buf: VecDeque<Message>,
    closed: bool,
    high_water: usize,
}

struct Shared {
    state: Mutex<State>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
}

impl Shared {
    fn close(&self) {
        let mut st = self.state.lock();
        st.closed = true;
        drop(st);
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum SendError {
    Closed(Message),
    Timeout(Message),
}

#[derive(Debug, PartialEq, Eq)]
pub enum TrySendError {
    Full(Message),
    Closed(Message),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecvError {
    /// The queue is closed and every queued message was consumed.
    Closed,
    Timeout,
}

/// Creates a queue holding at most `capacity` messages.
///
/// # Panics
///
/// Panics if `capacity` is zero.
pub fn bounded(capacity: usize) -> (QueueSender, QueueReceiver) {
    assert!(capacity >= 1, "queue capacity must be at least 1");
    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            buf: VecDeque::with_capacity(capacity.min(1024)),
            closed: false,
            high_water: 0,
        }),
        not_empty: Condvar::new(),
        not_full: Condvar::new(),
        capacity,
    });
    (
        QueueSender {
            shared: shared.clone(),
        },
        QueueReceiver { shared },
    )
}

/// Producer half. Dropping it closes the queue; the consumer still drains
/// what is buffered before seeing end-of-stream.
pub struct QueueSender {
    shared: Arc<Shared>,
}

/// Consumer half. Dropping it closes the queue and fails pending sends.
pub struct QueueReceiver {
    shared: Arc<Shared>,
}

/// Introspection and out-of-band close, held by the pipeline handle.
#[derive(Clone)]
pub struct QueueMonitor {
    shared: Arc<Shared>,
}

impl QueueSender {
    /// Waits for space. `timeout = None` waits until a pop or close.
    pub fn send(&self, msg: Message, timeout: Option<Duration>) -> Result<(), SendError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.shared.state.lock();
        loop {
            if st.closed {
                return Err(SendError::Closed(msg));
            }
            if st.buf.len() < self.shared.capacity {
                break;
            }
            match deadline {
                Some(d) => {
                    if self.shared.not_full.wait_until(&mut st, d).timed_out()
                        && st.buf.len() >= self.shared.capacity
                        && !st.closed
                    {
                        return Err(SendError::Timeout(msg));
                    }
                }
                None => self.shared.not_full.wait(&mut st),
            }
        }
        push_locked(&mut st, msg);
        drop(st);
        self.shared.not_empty.notify_one();
        Ok(())
    }

    /// Never waits; hands the message back when the queue is full.
    pub fn try_send(&self, msg: Message) -> Result<(), TrySendError> {
        let mut st = self.shared.state.lock();
        if st.closed {
            return Err(TrySendError::Closed(msg));
        }
        if st.buf.len() >= self.shared.capacity {
            return Err(TrySendError::Full(msg));
        }
        push_locked(&mut st, msg);
        drop(st);
        self.shared.not_empty.notify_one();
        Ok(())
    }

    /// Never waits; evicts the oldest queued message when full and returns it.
    pub fn push_displacing(&self, msg: Message) -> Result<Option<Message>, Message> {
        let mut st = self.shared.state.lock();
        if st.closed {
            return Err(msg);
        }
        let evicted = if st.buf.len() >= self.shared.capacity {
            st.buf.pop_front()
        } else {
            None
        };
        push_locked(&mut st, msg);
        drop(st);
        self.shared.not_empty.notify_one();
        Ok(evicted)
    }

    pub fn monitor(&self) -> QueueMonitor {
        QueueMonitor {
            shared: self.shared.clone(),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.shared.state.lock().closed
    }
}

fn push_locked(st: &mut State, msg: Message) {
    st.buf.push_back(msg);
    if st.buf.len() > st.high_water {
        st.high_water = st.buf.len();
    }
}

impl Drop for QueueSender {
    fn drop(&mut self) {
        self.shared.close();
    }
}

impl QueueReceiver {
    pub fn recv(&self, timeout: Option<Duration>) -> Result<Message, RecvError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.shared.state.lock();
        loop {
            if let Some(msg) = st.buf.pop_front() {
                drop(st);
                self.shared.not_full.notify_one();
                return Ok(msg);
            }
            if st.closed {
                return Err(RecvError::Closed);
            }
            match deadline {
                Some(d) => {
                    if self.shared.not_empty.wait_until(&mut st, d).timed_out()
                        && st.buf.is_empty()
                        && !st.closed
                    {
                        return Err(RecvError::Timeout);
                    }
                }
                None => self.shared.not_empty.wait(&mut st),
            }
        }
    }

    /// `Ok(None)` when nothing is queued; `Err(Closed)` once closed and drained.
    pub fn try_recv(&self) -> Result<Option<Message>, RecvError> {
        let mut st = self.shared.state.lock();
        if let Some(msg) = st.buf.pop_front() {
            drop(st);
            self.shared.not_full.notify_one();
            return Ok(Some(msg));
        }
        if st.closed {
            Err(RecvError::Closed)
        } else {
            Ok(None)
        }
    }

    pub fn monitor(&self) -> QueueMonitor {
        QueueMonitor {
            shared: self.shared.clone(),
        }
    }
}

impl Drop for QueueReceiver {
    fn drop(&mut self) {
        self.shared.close();
    }
}

impl QueueMonitor {
    pub fn len(&self) -> usize {
        self.shared.state.lock().buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity
    }

    /// Largest number of messages ever held at once.
    pub fn high_water(&self) -> usize {
        self.shared.state.lock().high_water
    }

    pub fn is_closed(&self) -> bool {
        self.shared.state.lock().closed
    }

    pub fn close(&self) {
        self.shared.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bytes::Bytes;
    use std::thread;

    fn msg(seq: u64) -> Message {
        let mut m = Message::new("t", Bytes::new());
        m.seq = seq;
        m
    }

    #[test]
    fn fifo_order() {
        let (tx, rx) = bounded(4);
        for i in 0..4 {
            tx.try_send(msg(i)).unwrap();
        }
        for i in 0..4 {
            assert_eq!(rx.try_recv().unwrap().unwrap().seq, i);
        }
        assert_eq!(rx.try_recv().unwrap(), None);
    }

    #[test]
    fn try_send_full_returns_message() {
        let (tx, _rx) = bounded(1);
        tx.try_send(msg(1)).unwrap();
        match tx.try_send(msg(2)) {
            Err(TrySendError::Full(m)) => assert_eq!(m.seq, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn displacing_push_evicts_oldest() {
        let (tx, rx) = bounded(2);
        tx.push_displacing(msg(1)).unwrap();
        tx.push_displacing(msg(2)).unwrap();
        let evicted = tx.push_displacing(msg(3)).unwrap();
        assert_eq!(evicted.unwrap().seq, 1);
        assert_eq!(rx.try_recv().unwrap().unwrap().seq, 2);
        assert_eq!(rx.try_recv().unwrap().unwrap().seq, 3);
    }

    #[test]
    fn sender_drop_is_end_of_stream_after_drain() {
        let (tx, rx) = bounded(2);
        tx.try_send(msg(7)).unwrap();
        drop(tx);
        assert_eq!(rx.recv(None).unwrap().seq, 7);
        assert_eq!(rx.recv(None), Err(RecvError::Closed));
        assert_eq!(rx.try_recv(), Err(RecvError::Closed));
    }

    #[test]
    fn receiver_drop_fails_blocked_sender() {
        let (tx, rx) = bounded(1);
        tx.try_send(msg(1)).unwrap();
        let h = thread::spawn(move || tx.send(msg(2), None));
        thread::sleep(Duration::from_millis(20));
        drop(rx);
        assert!(matches!(h.join().unwrap(), Err(SendError::Closed(_))));
    }

    #[test]
    fn blocking_send_times_out() {
        let (tx, _rx) = bounded(1);
        tx.try_send(msg(1)).unwrap();
        let start = Instant::now();
        let r = tx.send(msg(2), Some(Duration::from_millis(20)));
        assert!(matches!(r, Err(SendError::Timeout(_))));
        assert!(start.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn blocked_sender_resumes_after_pop() {
        let (tx, rx) = bounded(1);
        tx.try_send(msg(1)).unwrap();
        let h = thread::spawn(move || {
            tx.send(msg(2), None).unwrap();
            Instant::now()
        });
        thread::sleep(Duration::from_millis(30));
        let popped_at = Instant::now();
        rx.recv(None).unwrap();
        let resumed = h.join().unwrap();
        assert!(resumed >= popped_at);
        assert!(resumed - popped_at < Duration::from_millis(10));
    }

    #[test]
    fn high_water_never_exceeds_capacity_under_load() {
        let (tx, rx) = bounded(3);
        let monitor = tx.monitor();
        let p = thread::spawn(move || {
            for i in 0..2000 {
                tx.send(msg(i), None).unwrap();
            }
        });
        let mut expected = 0;
        while let Ok(m) = rx.recv(None) {
            assert_eq!(m.seq, expected);
            expected += 1;
        }
        p.join().unwrap();
        assert_eq!(expected, 2000);
        assert!(monitor.high_water() <= 3);
    }
}
