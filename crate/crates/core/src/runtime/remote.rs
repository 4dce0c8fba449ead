//! Threads bridging sockets and the local hand-off queues behind remote ports.
//!
//! The receiving side of a remote edge listens and the sending side connects.
//! Readers push into the port's hand-off queue (blocking for streams,
//! displacing the oldest entry for datagrams); writers drain the output
//! hand-off queue onto the stream.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;

use super::channel::{bounded, QueueMonitor, QueueReceiver, QueueSender, RecvError};
use super::port::PortStats;
use super::port_manager::ActivationOptions;
use crate::clock::{now_ns, StopToken};
use crate::message::{Hop, Message, TRANSPORT_STAGE};
use crate::transport::{
    DatagramEndpoint, Poll, ReliableEndpoint, ReliableListener, TransportError,
};

/// Poll period for reader threads checking whether their port was closed.
const POLL: Duration = Duration::from_millis(50);

fn stamp_arrival(msg: &mut Message) {
    let ts = now_ns().max(msg.hops.last().map_or(msg.ts_origin, |h| h.ts));
    msg.hops.push(Hop {
        stage: TRANSPORT_STAGE.to_owned(),
        ts,
    });
}

/// Owns a reader thread. Dropping it wakes the thread, which exits once it
/// notices the hand-off queue was closed.
pub(crate) struct RemoteReader {
    stop: StopToken,
    _thread: JoinHandle<()>,
}

impl Drop for RemoteReader {
    fn drop(&mut self) {
        self.stop.stop();
    }
}

impl RemoteReader {
    /// Accepts one stream connection on `listener` and forwards its messages.
    pub(crate) fn spawn_reliable(
        label: &str,
        listener: ReliableListener,
        capacity: usize,
        opts: &ActivationOptions,
    ) -> (Self, QueueReceiver) {
        let (tx, rx) = bounded(capacity);
        let stop = StopToken::new();
        let thread_stop = stop.clone();
        let sockets = opts.sockets.clone();
        let events = opts.events.clone();
        let name = label.to_owned();
        let thread = thread::Builder::new()
            .name(format!("rx-{label}"))
            .spawn(move || {
                let mut ep = loop {
                    if tx.is_closed() || thread_stop.is_stopped() {
                        return;
                    }
                    match listener.accept_timeout(Some(POLL), &thread_stop) {
                        Ok(Some(ep)) => break ep,
                        Ok(None) => continue,
                        Err(e) => {
                            tracing::warn!(port = %name, error = %e, "accept failed");
                            return;
                        }
                    }
                };
                if let Some(ev) = &events {
                    ev.push(format!("accepted {name}"));
                }
                if let (Some(reg), Ok(s)) = (&sockets, ep.try_clone_stream()) {
                    reg.register(s);
                }
                loop {
                    if tx.is_closed() {
                        break;
                    }
                    match ep.recv_timeout(POLL) {
                        Ok(Poll::Message(mut msg)) => {
                            stamp_arrival(&mut msg);
                            if tx.send(msg, None).is_err() {
                                break;
                            }
                        }
                        Ok(Poll::Absent) => {}
                        Ok(Poll::EndOfStream) => break,
                        Err(e) => {
                            tracing::warn!(port = %name, error = %e, "stream read failed");
                            break;
                        }
                    }
                }
                ep.shutdown();
                // Dropping `tx` here signals end-of-stream to the kernel.
            })
            .expect("spawn reader thread");
        (
            RemoteReader {
                stop,
                _thread: thread,
            },
            rx,
        )
    }

    /// Receives datagrams and hands each completed message over, evicting the
    /// oldest queued one when the hand-off queue is full.
    pub(crate) fn spawn_datagram(
        label: &str,
        mut ep: DatagramEndpoint,
        capacity: usize,
        stats: Arc<PortStats>,
    ) -> (Self, QueueReceiver) {
        let (tx, rx) = bounded(capacity);
        let stop = StopToken::new();
        let thread_stop = stop.clone();
        let name = label.to_owned();
        let thread = thread::Builder::new()
            .name(format!("rx-{label}"))
            .spawn(move || loop {
                if tx.is_closed() || thread_stop.is_stopped() {
                    break;
                }
                match ep.recv(Some(POLL)) {
                    Ok(Poll::Message(mut msg)) => {
                        stamp_arrival(&mut msg);
                        match tx.push_displacing(msg) {
                            Ok(Some(_evicted)) => {
                                stats.dropped.fetch_add(1, Ordering::Relaxed);
                            }
                            Ok(None) => {}
                            Err(_) => break,
                        }
                    }
                    Ok(Poll::Absent) => {}
                    Ok(Poll::EndOfStream) => break,
                    Err(e) => {
                        tracing::warn!(port = %name, error = %e, "datagram read failed");
                        break;
                    }
                }
            })
            .expect("spawn reader thread");
        (
            RemoteReader {
                stop,
                _thread: thread,
            },
            rx,
        )
    }
}

/// Owns a writer thread that connects to the downstream listener and drains
/// the output hand-off queue onto the stream.
pub(crate) struct RemoteWriter {
    tx: QueueSender,
    failure: Arc<Mutex<Option<String>>>,
    stop: StopToken,
    _thread: JoinHandle<()>,
}

impl RemoteWriter {
    pub(crate) fn spawn_reliable(
        label: &str,
        host: &str,
        port: u16,
        capacity: usize,
        opts: &ActivationOptions,
    ) -> Self {
        let (tx, rx) = bounded(capacity);
        let failure = Arc::new(Mutex::new(None));
        let stop = StopToken::new();
        let thread_failure = failure.clone();
        let thread_stop = stop.clone();
        let retry = opts.retry;
        let conditions = opts.conditions.clone();
        let sockets = opts.sockets.clone();
        let events = opts.events.clone();
        let host = host.to_owned();
        let name = label.to_owned();
        if let Some(ev) = &events {
            ev.push(format!("connect {name} -> {host}:{port}"));
        }
        let thread = thread::Builder::new()
            .name(format!("tx-{label}"))
            .spawn(move || {
                let fail = |e: String| {
                    tracing::warn!(port = %name, error = %e, "remote output failed");
                    *thread_failure.lock() = Some(e);
                };
                let connected = ReliableEndpoint::connect_with_retry(
                    &host,
                    port,
                    retry.attempts,
                    retry.interval,
                    &thread_stop,
                )
                .and_then(|mut ep| {
                    if let Some(c) = conditions {
                        ep.set_conditions(c)?;
                    }
                    Ok(ep)
                });
                let mut ep = match connected {
                    Ok(ep) => ep,
                    Err(e) => return fail(e.to_string()),
                };
                if let Some(ev) = &events {
                    ev.push(format!("connected {name}"));
                }
                if let (Some(reg), Ok(s)) = (&sockets, ep.try_clone_stream()) {
                    reg.register(s);
                }
                // Registered sockets keep the descriptor alive, so the
                // stream must be half-closed explicitly.
                if let Err(e) = drain(&rx, &mut ep).and_then(|()| ep.finish()) {
                    fail(e.to_string());
                }
            })
            .expect("spawn writer thread");
        RemoteWriter {
            tx,
            failure,
            stop,
            _thread: thread,
        }
    }

    pub(crate) fn sender(&self) -> &QueueSender {
        &self.tx
    }

    pub(crate) fn monitor(&self) -> QueueMonitor {
        self.tx.monitor()
    }

    /// Why the writer gave up, if it did.
    pub(crate) fn failure(&self) -> Option<String> {
        self.failure.lock().clone()
    }
}

impl Drop for RemoteWriter {
    fn drop(&mut self) {
        // Aborts a pending connect; an established writer still drains.
        self.stop.stop();
    }
}

fn drain(rx: &QueueReceiver, ep: &mut ReliableEndpoint) -> Result<(), TransportError> {
    loop {
        match rx.recv(None) {
            Ok(msg) => ep.send(&msg)?,
            Err(RecvError::Closed) | Err(RecvError::Timeout) => return Ok(()),
        }
    }
}
