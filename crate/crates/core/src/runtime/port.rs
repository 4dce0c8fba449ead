//! The port state machine.
//!
//! A [`FlexPort`] starts `Unactivated` and moves to exactly one connection
//! state when the deployer activates it. Whatever channel sits underneath
//! (local queue, reliable stream, datagram socket), kernels use the same
//! receive/send calls and the port applies its semantics.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::channel::{
    QueueMonitor, QueueReceiver, QueueSender, RecvError, SendError, TrySendError,
};
use super::remote::{RemoteReader, RemoteWriter};
use super::{PortError, Received};
use crate::message::Message;
use crate::transport::DatagramEndpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortSemantics {
    Blocking,
    #[serde(alias = "non_blocking", alias = "non-blocking")]
    NonBlocking,
}

impl fmt::Display for PortSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PortSemantics::Blocking => "blocking",
            PortSemantics::NonBlocking => "nonblocking",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Input => "input",
            Direction::Output => "output",
        })
    }
}

/// Where a port's data goes. For remote inputs `host` is the bind address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnectionState {
    Unactivated,
    /// Activated without a channel: an optional non-blocking input the recipe
    /// leaves unwired. Reads always return absent.
    Unconnected,
    Local {
        capacity: usize,
    },
    RemoteReliable {
        host: String,
        port: u16,
    },
    RemoteDatagram {
        host: String,
        port: u16,
    },
}

impl ConnectionState {
    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            ConnectionState::RemoteReliable { .. } | ConnectionState::RemoteDatagram { .. }
        )
    }
}

impl fmt::Display for ConnectionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConnectionState::Unactivated => f.write_str("unactivated"),
            ConnectionState::Unconnected => f.write_str("unconnected"),
            ConnectionState::Local { capacity } => write!(f, "local(capacity={capacity})"),
            ConnectionState::RemoteReliable { host, port } => write!(f, "tcp({host}:{port})"),
            ConnectionState::RemoteDatagram { host, port } => write!(f, "rtp({host}:{port})"),
        }
    }
}

/// Per-port counters. For outputs `sent` counts messages accepted by the
/// channel and `dropped` those discarded by a non-blocking send on a full
/// queue; for inputs `delivered` counts messages handed to the kernel and
/// `dropped` those displaced from a datagram hand-off queue.
#[derive(Debug, Default)]
pub struct PortStats {
    pub sent: AtomicU64,
    pub delivered: AtomicU64,
    pub dropped: AtomicU64,
    pub closed: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortStatsSnapshot {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl PortStats {
    pub fn snapshot(&self) -> PortStatsSnapshot {
        PortStatsSnapshot {
            sent: self.sent.load(Ordering::Relaxed),
            delivered: self.delivered.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
        }
    }

    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

pub(crate) enum Endpoint {
    None,
    LocalIn(QueueReceiver),
    LocalOut(QueueSender),
    /// The reader is held only so dropping the port stops its thread.
    RemoteIn(QueueReceiver, #[allow(dead_code)] RemoteReader),
    ReliableOut(RemoteWriter),
    DatagramOut(Box<DatagramEndpoint>),
}

pub(crate) enum Delivery {
    Sent,
    Dropped,
    Closed,
}

pub struct FlexPort {
    pub(crate) tag: String,
    pub(crate) label: Arc<str>,
    pub(crate) direction: Direction,
    pub(crate) semantics: Option<PortSemantics>,
    pub(crate) state: ConnectionState,
    pub(crate) endpoint: Endpoint,
    pub(crate) stats: Arc<PortStats>,
    pub(crate) branches: Vec<FlexPort>,
    pub(crate) bound_port: Option<u16>,
    pub(crate) next_seq: u64,
    pub(crate) last_seq: Option<u64>,
}

impl FlexPort {
    pub(crate) fn new(
        owner: &str,
        tag: &str,
        direction: Direction,
        semantics: Option<PortSemantics>,
    ) -> Self {
        FlexPort {
            tag: tag.to_owned(),
            label: format!("{owner}.{tag}").into(),
            direction,
            semantics,
            state: ConnectionState::Unactivated,
            endpoint: Endpoint::None,
            stats: Arc::new(PortStats::default()),
            branches: Vec::new(),
            bound_port: None,
            next_seq: 0,
            last_seq: None,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// `instance_id.tag`
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn semantics(&self) -> Option<PortSemantics> {
        self.semantics
    }

    pub fn state(&self) -> &ConnectionState {
        &self.state
    }

    pub fn branches(&self) -> &[FlexPort] {
        &self.branches
    }

    pub fn stats(&self) -> Arc<PortStats> {
        self.stats.clone()
    }

    /// Port actually bound by a remote input (differs from the requested one
    /// only when 0 was requested).
    pub fn bound_port(&self) -> Option<u16> {
        self.bound_port
    }

    pub fn is_activated(&self) -> bool {
        self.state != ConnectionState::Unactivated
    }

    pub(crate) fn monitor(&self) -> Option<QueueMonitor> {
        match &self.endpoint {
            Endpoint::LocalIn(rx) | Endpoint::RemoteIn(rx, _) => Some(rx.monitor()),
            Endpoint::LocalOut(tx) => Some(tx.monitor()),
            Endpoint::ReliableOut(w) => Some(w.monitor()),
            _ => None,
        }
    }

    pub(crate) fn receive(&mut self, timeout: Option<Duration>) -> Result<Received, PortError> {
        let blocking = self.semantics == Some(super::PortSemantics::Blocking);
        let rx = match &self.endpoint {
            Endpoint::LocalIn(rx) | Endpoint::RemoteIn(rx, _) => rx,
            Endpoint::None if self.state == ConnectionState::Unconnected => {
                return Ok(Received::Absent)
            }
            _ => return Err(PortError::NotActivated(self.tag.clone())),
        };
        let got = if blocking {
            match rx.recv(timeout) {
                Ok(m) => Some(m),
                Err(RecvError::Closed) => return Ok(Received::EndOfStream),
                Err(RecvError::Timeout) => return Err(PortError::Timeout(self.tag.clone())),
            }
        } else {
            match rx.try_recv() {
                Ok(m) => m,
                Err(_) => return Ok(Received::EndOfStream),
            }
        };
        Ok(match got {
            Some(m) => {
                PortStats::bump(&self.stats.delivered);
                Received::Message(m)
            }
            None => Received::Absent,
        })
    }

    /// Emits on this port's own channel according to its semantics.
    pub(crate) fn deliver(
        &mut self,
        msg: Message,
        timeout: Option<Duration>,
    ) -> Result<Delivery, PortError> {
        let semantics = self.semantics.unwrap_or(PortSemantics::Blocking);
        let outcome = match &mut self.endpoint {
            Endpoint::LocalOut(tx) => queue_send(tx, msg, semantics, timeout, &self.tag)?,
            Endpoint::ReliableOut(w) => {
                let d = queue_send(w.sender(), msg, semantics, timeout, &self.tag)?;
                if matches!(d, Delivery::Closed) {
                    if let Some(reason) = w.failure() {
                        return Err(PortError::Transport {
                            tag: self.tag.clone(),
                            reason,
                        });
                    }
                }
                d
            }
            Endpoint::DatagramOut(ep) => {
                ep.send(&msg).map_err(|e| PortError::Transport {
                    tag: self.tag.clone(),
                    reason: e.to_string(),
                })?;
                Delivery::Sent
            }
            Endpoint::None => return Err(PortError::NotActivated(self.tag.clone())),
            Endpoint::LocalIn(_) | Endpoint::RemoteIn(..) => {
                return Err(PortError::WrongDirection {
                    tag: self.tag.clone(),
                    expected: Direction::Output,
                })
            }
        };
        match outcome {
            Delivery::Sent => PortStats::bump(&self.stats.sent),
            Delivery::Dropped => PortStats::bump(&self.stats.dropped),
            Delivery::Closed => PortStats::bump(&self.stats.closed),
        }
        Ok(outcome)
    }

    /// Closes the channel behind this port and its branches.
    pub(crate) fn close(&mut self) {
        if let Endpoint::DatagramOut(ep) = &mut self.endpoint {
            let _ = ep.send_end_of_stream();
        }
        self.endpoint = Endpoint::None;
        for b in &mut self.branches {
            b.close();
        }
    }
}

fn queue_send(
    tx: &QueueSender,
    msg: Message,
    semantics: PortSemantics,
    timeout: Option<Duration>,
    tag: &str,
) -> Result<Delivery, PortError> {
    match semantics {
        PortSemantics::Blocking => match tx.send(msg, timeout) {
            Ok(()) => Ok(Delivery::Sent),
            Err(SendError::Closed(_)) => Ok(Delivery::Closed),
            Err(SendError::Timeout(_)) => Err(PortError::Timeout(tag.to_owned())),
        },
        PortSemantics::NonBlocking => match tx.try_send(msg) {
            Ok(()) => Ok(Delivery::Sent),
            Err(TrySendError::Full(_)) => Ok(Delivery::Dropped),
            Err(TrySendError::Closed(_)) => Ok(Delivery::Closed),
        },
    }
}

impl Drop for FlexPort {
    fn drop(&mut self) {
        self.close();
    }
}

impl fmt::Debug for FlexPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlexPort")
            .field("tag", &self.tag)
            .field("direction", &self.direction)
            .field("semantics", &self.semantics)
            .field("state", &self.state)
            .field("branches", &self.branches)
            .finish()
    }
}
