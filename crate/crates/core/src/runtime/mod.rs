//! Kernel abstraction, ports and local channels.

pub mod channel;
pub mod kernel;
pub mod port;
pub mod port_manager;
mod remote;

use std::net::TcpStream;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

pub use kernel::{
    run_kernel, FrequencyManager, Kernel, KernelContext, KernelDescriptor, KernelStatus,
};
pub use port::{ConnectionState, Direction, FlexPort, PortSemantics, PortStats, PortStatsSnapshot};
pub use port_manager::{ActivationOptions, LocalPeer, PortManager, RetryPolicy};

use crate::clock::now_ns;
use crate::message::Message;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum PortError {
    #[error("port '{0}' is already registered")]
    DuplicateTag(String),
    #[error("branch name '{0}' is already in use")]
    DuplicateBranch(String),
    #[error("unknown port '{0}'")]
    UnknownPort(String),
    #[error("port '{tag}' is not an {expected} port")]
    WrongDirection { tag: String, expected: Direction },
    #[error("port '{0}' is not activated")]
    NotActivated(String),
    #[error("port '{0}' is already activated")]
    AlreadyActivated(String),
    #[error("input port '{0}' takes its semantics from registration; none may be supplied")]
    SemanticsForInput(String),
    #[error("output port '{0}' needs semantics at activation")]
    MissingSemantics(String),
    #[error("port '{tag}': {reason}")]
    InvalidState { tag: String, reason: String },
    #[error("every channel behind port '{0}' is closed")]
    Closed(String),
    #[error("timed out waiting on port '{0}'")]
    Timeout(String),
    #[error("activating port '{tag}' failed: {source}")]
    Activation {
        tag: String,
        #[source]
        source: TransportError,
    },
    #[error("transport failure on port '{tag}': {reason}")]
    Transport { tag: String, reason: String },
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Port(#[from] PortError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
}

/// Result of reading an input port.
#[derive(Debug, PartialEq, Eq)]
pub enum Received {
    Message(Message),
    /// Nothing queued (non-blocking reads and unconnected optional inputs).
    Absent,
    /// The upstream side closed and everything it sent was consumed.
    EndOfStream,
}

impl Received {
    pub fn into_message(self) -> Option<Message> {
        match self {
            Received::Message(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_end_of_stream(&self) -> bool {
        matches!(self, Received::EndOfStream)
    }
}

/// Timestamped deployment events, used to check ordering properties such as
/// listeners being bound before connectors start.
#[derive(Clone, Default)]
pub struct EventLog {
    inner: Arc<Mutex<Vec<(u64, String)>>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, event: impl Into<String>) {
        self.inner.lock().push((now_ns(), event.into()));
    }

    pub fn entries(&self) -> Vec<(u64, String)> {
        self.inner.lock().clone()
    }

    /// Appends another log's entries, keeping the result sorted by time.
    pub fn extend(&self, other: impl IntoIterator<Item = (u64, String)>) {
        let mut g = self.inner.lock();
        g.extend(other);
        g.sort_by_key(|(t, _)| *t);
    }
}

/// Stream sockets opened by ports, shut down when a pipeline is stopped so
/// writer threads blocked on a dead peer wake up.
#[derive(Clone, Default)]
pub struct SocketRegistry {
    inner: Arc<Mutex<Vec<TcpStream>>>,
}

impl SocketRegistry {
    pub fn register(&self, stream: TcpStream) {
        self.inner.lock().push(stream);
    }

    pub fn shutdown_all(&self) {
        for s in self.inner.lock().drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}
