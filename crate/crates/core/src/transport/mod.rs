//! Remote channels behind ports: a length-framed reliable stream and an
//! unreliable, fragmenting datagram transport that favours timeliness.

pub mod datagram;
pub mod impair;
pub mod reliable;
pub mod wire;

use std::net::{SocketAddr, ToSocketAddrs};

use thiserror::Error;

pub use datagram::{DatagramConfig, DatagramEndpoint, DatagramStats};
pub use impair::NetworkConditions;
pub use reliable::{ReliableEndpoint, ReliableListener};
pub use wire::{deserialize, serialize, DecodeError, EncodeError, WireFrame};

use crate::message::Message;

/// Type tag of the marker frame a datagram sender emits when it closes.
pub const END_OF_STREAM_TAG: &str = "flexpipe/eos";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),
    #[error("encode error: {0}")]
    Encode(#[from] EncodeError),
    #[error("peer closed the session")]
    PeerClosed,
    #[error("invalid transport configuration: {0}")]
    Config(String),
}

/// Outcome of a non-blocking or time-bounded receive.
#[derive(Debug, PartialEq, Eq)]
pub enum Poll {
    Message(Message),
    Absent,
    EndOfStream,
}

pub(crate) fn resolve(host: &str, port: u16) -> Result<SocketAddr, TransportError> {
    let target = format!("{host}:{port}");
    let mut addrs = (host, port)
        .to_socket_addrs()
        .map_err(|_| TransportError::Resolve(target.clone()))?
        .collect::<Vec<_>>();
    addrs.sort_by_key(|a| !a.is_ipv4());
    addrs
        .into_iter()
        .next()
        .ok_or(TransportError::Resolve(target))
}
