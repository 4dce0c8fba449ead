//! Connectionless, fragmenting transport without retransmission.

use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use socket2::{Domain, Protocol, Socket, Type};

use super::impair::{DelayLine, Impairment, Verdict};
use super::wire::{fragment, Reassembler, WireFrame};
use super::{resolve, NetworkConditions, Poll, TransportError, END_OF_STREAM_TAG};
use crate::message::Message;

const SOCKET_BUFFER: usize = 4 << 20;
const MAX_DATAGRAM: usize = 65_507;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatagramConfig {
    /// Payload bytes per frame, 512..=65000.
    pub mtu_payload: usize,
    /// Partial messages kept in flight per sender.
    pub reassembly_window: usize,
}

impl Default for DatagramConfig {
    fn default() -> Self {
        DatagramConfig {
            mtu_payload: 1200,
            reassembly_window: 4,
        }
    }
}

impl DatagramConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(512..=65_000).contains(&self.mtu_payload) {
            return Err(TransportError::Config(format!(
                "mtu_payload {} outside 512..=65000",
                self.mtu_payload
            )));
        }
        if self.reassembly_window == 0 {
            return Err(TransportError::Config(
                "reassembly_window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct DatagramStats {
    pub frames_sent: AtomicU64,
    pub frames_dropped_by_shim: AtomicU64,
    pub frames_received: AtomicU64,
    pub malformed: AtomicU64,
    pub evicted: AtomicU64,
    pub stale: AtomicU64,
    pub delivered: AtomicU64,
}

impl DatagramStats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }
}

pub struct DatagramEndpoint {
    socket: UdpSocket,
    peer: Option<SocketAddr>,
    cfg: DatagramConfig,
    reassembler: Reassembler,
    impairment: Option<Impairment>,
    delay_line: Option<DelayLine<(Vec<u8>, SocketAddr)>>,
    stats: Arc<DatagramStats>,
    scratch: Vec<u8>,
    recv_buf: Vec<u8>,
}

impl DatagramEndpoint {
    /// Binds `0.0.0.0:local_port` (0 picks an ephemeral port). `peer` is
    /// where [`send`](Self::send) transmits; receive-only endpoints pass `None`.
    pub fn open(
        local_port: u16,
        peer: Option<(&str, u16)>,
        cfg: DatagramConfig,
    ) -> Result<Self, TransportError> {
        cfg.validate()?;
        let peer = peer.map(|(h, p)| resolve(h, p)).transpose()?;
        let addr: SocketAddr = ([0, 0, 0, 0], local_port).into();
        let bind_err = |source| TransportError::Bind {
            addr: addr.to_string(),
            source,
        };
        let socket =
            Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP)).map_err(bind_err)?;
        // Best effort; the kernel caps these at its configured maximum.
        let _ = socket.set_recv_buffer_size(SOCKET_BUFFER);
        let _ = socket.set_send_buffer_size(SOCKET_BUFFER);
        socket.bind(&addr.into()).map_err(bind_err)?;
        Ok(DatagramEndpoint {
            socket: socket.into(),
            peer,
            cfg,
            reassembler: Reassembler::new(cfg.reassembly_window),
            impairment: None,
            delay_line: None,
            stats: Arc::new(DatagramStats::default()),
            scratch: Vec::with_capacity(cfg.mtu_payload + 256),
            recv_buf: vec![0u8; MAX_DATAGRAM],
        })
    }

    pub fn config(&self) -> DatagramConfig {
        self.cfg
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.socket.local_addr()?)
    }

    pub fn stats(&self) -> Arc<DatagramStats> {
        self.stats.clone()
    }

    /// Installs the loss/delay shim for outgoing frames.
    pub fn set_conditions(&mut self, conditions: NetworkConditions) -> Result<(), TransportError> {
        let imp = Impairment::new(conditions)?;
        if imp.delays() {
            let socket = self.socket.try_clone()?;
            self.delay_line = Some(DelayLine::spawn(
                1 << 16,
                move |(buf, to): (Vec<u8>, SocketAddr)| {
                    let _ = socket.send_to(&buf, to);
                    true
                },
            ));
        }
        self.impairment = Some(imp);
        Ok(())
    }

    /// Fragments and transmits `msg`; returns the number of frames produced.
    /// Never waits for the receiver and never retransmits.
    pub fn send(&mut self, msg: &Message) -> Result<usize, TransportError> {
        let peer = self
            .peer
            .ok_or_else(|| TransportError::Config("datagram endpoint has no peer".into()))?;
        let frames = fragment(msg, self.cfg.mtu_payload)?;
        let n = frames.len();
        for frame in frames {
            self.transmit(&frame, peer)?;
        }
        Ok(n)
    }

    fn transmit(&mut self, frame: &WireFrame, peer: SocketAddr) -> Result<(), TransportError> {
        let verdict = match self.impairment.as_mut() {
            Some(imp) => imp.decide(frame.msg_seq, frame.frag_index, false),
            None => Verdict::Send,
        };
        match verdict {
            Verdict::Drop => {
                self.stats
                    .frames_dropped_by_shim
                    .fetch_add(1, Ordering::Relaxed);
            }
            Verdict::Send => {
                self.scratch.clear();
                frame.encode_into(&mut self.scratch);
                match self.socket.send_to(&self.scratch, peer) {
                    Ok(_) => {}
                    // An ICMP unreachable from an earlier frame; datagram loss
                    // is not surfaced.
                    Err(e) if e.kind() == ErrorKind::ConnectionRefused => {}
                    Err(e) => return Err(e.into()),
                }
                self.stats.frames_sent.fetch_add(1, Ordering::Relaxed);
            }
            Verdict::SendAt(at) => {
                if let Some(line) = self.delay_line.as_mut() {
                    line.schedule(at, (frame.encode(), peer));
                }
                self.stats.frames_sent.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(())
    }

    /// Best-effort end-of-stream marker.
    pub fn send_end_of_stream(&mut self) -> Result<(), TransportError> {
        let mut marker = Message::new(END_OF_STREAM_TAG, Bytes::new());
        marker.seq = u64::MAX;
        self.send(&marker).map(|_| ())
    }

    /// Waits up to `timeout` (forever if `None`) for the next fully
    /// reassembled message.
    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<Poll, TransportError> {
        let deadline = timeout.map(|t| std::time::Instant::now() + t);
        loop {
            let remaining = match deadline {
                Some(d) => {
                    let now = std::time::Instant::now();
                    if now >= d {
                        return Ok(Poll::Absent);
                    }
                    Some(d - now)
                }
                None => None,
            };
            self.socket.set_read_timeout(remaining)?;
            match self.socket.recv_from(&mut self.recv_buf) {
                Ok((n, src)) => {
                    if let Some(p) = self.accept_datagram(n, src) {
                        return Ok(p);
                    }
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(Poll::Absent);
                }
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Drains whatever is already queued in the socket without waiting.
    pub fn try_recv(&mut self) -> Result<Poll, TransportError> {
        self.socket.set_nonblocking(true)?;
        let result = loop {
            match self.socket.recv_from(&mut self.recv_buf) {
                Ok((n, src)) => {
                    if let Some(p) = self.accept_datagram(n, src) {
                        break Ok(p);
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break Ok(Poll::Absent),
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => {}
                Err(e) => break Err(e.into()),
            }
        };
        self.socket.set_nonblocking(false)?;
        result
    }

    fn accept_datagram(&mut self, n: usize, src: SocketAddr) -> Option<Poll> {
        self.stats.frames_received.fetch_add(1, Ordering::Relaxed);
        let bytes = Bytes::copy_from_slice(&self.recv_buf[..n]);
        let frame = match WireFrame::decode(&bytes) {
            Ok(f) => f,
            Err(_) => {
                self.stats.malformed.fetch_add(1, Ordering::Relaxed);
                return None;
            }
        };
        let before = self.reassembler.stats();
        let out = self.reassembler.push(src, frame);
        let after = self.reassembler.stats();
        self.stats
            .evicted
            .fetch_add(after.evicted - before.evicted, Ordering::Relaxed);
        self.stats
            .stale
            .fetch_add(after.stale - before.stale, Ordering::Relaxed);
        self.stats
            .malformed
            .fetch_add(after.malformed - before.malformed, Ordering::Relaxed);
        let msg = out?;
        if msg.type_tag == END_OF_STREAM_TAG {
            return Some(Poll::EndOfStream);
        }
        self.stats.delivered.fetch_add(1, Ordering::Relaxed);
        Some(Poll::Message(msg))
    }
}
