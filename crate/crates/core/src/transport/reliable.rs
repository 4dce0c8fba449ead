//! Reliable, ordered, length-framed message stream over TCP.
//!
//! Each message is sent as a u32 little-endian length followed by its
//! single-frame serialization (see [`super::wire`]).

use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::time::{Duration, Instant};

use bytes::{Bytes, BytesMut};

use super::impair::{DelayLine, Impairment, Verdict};
use super::wire::{deserialize, serialize_parts, DecodeError, HEADER_FIXED};
use super::{resolve, NetworkConditions, Poll, TransportError};
use crate::clock::StopToken;
use crate::message::{Message, MAX_PAYLOAD};

/// Largest frame accepted from the wire: payload cap plus headroom for the
/// header, tag and hop trailer.
pub const MAX_FRAME: usize = MAX_PAYLOAD + (1 << 20);

pub struct ReliableListener {
    listener: TcpListener,
}

impl ReliableListener {
    /// Listens on `0.0.0.0:port`; port 0 picks an ephemeral port.
    pub fn bind(port: u16) -> Result<Self, TransportError> {
        Self::bind_addr(([0, 0, 0, 0], port).into())
    }

    pub fn bind_addr(addr: SocketAddr) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr).map_err(|source| TransportError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        Ok(ReliableListener { listener })
    }

    pub fn local_port(&self) -> u16 {
        self.listener.local_addr().map(|a| a.port()).unwrap_or(0)
    }

    pub fn accept(&self) -> Result<ReliableEndpoint, TransportError> {
        self.listener.set_nonblocking(false)?;
        let (stream, _) = self.listener.accept()?;
        ReliableEndpoint::from_stream(stream)
    }

    /// Polls for a connection until one arrives, `timeout` passes, or `stop`
    /// is signalled.
    pub fn accept_timeout(
        &self,
        timeout: Option<Duration>,
        stop: &StopToken,
    ) -> Result<Option<ReliableEndpoint>, TransportError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        self.listener.set_nonblocking(true)?;
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    return Ok(Some(ReliableEndpoint::from_stream(stream)?));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if deadline.is_some_and(|d| Instant::now() >= d) {
                        return Ok(None);
                    }
                    if stop.sleep(Duration::from_millis(5)) {
                        return Ok(None);
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

pub struct ReliableEndpoint {
    stream: TcpStream,
    rbuf: BytesMut,
    chunk: Box<[u8]>,
    eof: bool,
    impairment: Option<Impairment>,
    delay_line: Option<DelayLine<Vec<u8>>>,
}

impl ReliableEndpoint {
    fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(ReliableEndpoint {
            stream,
            rbuf: BytesMut::with_capacity(64 << 10),
            chunk: vec![0u8; 64 << 10].into_boxed_slice(),
            eof: false,
            impairment: None,
            delay_line: None,
        })
    }

    pub fn connect(host: &str, port: u16) -> Result<Self, TransportError> {
        let addr = resolve(host, port)?;
        let stream =
            TcpStream::connect_timeout(&addr, Duration::from_secs(2)).map_err(|source| {
                TransportError::Connect {
                    addr: addr.to_string(),
                    source,
                }
            })?;
        Self::from_stream(stream)
    }

    /// Retries `connect` up to `attempts` times, `interval` apart.
    pub fn connect_with_retry(
        host: &str,
        port: u16,
        attempts: u32,
        interval: Duration,
        stop: &StopToken,
    ) -> Result<Self, TransportError> {
        let mut last = None;
        for attempt in 0..attempts.max(1) {
            if attempt > 0 && stop.sleep(interval) {
                break;
            }
            match Self::connect(host, port) {
                Ok(ep) => return Ok(ep),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or(TransportError::PeerClosed))
    }

    pub fn peer_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.stream.peer_addr()?)
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.stream.local_addr()?)
    }

    /// Installs the delay shim on outgoing messages. Loss is not meaningful
    /// on a reliable stream and is rejected.
    pub fn set_conditions(&mut self, conditions: NetworkConditions) -> Result<(), TransportError> {
        if conditions.loss_rate > 0.0 || !conditions.drop_fragments.is_empty() {
            return Err(TransportError::Config(
                "loss cannot be injected on a reliable stream".into(),
            ));
        }
        let imp = Impairment::new(conditions)?;
        if imp.delays() {
            let mut stream = self.stream.try_clone()?;
            self.delay_line = Some(DelayLine::spawn(4096, move |buf: Vec<u8>| {
                stream.write_all(&buf).is_ok()
            }));
        }
        self.impairment = Some(imp);
        Ok(())
    }

    fn peer_has_closed(&mut self) -> Result<bool, TransportError> {
        if self.eof {
            return Ok(true);
        }
        self.stream.set_nonblocking(true)?;
        let mut probe = [0u8; 1];
        let closed = match self.stream.peek(&mut probe) {
            Ok(0) => true,
            Ok(_) => false,
            Err(e) if e.kind() == ErrorKind::WouldBlock => false,
            Err(e) if matches!(e.kind(), ErrorKind::ConnectionReset | ErrorKind::BrokenPipe) => {
                true
            }
            Err(e) => {
                self.stream.set_nonblocking(false)?;
                return Err(e.into());
            }
        };
        self.stream.set_nonblocking(false)?;
        Ok(closed)
    }

    /// Writes one message. Waits only for socket buffer space.
    pub fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let (header, trailer) = serialize_parts(msg)?;
        if self.peer_has_closed()? {
            return Err(TransportError::PeerClosed);
        }
        let len = (header.len() + msg.payload.len() + trailer.len()) as u32;
        if let Some(imp) = self.impairment.as_mut() {
            if let Verdict::SendAt(at) = imp.decide(msg.seq, 0, true) {
                let mut buf = Vec::with_capacity(4 + len as usize);
                buf.extend_from_slice(&len.to_le_bytes());
                buf.extend_from_slice(&header);
                buf.extend_from_slice(&msg.payload);
                buf.extend_from_slice(&trailer);
                let line = self
                    .delay_line
                    .as_mut()
                    .expect("delay line for delaying shim");
                return if line.schedule(at, buf) {
                    Ok(())
                } else {
                    Err(TransportError::PeerClosed)
                };
            }
        }
        let map = |e: std::io::Error| match e.kind() {
            ErrorKind::BrokenPipe | ErrorKind::ConnectionReset => TransportError::PeerClosed,
            _ => TransportError::Io(e),
        };
        self.stream.write_all(&len.to_le_bytes()).map_err(map)?;
        self.stream.write_all(&header).map_err(map)?;
        self.stream.write_all(&msg.payload).map_err(map)?;
        self.stream.write_all(&trailer).map_err(map)?;
        Ok(())
    }

    fn take_buffered(&mut self) -> Result<Option<Message>, TransportError> {
        if self.rbuf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.rbuf[..4].try_into().unwrap()) as usize;
        if len > MAX_FRAME {
            return Err(TransportError::Config(format!(
                "incoming frame of {len} bytes exceeds limit"
            )));
        }
        if len < HEADER_FIXED {
            return Err(DecodeError::Truncated {
                offset: 4 + len,
                needed: HEADER_FIXED - len,
            }
            .into());
        }
        if self.rbuf.len() < 4 + len {
            self.rbuf.reserve(4 + len - self.rbuf.len());
            return Ok(None);
        }
        let _ = self.rbuf.split_to(4);
        let frame: Bytes = self.rbuf.split_to(len).freeze();
        Ok(Some(deserialize(&frame)?))
    }

    /// Reads once from the socket. `Ok(false)` means no data was available.
    fn fill(&mut self) -> Result<bool, TransportError> {
        match self.stream.read(&mut self.chunk) {
            Ok(0) => {
                self.eof = true;
                Ok(true)
            }
            Ok(n) => {
                self.rbuf.extend_from_slice(&self.chunk[..n]);
                Ok(true)
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(false),
            Err(e) if e.kind() == ErrorKind::Interrupted => Ok(true),
            Err(e) if e.kind() == ErrorKind::ConnectionReset => {
                self.eof = true;
                Ok(true)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn eof_poll(&self) -> Result<Poll, TransportError> {
        if self.rbuf.is_empty() {
            Ok(Poll::EndOfStream)
        } else {
            // The peer vanished halfway through a message.
            Err(TransportError::PeerClosed)
        }
    }

    /// Blocks for one whole message. `Ok(None)` is a clean end-of-stream.
    pub fn recv(&mut self) -> Result<Option<Message>, TransportError> {
        self.stream.set_read_timeout(None)?;
        loop {
            if let Some(m) = self.take_buffered()? {
                return Ok(Some(m));
            }
            if self.eof {
                return match self.eof_poll()? {
                    Poll::EndOfStream => Ok(None),
                    _ => unreachable!(),
                };
            }
            self.fill()?;
        }
    }

    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<Poll, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(m) = self.take_buffered()? {
                return Ok(Poll::Message(m));
            }
            if self.eof {
                return self.eof_poll();
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(Poll::Absent);
            }
            self.stream
                .set_read_timeout(Some((deadline - now).max(Duration::from_micros(100))))?;
            self.fill()?;
        }
    }

    /// Returns a message only if one is already fully buffered.
    pub fn try_recv(&mut self) -> Result<Poll, TransportError> {
        if let Some(m) = self.take_buffered()? {
            return Ok(Poll::Message(m));
        }
        self.stream.set_nonblocking(true)?;
        let result = loop {
            if self.eof {
                break self.eof_poll();
            }
            match self.fill() {
                Ok(true) => match self.take_buffered() {
                    Ok(Some(m)) => break Ok(Poll::Message(m)),
                    Ok(None) => continue,
                    Err(e) => break Err(e),
                },
                Ok(false) => break Ok(Poll::Absent),
                Err(e) => break Err(e),
            }
        };
        self.stream.set_nonblocking(false)?;
        result
    }

    /// Flushes delayed writes and half-closes the stream, so the peer reads
    /// end-of-stream even while other handles to the socket stay open.
    pub fn finish(mut self) -> Result<(), TransportError> {
        if let Some(line) = self.delay_line.take() {
            line.flush();
        }
        match self.stream.shutdown(Shutdown::Write) {
            Err(e) if e.kind() != ErrorKind::NotConnected => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn shutdown(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }

    pub(crate) fn try_clone_stream(&self) -> Result<TcpStream, TransportError> {
        Ok(self.stream.try_clone()?)
    }
}
