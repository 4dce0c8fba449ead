//! Wire format shared by the datagram and reliable transports.
//!
//! Every frame is laid out as follows, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FXP1"
//! 4       8     msg_seq
//! 12      2     frag_index
//! 14      2     frag_count
//! 16      2     type_tag_len
//! 18      n     type_tag (UTF-8)
//! 18+n    8     ts_origin (ns since the Unix epoch)
//! 26+n    ..    payload fragment
//! ```
//!
//! The payload is cut into `frag_count` chunks of at most `mtu_payload` bytes.
//! The last frame carries a hop trailer after its payload chunk:
//!
//! ```text
//! repeat hop_count times: u16 label_len, label bytes, u64 ts
//! u16 hop_count
//! u32 trailer_len   (whole trailer, including these six bytes)
//! ```
//!
//! A serialized message (used on reliable streams, behind a u32 length
//! prefix) is exactly one frame with `frag_index = 0, frag_count = 1`.

use std::collections::HashMap;
use std::net::SocketAddr;

use bytes::{BufMut, Bytes, BytesMut};
use thiserror::Error;

use crate::message::{Hop, Message, MAX_PAYLOAD};

pub const MAGIC: [u8; 4] = *b"FXP1";
/// Frame header size excluding the type tag.
pub const HEADER_FIXED: usize = 26;
const TRAILER_FIXED: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated input at offset {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("invalid fragment header at offset {offset}: index {index} of {count}")]
    InvalidFragment {
        offset: usize,
        index: u16,
        count: u16,
    },
    #[error("invalid UTF-8 at offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("corrupt hop trailer at offset {offset}")]
    BadTrailer { offset: usize },
    #[error("expected a single-fragment frame, found {count} fragments")]
    Fragmented { count: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the 64 MiB limit")]
    Oversized(usize),
    #[error("type tag of {0} bytes does not fit the frame header")]
    TagTooLong(usize),
    #[error("message needs {0} fragments, more than a frame header can count")]
    TooManyFragments(usize),
    #[error("hop trailer too large")]
    TrailerTooLarge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub msg_seq: u64,
    pub frag_index: u16,
    pub frag_count: u16,
    pub type_tag: String,
    pub ts_origin: u64,
    /// Payload fragment; on the last frame also the hop trailer.
    pub body: Bytes,
}

impl WireFrame {
    pub fn header_len(&self) -> usize {
        HEADER_FIXED + self.type_tag.len()
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.body.len()
    }

    pub fn encode_header(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.msg_seq.to_le_bytes());
        out.extend_from_slice(&self.frag_index.to_le_bytes());
        out.extend_from_slice(&self.frag_count.to_le_bytes());
        out.extend_from_slice(&(self.type_tag.len() as u16).to_le_bytes());
        out.extend_from_slice(self.type_tag.as_bytes());
        out.extend_from_slice(&self.ts_origin.to_le_bytes());
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        self.encode_header(out);
        out.extend_from_slice(&self.body);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Parses one frame. The body is a zero-copy slice of `input`.
    pub fn decode(input: &Bytes) -> Result<WireFrame, DecodeError> {
        let mut r = Reader::new(input);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(DecodeError::BadMagic { offset: 0 });
        }
        let msg_seq = r.u64()?;
        let idx_off = r.pos;
        let frag_index = r.u16()?;
        let frag_count = r.u16()?;
        if frag_index >= frag_count {
            return Err(DecodeError::InvalidFragment {
                offset: idx_off,
                index: frag_index,
                count: frag_count,
            });
        }
        let tag_len = r.u16()? as usize;
        let tag_off = r.pos;
        let tag = r.take(tag_len)?;
        let type_tag = std::str::from_utf8(tag)
            .map_err(|_| DecodeError::InvalidUtf8 { offset: tag_off })?
            .to_owned();
        let ts_origin = r.u64()?;
        let body = input.slice(r.pos..);
        Ok(WireFrame {
            msg_seq,
            frag_index,
            frag_count,
            type_tag,
            ts_origin,
            body,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode_trailer(hops: &[Hop]) -> Result<Vec<u8>, EncodeError> {
    if hops.len() > u16::MAX as usize {
        return Err(EncodeError::TrailerTooLarge);
    }
    let mut out = Vec::with_capacity(TRAILER_FIXED + hops.len() * 24);
    for hop in hops {
        if hop.stage.len() > u16::MAX as usize {
            return Err(EncodeError::TrailerTooLarge);
        }
        out.extend_from_slice(&(hop.stage.len() as u16).to_le_bytes());
        out.extend_from_slice(hop.stage.as_bytes());
        out.extend_from_slice(&hop.ts.to_le_bytes());
    }
    out.extend_from_slice(&(hops.len() as u16).to_le_bytes());
    let total = out.len() + 4;
    if total > u32::MAX as usize {
        return Err(EncodeError::TrailerTooLarge);
    }
    out.extend_from_slice(&(total as u32).to_le_bytes());
    Ok(out)
}

/// Splits an assembled body into payload and hops. `base` is the offset of
/// `body` within the original input, used for error reporting.
fn split_trailer(body: &Bytes, base: usize) -> Result<(Bytes, Vec<Hop>), DecodeError> {
    let n = body.len();
    if n < TRAILER_FIXED {
        return Err(DecodeError::Truncated {
            offset: base + n,
            needed: TRAILER_FIXED - n,
        });
    }
    let total = u32::from_le_bytes(body[n - 4..].try_into().unwrap()) as usize;
    if total < TRAILER_FIXED || total > n {
        return Err(DecodeError::BadTrailer {
            offset: base + n - 4,
        });
    }
    let start = n - total;
    let count = u16::from_le_bytes(body[n - 6..n - 4].try_into().unwrap()) as usize;
    let entries = &body[start..n - TRAILER_FIXED];
    let mut r = Reader::new(entries);
    let mut hops = Vec::with_capacity(count);
    for _ in 0..count {
        let label_off = base + start + r.pos;
        let len = r
            .u16()
            .map_err(|_| DecodeError::BadTrailer { offset: label_off })? as usize;
        let label = r
            .take(len)
            .map_err(|_| DecodeError::BadTrailer { offset: label_off })?;
        let stage = std::str::from_utf8(label)
            .map_err(|_| DecodeError::InvalidUtf8 {
                offset: label_off + 2,
            })?
            .to_owned();
        let ts = r
            .u64()
            .map_err(|_| DecodeError::BadTrailer { offset: label_off })?;
        hops.push(Hop { stage, ts });
    }
    if r.pos != entries.len() {
        return Err(DecodeError::BadTrailer {
            offset: base + start + r.pos,
        });
    }
    Ok((body.slice(..start), hops))
}

fn check_encodable(msg: &Message) -> Result<(), EncodeError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::Oversized(msg.payload.len()));
    }
    if msg.type_tag.len() > u16::MAX as usize {
        return Err(EncodeError::TagTooLong(msg.type_tag.len()));
    }
    Ok(())
}

/// Number of frames a payload of `len` bytes needs.
pub fn fragment_count(len: usize, mtu_payload: usize) -> usize {
    len.div_ceil(mtu_payload).max(1)
}

/// Cuts a message into frames of at most `mtu_payload` payload bytes each.
pub fn fragment(msg: &Message, mtu_payload: usize) -> Result<Vec<WireFrame>, EncodeError> {
    check_encodable(msg)?;
    let count = fragment_count(msg.payload.len(), mtu_payload);
    if count > u16::MAX as usize {
        return Err(EncodeError::TooManyFragments(count));
    }
    let trailer = encode_trailer(&msg.hops)?;
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * mtu_payload;
        let end = ((i + 1) * mtu_payload).min(msg.payload.len());
        let chunk = msg.payload.slice(start.min(end)..end);
        let body = if i + 1 == count {
            let mut b = BytesMut::with_capacity(chunk.len() + trailer.len());
            b.put_slice(&chunk);
            b.put_slice(&trailer);
            b.freeze()
        } else {
            chunk
        };
        frames.push(WireFrame {
            msg_seq: msg.seq,
            frag_index: i as u16,
            frag_count: count as u16,
            type_tag: msg.type_tag.clone(),
            ts_origin: msg.ts_origin,
            body,
        });
    }
    Ok(frames)
}

/// Header and trailer of the single-frame encoding; the payload goes between
/// them. Lets stream writers avoid copying large payloads.
pub fn serialize_parts(msg: &Message) -> Result<(Vec<u8>, Vec<u8>), EncodeError> {
    check_encodable(msg)?;
    let trailer = encode_trailer(&msg.hops)?;
    let frame = WireFrame {
        msg_seq: msg.seq,
        frag_index: 0,
        frag_count: 1,
        type_tag: msg.type_tag.clone(),
        ts_origin: msg.ts_origin,
        body: Bytes::new(),
    };
    let mut header = Vec::with_capacity(frame.header_len());
    frame.encode_header(&mut header);
    Ok((header, trailer))
}

pub fn serialize(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let (header, trailer) = serialize_parts(msg)?;
    let mut out = Vec::with_capacity(header.len() + msg.payload.len() + trailer.len());
    out.extend_from_slice(&header);
    out.extend_from_slice(&msg.payload);
    out.extend_from_slice(&trailer);
    Ok(out)
}

/// Inverse of [`serialize`]. The payload is a zero-copy slice of `input`.
pub fn deserialize(input: &Bytes) -> Result<Message, DecodeError> {
    let frame = WireFrame::decode(input)?;
    if frame.frag_count != 1 {
        return Err(DecodeError::Fragmented {
            count: frame.frag_count,
        });
    }
    let base = frame.header_len();
    message_from_body(
        frame.msg_seq,
        frame.type_tag,
        frame.ts_origin,
        &frame.body,
        base,
    )
}

fn message_from_body(
    seq: u64,
    type_tag: String,
    ts_origin: u64,
    body: &Bytes,
    base: usize,
) -> Result<Message, DecodeError> {
    let (payload, hops) = split_trailer(body, base)?;
    Ok(Message {
        type_tag,
        seq,
        ts_origin,
        hops,
        payload,
    })
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ReassemblyStats {
    pub frames: u64,
    pub delivered: u64,
    /// Partial messages discarded to make room for fresher ones.
    pub evicted: u64,
    /// Frames for messages already too old to be worth assembling.
    pub stale: u64,
    /// Frames that contradict an in-progress assembly, or whose trailer is bad.
    pub malformed: u64,
}

struct Partial {
    frag_count: u16,
    type_tag: String,
    ts_origin: u64,
    fragments: Vec<Option<Bytes>>,
    received: usize,
}

/// Reassembles fragmented messages in completion order.
///
/// At most `window` partial messages are kept per source. A frame for a new
/// message evicts the oldest partial when the window is full, and partials
/// falling more than `window` sequence numbers behind the newest message seen
/// are dropped, so fresh data is never starved by stale fragments.
pub struct Reassembler {
    window: usize,
    partials: HashMap<(SocketAddr, u64), Partial>,
    newest: HashMap<SocketAddr, u64>,
    stats: ReassemblyStats,
}

impl Reassembler {
    pub fn new(window: usize) -> Self {
        Reassembler {
            window: window.max(1),
            partials: HashMap::new(),
            newest: HashMap::new(),
            stats: ReassemblyStats::default(),
        }
    }

    pub fn stats(&self) -> ReassemblyStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.partials.len()
    }

    pub fn push(&mut self, src: SocketAddr, frame: WireFrame) -> Option<Message> {
        self.stats.frames += 1;
        let seq = frame.msg_seq;
        let window = self.window as u64;
        let newest = self.newest.get(&src).copied();
        let key = (src, seq);

        if !self.partials.contains_key(&key) {
            if let Some(n) = newest {
                if seq.saturating_add(window) < n {
                    self.stats.stale += 1;
                    return None;
                }
            }
        }
        if newest.is_none_or(|n| seq > n) {
            self.newest.insert(src, seq);
            let before = self.partials.len();
            self.partials
                .retain(|(s, q), _| *s != src || q.saturating_add(window) >= seq);
            self.stats.evicted += (before - self.partials.len()) as u64;
        }

        if frame.frag_count == 1 {
            return self.finish(frame.msg_seq, frame.type_tag, frame.ts_origin, frame.body);
        }

        if !self.partials.contains_key(&key) {
            let from_src = self.partials.keys().filter(|(s, _)| *s == src).count();
            if from_src >= self.window {
                if let Some(oldest) = self
                    .partials
                    .keys()
                    .filter(|(s, _)| *s == src)
                    .min_by_key(|(_, q)| *q)
                    .copied()
                {
                    self.partials.remove(&oldest);
                    self.stats.evicted += 1;
                }
            }
            self.partials.insert(
                key,
                Partial {
                    frag_count: frame.frag_count,
                    type_tag: frame.type_tag.clone(),
                    ts_origin: frame.ts_origin,
                    fragments: vec![None; frame.frag_count as usize],
                    received: 0,
                },
            );
        }

        let partial = self.partials.get_mut(&key).expect("inserted above");
        if partial.frag_count != frame.frag_count
            || partial.ts_origin != frame.ts_origin
            || partial.type_tag != frame.type_tag
        {
            self.partials.remove(&key);
            self.stats.malformed += 1;
            return None;
        }
        let slot = &mut partial.fragments[frame.frag_index as usize];
        if slot.is_none() {
            *slot = Some(frame.body);
            partial.received += 1;
        }
        if partial.received < partial.frag_count as usize {
            return None;
        }
        let partial = self.partials.remove(&key).expect("present");
        let total: usize = partial
            .fragments
            .iter()
            .map(|f| f.as_ref().map_or(0, |b| b.len()))
            .sum();
        let mut body = BytesMut::with_capacity(total);
        for f in partial.fragments.into_iter().flatten() {
            body.put_slice(&f);
        }
        self.finish(seq, partial.type_tag, partial.ts_origin, body.freeze())
    }

    fn finish(&mut self, seq: u64, tag: String, ts_origin: u64, body: Bytes) -> Option<Message> {
        match message_from_body(seq, tag, ts_origin, &body, 0) {
            Ok(m) => {
                self.stats.delivered += 1;
                Some(m)
            }
            Err(_) => {
                self.stats.malformed += 1;
                None
            }
        }
    }
}
