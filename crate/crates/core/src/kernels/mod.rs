//! Built-in synthetic kernels.
//!
//! They stand in for the stages of AR/VR pipelines (camera, detector,
//! renderer, codecs, display) by sleeping for a configured compute time and
//! producing payloads of configured sizes. Every kernel is placement-agnostic:
//! the recipe alone decides where it runs and how it is connected.
//!
//! Port tags: sources emit on `out`; single-input stages read `in`;
//! `RendererStub` reads `bg`, `det`, `key`; `PoseEstimatorStub` reads `imu`,
//! `cam`; `ExampleKernel` reads `in1`, `in2`.

mod example;
mod sink;
mod sources;
mod stubs;

use std::time::{Duration, Instant};

use bytes::{Bytes, BytesMut};

pub use example::ExampleKernel;
pub use sink::Sink;
pub use sources::{EventSource, FrameSource};
pub use stubs::{CodecMode, CodecStub, DetectorStub, PoseEstimatorStub, RendererStub, StampMeta};

use crate::recipe::ParamError;
use crate::runtime::{KernelContext, KernelError, PortError, Received};
use crate::Message;

impl From<ParamError> for KernelError {
    fn from(e: ParamError) -> Self {
        KernelError::Config(e.to_string())
    }
}

/// Simulated compute. Sleeps by default; `busy` spins instead.
/// Returns `true` if the pipeline was stopped meanwhile.
pub(crate) fn work(ctx: &KernelContext, d: Duration, busy: bool) -> bool {
    if d.is_zero() {
        return ctx.stop.is_stopped();
    }
    if !busy {
        return ctx.sleep(d);
    }
    let end = Instant::now() + d;
    while Instant::now() < end {
        if ctx.stop.is_stopped() {
            return true;
        }
        std::hint::spin_loop();
    }
    false
}

/// Reads a hard-dependency input: `None` once the upstream has finished.
pub(crate) fn required(ctx: &mut KernelContext, tag: &str) -> Result<Option<Message>, KernelError> {
    match ctx.ports.get_input(tag)? {
        Received::Message(m) => Ok(Some(m)),
        Received::EndOfStream => Ok(None),
        Received::Absent => Err(KernelError::Port(PortError::InvalidState {
            tag: tag.to_owned(),
            reason: "blocking read returned nothing".into(),
        })),
    }
}

/// Reads a soft-dependency input, keeping only the newest queued message.
pub(crate) fn latest(ctx: &mut KernelContext, tag: &str) -> Result<Option<Message>, KernelError> {
    let mut newest = None;
    loop {
        match ctx.ports.get_input(tag)? {
            Received::Message(m) => newest = Some(m),
            Received::Absent | Received::EndOfStream => return Ok(newest),
        }
    }
}

/// Payload of `len` bytes derived from a seeded pool: distinct per seq,
/// reproducible per seed, and a zero-copy slice of the pool.
pub(crate) struct PayloadPool {
    pool: Bytes,
    len: usize,
}

const POOL_SLACK: usize = 4096;

impl PayloadPool {
    pub fn new(seed: u64, len: usize) -> Self {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut buf = BytesMut::zeroed(len + POOL_SLACK);
        rng.fill_bytes(&mut buf);
        PayloadPool {
            pool: buf.freeze(),
            len,
        }
    }

    pub fn payload(&self, seq: u64) -> Bytes {
        let offset = (seq.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 52) as usize % POOL_SLACK;
        self.pool.slice(offset..offset + self.len)
    }
}

/// `len` bytes starting with the given words (little-endian), zero-padded;
/// grows to fit the words.
pub(crate) fn tagged_payload(words: &[u64], len: usize) -> Bytes {
    let mut buf = BytesMut::zeroed(len.max(words.len() * 8));
    for (i, w) in words.iter().enumerate() {
        buf[i * 8..i * 8 + 8].copy_from_slice(&w.to_le_bytes());
    }
    buf.freeze()
}

pub(crate) fn read_word(payload: &[u8], index: usize) -> Option<u64> {
    payload
        .get(index * 8..index * 8 + 8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
}
