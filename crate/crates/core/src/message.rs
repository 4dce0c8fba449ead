//! The unit of dataflow.

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::clock::now_ns;

/// Largest payload any channel accepts.
pub const MAX_PAYLOAD: usize = 64 << 20;

/// Stage label appended by a remote input port when a message arrives.
pub const TRANSPORT_STAGE: &str = "transport";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub stage: String,
    pub ts: u64,
}

/// A message travelling through the pipeline.
///
/// `ts_origin` and hop timestamps are nanoseconds since the Unix epoch (see
/// [`crate::clock::now_ns`]). The payload is reference counted: local
/// delivery and fan-out hand the same buffer to every consumer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Message {
    pub type_tag: String,
    pub seq: u64,
    pub ts_origin: u64,
    pub hops: Vec<Hop>,
    pub payload: Bytes,
}

impl Message {
    pub fn new(type_tag: impl Into<String>, payload: impl Into<Bytes>) -> Self {
        Message {
            type_tag: type_tag.into(),
            seq: 0,
            ts_origin: now_ns(),
            hops: Vec::new(),
            payload: payload.into(),
        }
    }

    /// Takes over the origin timestamp and hop history of `upstream`, so the
    /// derived message is attributed to the same originating data.
    pub fn inherit(&mut self, upstream: &Message) {
        self.ts_origin = upstream.ts_origin;
        self.hops = upstream.hops.clone();
    }

    pub fn push_hop(&mut self, stage: impl Into<String>, ts: u64) {
        self.hops.push(Hop {
            stage: stage.into(),
            ts,
        });
    }

    pub fn age_ns(&self, now: u64) -> u64 {
        now.saturating_sub(self.ts_origin)
    }

    /// `ts_origin <= hops[0].ts <= hops[1].ts <= ...`
    pub fn timestamps_ordered(&self) -> bool {
        let mut prev = self.ts_origin;
        for hop in &self.hops {
            if hop.ts < prev {
                return false;
            }
            prev = hop.ts;
        }
        true
    }
}
