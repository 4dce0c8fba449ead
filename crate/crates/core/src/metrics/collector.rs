//! Measurement events flowing from kernels to the benchmark runner.

use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::message::{Hop, Message};

/// One message arriving at a sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkRecord {
    pub sink: String,
    pub seq: u64,
    pub ts_origin: u64,
    pub received_ns: u64,
    pub payload_len: usize,
    pub hops: Vec<Hop>,
    /// Present only when the sink was asked to capture payloads.
    #[serde(skip)]
    pub payload: Option<bytes::Bytes>,
}

impl SinkRecord {
    /// Builds a record; the caller has already appended the sink's own hop.
    pub fn from_message(sink: &str, msg: &Message, received_ns: u64) -> Self {
        SinkRecord {
            sink: sink.to_owned(),
            seq: msg.seq,
            ts_origin: msg.ts_origin,
            received_ns,
            payload_len: msg.payload.len(),
            hops: msg.hops.clone(),
            payload: None,
        }
    }

    pub fn age_ns(&self) -> u64 {
        self.received_ns.saturating_sub(self.ts_origin)
    }

    /// `(stage, duration_ns)` for each hop, measured from the previous hop
    /// (the first from `ts_origin`). The durations sum to the age at the
    /// last hop.
    pub fn stage_deltas(&self) -> Vec<(&str, u64)> {
        let mut prev = self.ts_origin;
        self.hops
            .iter()
            .map(|h| {
                let d = h.ts.saturating_sub(prev);
                prev = prev.max(h.ts);
                (h.stage.as_str(), d)
            })
            .collect()
    }
}

/// A kernel taking a message off an input port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumedRecord {
    pub consumer: String,
    pub port: String,
    pub ts_origin: u64,
    pub consumed_ns: u64,
}

impl ConsumedRecord {
    pub fn age_ns(&self) -> u64 {
        self.consumed_ns.saturating_sub(self.ts_origin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsEvent {
    Sink(SinkRecord),
    Consumed(ConsumedRecord),
}

impl MetricsEvent {
    pub fn consumed(consumer: &str, port: &str, ts_origin: u64, consumed_ns: u64) -> Self {
        MetricsEvent::Consumed(ConsumedRecord {
            consumer: consumer.to_owned(),
            port: port.to_owned(),
            ts_origin,
            consumed_ns,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MetricsTx {
    tx: mpsc::Sender<MetricsEvent>,
}

impl MetricsTx {
    /// Never blocks; events sent after the collector is gone are discarded.
    pub fn send(&self, event: MetricsEvent) {
        let _ = self.tx.send(event);
    }
}

#[derive(Debug)]
pub struct Collector {
    rx: mpsc::Receiver<MetricsEvent>,
}

pub fn metrics_channel() -> (MetricsTx, Collector) {
    let (tx, rx) = mpsc::channel();
    (MetricsTx { tx }, Collector { rx })
}

impl Collector {
    /// Everything received so far.
    pub fn drain(&self) -> Vec<MetricsEvent> {
        self.rx.try_iter().collect()
    }

    pub fn sink_records(events: &[MetricsEvent]) -> impl Iterator<Item = &SinkRecord> {
        events.iter().filter_map(|e| match e {
            MetricsEvent::Sink(r) => Some(r),
            _ => None,
        })
    }

    pub fn consumed_records(events: &[MetricsEvent]) -> impl Iterator<Item = &ConsumedRecord> {
        events.iter().filter_map(|e| match e {
            MetricsEvent::Consumed(r) => Some(r),
            _ => None,
        })
    }
}
