use crate::clock::now_ns;
use crate::message::Hop;
use crate::metrics::{MetricsEvent, SinkRecord};
use crate::recipe::Params;
use crate::runtime::{
    Kernel, KernelContext, KernelError, KernelStatus, PortManager, PortSemantics,
};

use super::required;

/// Display stand-in and measurement point: `in` (blocking).
///
/// Appends its own hop and reports a [`SinkRecord`] per message to the
/// pipeline's metrics channel.
/// Params: `log_every` (0 disables logging), `capture` (false; keeps
/// payloads in the records).
pub struct Sink {
    log_every: u64,
    capture: bool,
    received: u64,
}

impl Sink {
    pub const TYPE: &'static str = "Sink";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&["log_every", "capture"])?;
        let log_every = params.u64_or("log_every", 0)?;
        let capture = params.bool_or("capture", false)?;
        ports.register_in_port("in", PortSemantics::Blocking)?;
        Ok(Box::new(Sink {
            log_every,
            capture,
            received: 0,
        }))
    }
}

impl Kernel for Sink {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        let Some(mut msg) = required(ctx, "in")? else {
            return Ok(KernelStatus::Stop);
        };
        let now = now_ns();
        let floor = msg.hops.last().map_or(msg.ts_origin, |h| h.ts);
        msg.hops.push(Hop {
            stage: ctx.instance_id().to_owned(),
            ts: now.max(floor),
        });
        self.received += 1;
        if self.log_every > 0 && self.received.is_multiple_of(self.log_every) {
            tracing::info!(
                kernel = ctx.instance_id(),
                received = self.received,
                seq = msg.seq,
                age_ms = (now.saturating_sub(msg.ts_origin)) as f64 / 1e6,
                "sink progress"
            );
        }
        if let Some(tx) = ctx.ports.metrics() {
            let mut rec = SinkRecord::from_message(ctx.instance_id(), &msg, now.max(floor));
            if self.capture {
                rec.payload = Some(msg.payload.clone());
            }
            tx.send(MetricsEvent::Sink(rec));
        }
        Ok(KernelStatus::Continue)
    }
}
