use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{tagged_payload, PayloadPool};
use crate::recipe::{Params, MAX_MILLIS};
use crate::runtime::{
    FrequencyManager, Kernel, KernelContext, KernelError, KernelStatus, PortManager,
};

/// Periodic frame producer (`out`).
///
/// Params: `hz` (30), `payload_bytes` (1024), `seed` (0), `count` (0 means
/// unbounded).
pub struct FrameSource {
    pool: PayloadPool,
    pacing: FrequencyManager,
    count: u64,
    emitted: u64,
}

impl FrameSource {
    pub const TYPE: &'static str = "FrameSource";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&["hz", "payload_bytes", "seed", "count"])?;
        let hz = params.f64_or("hz", 30.0)?;
        let payload_bytes = params.size_or("payload_bytes", 1024)?;
        let seed = params.u64_or("seed", 0)?;
        let count = params.u64_or("count", 0)?;
        let pacing = FrequencyManager::new(hz)?;
        ports.register_out_port("out")?;
        Ok(Box::new(FrameSource {
            pool: PayloadPool::new(seed, payload_bytes),
            pacing,
            count,
            emitted: 0,
        }))
    }
}

impl Kernel for FrameSource {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        let mut msg = ctx.ports.get_output_placeholder("out")?;
        msg.type_tag = "frame".into();
        msg.payload = self.pool.payload(msg.seq);
        ctx.ports.send_output("out", msg)?;
        self.emitted += 1;
        if self.count > 0 && self.emitted >= self.count {
            return Ok(KernelStatus::Stop);
        }
        if self.pacing.regulate(&ctx.stop) {
            return Ok(KernelStatus::Stop);
        }
        Ok(KernelStatus::Continue)
    }
}

/// Sporadic events (`out`) with exponential inter-arrival times.
///
/// Params: `mean_interval_ms` (1000), `seed` (0), `payload_bytes` (16).
pub struct EventSource {
    rng: ChaCha8Rng,
    gaps: Exp<f64>,
    next: Instant,
    payload_bytes: usize,
}

impl EventSource {
    pub const TYPE: &'static str = "EventSource";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&["mean_interval_ms", "seed", "payload_bytes"])?;
        let mean = params.f64_or("mean_interval_ms", 1000.0)?;
        if !(mean > 0.0 && mean <= MAX_MILLIS) {
            return Err(KernelError::Config(format!(
                "mean_interval_ms must be within (0, {MAX_MILLIS}], got {mean}"
            )));
        }
        let seed = params.u64_or("seed", 0)?;
        let payload_bytes = params.size_or("payload_bytes", 16)?;
        ports.register_out_port("out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaps = Exp::new(1.0 / mean).map_err(|e| KernelError::Config(e.to_string()))?;
        let first = gap(gaps.sample(&mut rng));
        Ok(Box::new(EventSource {
            rng,
            gaps,
            next: Instant::now() + first,
            payload_bytes,
        }))
    }

    /// The gap sequence (ms) a given seed produces.
    pub fn intervals_ms(mean_interval_ms: f64, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaps = Exp::new(1.0 / mean_interval_ms).expect("positive mean");
        (0..n).map(|_| gaps.sample(&mut rng)).collect()
    }
}

/// Exponential tails are unbounded; a single gap is capped at one day.
fn gap(ms: f64) -> Duration {
    Duration::from_secs_f64(ms.min(MAX_MILLIS) / 1000.0)
}

impl Kernel for EventSource {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        if ctx.stop.sleep_until(self.next) {
            return Ok(KernelStatus::Stop);
        }
        let mut msg = ctx.ports.get_output_placeholder("out")?;
        msg.type_tag = "event".into();
        msg.payload = tagged_payload(&[msg.seq], self.payload_bytes);
        ctx.ports.send_output("out", msg)?;
        let gap = gap(self.gaps.sample(&mut self.rng));
        self.next += gap;
        Ok(KernelStatus::Continue)
    }
}
