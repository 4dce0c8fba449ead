//! The kernel trait and its execution loop.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::port_manager::PortManager;
use super::{KernelError, PortError, PortSemantics};
use crate::clock::StopToken;

/// Development-time declaration of a kernel's ports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelDescriptor {
    pub kernel_type: String,
    pub instance_id: String,
    pub in_ports: Vec<(String, PortSemantics)>,
    pub out_ports: Vec<String>,
}

impl KernelDescriptor {
    pub fn input_semantics(&self, tag: &str) -> Option<PortSemantics> {
        self.in_ports
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, s)| *s)
    }

    pub fn has_output(&self, tag: &str) -> bool {
        self.out_ports.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelStatus {
    Continue,
    Stop,
}

/// A pipeline stage. Ports are registered on the [`PortManager`] when the
/// kernel is built and reached through the context while it runs.
pub trait Kernel: Send {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError>;

    /// Called once after the last step, before the ports are closed.
    fn on_stop(&mut self, _ctx: &mut KernelContext) {}
}

/// Paces a kernel so consecutive step starts are at least one period apart.
#[derive(Debug, Clone)]
pub struct FrequencyManager {
    period: Duration,
    last: Instant,
}

impl FrequencyManager {
    pub fn new(target_hz: f64) -> Result<Self, KernelError> {
        // The period must stay below a day so deadlines never overflow.
        if !(target_hz.is_finite() && target_hz >= 1.0 / 86_400.0) {
            return Err(KernelError::Config(format!(
                "frequency must be at least one per day, got {target_hz}"
            )));
        }
        Ok(FrequencyManager {
            period: Duration::from_secs_f64(1.0 / target_hz),
            last: Instant::now(),
        })
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    /// Sleeps out the rest of the current period. A step that overran its
    /// period is not followed by any added delay, and the missed time is not
    /// made up later. Returns `true` if `stop` fired during the wait.
    pub fn regulate(&mut self, stop: &StopToken) -> bool {
        let target = self.last + self.period;
        let now = Instant::now();
        if now < target {
            self.last = target;
            stop.sleep_until(target)
        } else {
            self.last = now;
            stop.is_stopped()
        }
    }
}

pub struct KernelContext {
    pub ports: PortManager,
    pub frequency: Option<FrequencyManager>,
    pub stop: StopToken,
    steps: u64,
}

impl KernelContext {
    pub fn new(ports: PortManager) -> Self {
        KernelContext {
            ports,
            frequency: None,
            stop: StopToken::new(),
            steps: 0,
        }
    }

    pub fn with_frequency(mut self, hz: Option<f64>) -> Result<Self, KernelError> {
        self.frequency = hz.map(FrequencyManager::new).transpose()?;
        Ok(self)
    }

    pub fn with_stop(mut self, stop: StopToken) -> Self {
        self.stop = stop;
        self
    }

    pub fn instance_id(&self) -> &str {
        self.ports.instance_id()
    }

    /// Steps completed so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Sleeps for `d`, waking early on stop. Returns `true` if stopped.
    pub fn sleep(&self, d: Duration) -> bool {
        !d.is_zero() && self.stop.sleep(d)
    }
}

impl std::fmt::Debug for KernelContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelContext")
            .field("instance_id", &self.instance_id())
            .field("steps", &self.steps)
            .finish()
    }
}

/// Runs `kernel` until it returns [`KernelStatus::Stop`], fails, or `ctx.stop`
/// fires. A send finding every downstream channel closed ends the loop
/// normally. On exit all ports are closed so downstream kernels see
/// end-of-stream; a failure is returned after that.
pub fn run_kernel(kernel: &mut dyn Kernel, ctx: &mut KernelContext) -> Result<u64, KernelError> {
    let result = loop {
        if ctx.stop.is_stopped() {
            break Ok(());
        }
        match kernel.step(ctx) {
            Ok(KernelStatus::Continue) => {
                ctx.steps += 1;
                if let Some(freq) = ctx.frequency.as_mut() {
                    if freq.regulate(&ctx.stop) {
                        break Ok(());
                    }
                }
            }
            Ok(KernelStatus::Stop) => {
                ctx.steps += 1;
                break Ok(());
            }
            Err(KernelError::Port(PortError::Closed(_))) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    kernel.on_stop(ctx);
    ctx.ports.close_all();
    result.map(|()| ctx.steps)
}
