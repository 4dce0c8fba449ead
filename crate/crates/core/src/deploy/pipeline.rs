//! Turning validated metadata into running kernel threads.

use std::collections::HashMap;
use std::process::{Child, Command, Stdio};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::registry::KernelRegistry;
use super::DeployError;
use crate::clock::StopToken;
use crate::metrics::MetricsTx;
use crate::recipe::{validate, Activation, KernelPlan, PipelineMetadata, PipelineRecipe, Protocol};
use crate::runtime::channel::QueueMonitor;
use crate::runtime::{
    run_kernel, ActivationOptions, ConnectionState, EventLog, Kernel, KernelContext, KernelError,
    PortManager, PortStats, PortStatsSnapshot, SocketRegistry,
};

/// How long [`PipelineHandle::stop`] waits for kernel threads.
pub const STOP_GRACE: Duration = Duration::from_secs(5);

/// Address used for a host label with no entry in [`PipelineOptions::hosts`].
const DEFAULT_HOST: &str = "127.0.0.1";

#[derive(Clone, Default)]
pub struct PipelineOptions {
    pub activation: ActivationOptions,
    pub metrics: Option<MetricsTx>,
    /// Host label → address for remote outputs naming a label.
    pub hosts: HashMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunState {
    Created,
    Running,
    Stopped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelReport {
    pub instance_id: String,
    pub steps: u64,
    /// Set when the kernel failed or did not exit within the grace period.
    pub error: Option<String>,
}

struct Instance {
    kernel: Box<dyn Kernel>,
    ctx: KernelContext,
    exec: Option<Vec<String>>,
}

struct Running {
    instance_id: String,
    thread: JoinHandle<Result<u64, KernelError>>,
}

/// A deployed pipeline on this process.
pub struct PipelineHandle {
    metadata: PipelineMetadata,
    state: RunState,
    created: Vec<Instance>,
    running: Vec<Running>,
    children: Vec<(String, Child)>,
    reports: Vec<KernelReport>,
    stop: StopToken,
    monitors: Vec<QueueMonitor>,
    stats: Vec<(String, std::sync::Arc<PortStats>)>,
    bound: Vec<(String, u16)>,
    events: EventLog,
    sockets: SocketRegistry,
}

fn connection_state(protocol: Protocol, host: String, port: u16) -> ConnectionState {
    match protocol {
        Protocol::TCP => ConnectionState::RemoteReliable { host, port },
        Protocol::RTP => ConnectionState::RemoteDatagram { host, port },
    }
}

fn with_queue(base: &ActivationOptions, queue_size: Option<usize>) -> ActivationOptions {
    let mut o = base.clone();
    if queue_size.is_some() {
        o.remote_queue = queue_size;
    }
    o
}

impl PipelineHandle {
    /// Builds every kernel and activates every port without starting any
    /// thread. Remote inputs are listening when this returns; remote outputs
    /// connect in the background.
    pub fn instantiate(
        metadata: PipelineMetadata,
        registry: &KernelRegistry,
        opts: &PipelineOptions,
    ) -> Result<Self, DeployError> {
        let events = opts.activation.events.clone().unwrap_or_default();
        let sockets = opts.activation.sockets.clone().unwrap_or_default();
        let mut base = opts.activation.clone();
        base.events = Some(events.clone());
        base.sockets = Some(sockets.clone());
        let resolve = |host: &str| -> String {
            opts.hosts.get(host).cloned().unwrap_or_else(|| match host {
                h if h == "localhost" || h.parse::<std::net::IpAddr>().is_ok() => h.to_owned(),
                _ => DEFAULT_HOST.to_owned(),
            })
        };
        let port_err = |plan: &KernelPlan| {
            let id = plan.instance_id().to_owned();
            move |source| DeployError::Port {
                kernel: id.clone(),
                source,
            }
        };

        let mut managers: Vec<(Box<dyn Kernel>, PortManager)> = Vec::new();
        for plan in &metadata.kernels {
            managers.push(registry.build(plan.kernel_type(), plan.instance_id(), &plan.params)?);
        }

        // Listeners first, so local peers never wait on an unbound port.
        for (plan, (_, pm)) in metadata.kernels.iter().zip(managers.iter_mut()) {
            for p in &plan.inputs {
                match &p.activation {
                    Activation::Listen {
                        protocol,
                        port,
                        queue_size,
                    } => pm
                        .activate_with(
                            &p.tag,
                            connection_state(*protocol, "0.0.0.0".into(), *port),
                            None,
                            &with_queue(&base, *queue_size),
                        )
                        .map_err(port_err(plan))?,
                    Activation::Unconnected => {
                        pm.mark_unconnected(&p.tag).map_err(port_err(plan))?
                    }
                    Activation::Local { .. } | Activation::Connect { .. } => {}
                }
            }
        }
        for (plan, (_, pm)) in metadata.kernels.iter().zip(managers.iter_mut()) {
            let state_of = |a: &Activation| match a {
                Activation::Local { capacity } => Some((
                    ConnectionState::Local {
                        capacity: *capacity,
                    },
                    base.clone(),
                )),
                Activation::Connect {
                    host,
                    port,
                    protocol,
                    queue_size,
                } => Some((
                    connection_state(*protocol, resolve(host), *port),
                    with_queue(&base, *queue_size),
                )),
                _ => None,
            };
            for p in &plan.outputs {
                if let Some((state, o)) = state_of(&p.activation) {
                    pm.activate_with(&p.tag, state, Some(p.semantics), &o)
                        .map_err(port_err(plan))?;
                }
            }
            for b in &plan.branches {
                if let Some((state, o)) = state_of(&b.port.activation) {
                    pm.branch_output(&b.source, &b.port.tag, state, b.port.semantics, &o)
                        .map_err(port_err(plan))?;
                }
            }
        }

        let index: HashMap<&str, usize> = metadata
            .kernels
            .iter()
            .enumerate()
            .map(|(i, k)| (k.instance_id(), i))
            .collect();
        for e in &metadata.local_edges {
            let (s, r) = (index[e.send_kernel.as_str()], index[e.recv_kernel.as_str()]);
            let peer = managers[s].1.take_local_peer(&e.send_port).ok_or_else(|| {
                DeployError::Wiring(format!(
                    "{}.{} has no local queue",
                    e.send_kernel, e.send_port
                ))
            })?;
            managers[r]
                .1
                .attach_local_input(&e.recv_port, peer)
                .map_err(|source| DeployError::Port {
                    kernel: e.recv_kernel.clone(),
                    source,
                })?;
        }

        let mut created = Vec::new();
        let mut monitors = Vec::new();
        let mut stats = Vec::new();
        let mut bound = Vec::new();
        let stop = StopToken::new();
        for (plan, (kernel, mut pm)) in metadata.kernels.iter().zip(managers) {
            let missing = pm.unactivated();
            if !missing.is_empty() {
                return Err(DeployError::Unactivated {
                    kernel: plan.instance_id().to_owned(),
                    ports: missing,
                });
            }
            pm.set_metrics(opts.metrics.clone());
            monitors.extend(pm.monitors());
            stats.extend(pm.stats());
            for p in &plan.inputs {
                if let Some(port) = pm.bound_port(&p.tag) {
                    bound.push((format!("{}.{}", plan.instance_id(), p.tag), port));
                }
            }
            let ctx = KernelContext::new(pm)
                .with_frequency(plan.frequency)
                .map_err(|e| DeployError::Wiring(format!("{}: {e}", plan.instance_id())))?
                .with_stop(stop.clone());
            created.push(Instance {
                kernel,
                ctx,
                exec: plan.exec.clone(),
            });
        }

        Ok(PipelineHandle {
            metadata,
            state: RunState::Created,
            created,
            running: Vec::new(),
            children: Vec::new(),
            reports: Vec::new(),
            stop,
            monitors,
            stats,
            bound,
            events,
            sockets,
        })
    }

    /// Spawns one thread per kernel, plus each kernel's `exec` command.
    pub fn start(&mut self) -> Result<(), DeployError> {
        if self.state != RunState::Created {
            return Err(DeployError::State(format!(
                "start requires a created pipeline, state is {:?}",
                self.state
            )));
        }
        for inst in std::mem::take(&mut self.created) {
            let Instance {
                mut kernel,
                mut ctx,
                exec,
            } = inst;
            let id = ctx.instance_id().to_owned();
            if let Some(argv) = exec {
                let child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::null())
                    .spawn()
                    .map_err(|e| DeployError::Exec {
                        kernel: id.clone(),
                        reason: e.to_string(),
                    })?;
                self.events.push(format!("exec {id} pid {}", child.id()));
                self.children.push((id.clone(), child));
            }
            let thread = std::thread::Builder::new()
                .name(id.clone())
                .spawn(move || {
                    let r = run_kernel(kernel.as_mut(), &mut ctx);
                    if let Err(e) = &r {
                        tracing::error!(kernel = ctx.instance_id(), error = %e, "kernel failed");
                    }
                    r
                })
                .map_err(|e| DeployError::State(format!("spawning {id}: {e}")))?;
            self.running.push(Running {
                instance_id: id,
                thread,
            });
        }
        self.events.push("started");
        self.state = RunState::Running;
        Ok(())
    }

    pub fn metadata(&self) -> &PipelineMetadata {
        &self.metadata
    }

    /// `Running` until every kernel thread has exited on its own or
    /// [`stop`](Self::stop) is called.
    pub fn state(&mut self) -> RunState {
        if self.state == RunState::Running && self.running.iter().all(|r| r.thread.is_finished()) {
            self.collect(Instant::now());
        }
        self.state
    }

    /// True once every kernel thread has exited.
    pub fn is_finished(&self) -> bool {
        self.state != RunState::Created && self.running.iter().all(|r| r.thread.is_finished())
    }

    /// Waits up to `timeout` for every kernel to exit on its own.
    pub fn wait(&mut self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while !self.is_finished() {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        self.state();
        true
    }

    /// Stops every kernel: sources see the stop flag, blocked readers see
    /// their queues closed and stream sockets are shut down. Threads get
    /// [`STOP_GRACE`] to exit.
    pub fn stop(&mut self) -> Vec<KernelReport> {
        self.stop_within(STOP_GRACE)
    }

    pub fn stop_within(&mut self, grace: Duration) -> Vec<KernelReport> {
        if matches!(self.state, RunState::Stopped | RunState::Failed) {
            return self.reports.clone();
        }
        self.stop.stop();
        for m in &self.monitors {
            m.close();
        }
        self.sockets.shutdown_all();
        self.created.clear();
        for (_, child) in &mut self.children {
            let _ = child.kill();
            let _ = child.wait();
        }
        self.collect(Instant::now() + grace);
        self.events.push("stopped");
        self.reports.clone()
    }

    fn collect(&mut self, deadline: Instant) {
        while self.running.iter().any(|r| !r.thread.is_finished()) && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        let mut failed = false;
        for r in std::mem::take(&mut self.running) {
            let report = if r.thread.is_finished() {
                match r.thread.join() {
                    Ok(Ok(steps)) => KernelReport {
                        instance_id: r.instance_id,
                        steps,
                        error: None,
                    },
                    Ok(Err(e)) => KernelReport {
                        instance_id: r.instance_id,
                        steps: 0,
                        error: Some(e.to_string()),
                    },
                    Err(_) => KernelReport {
                        instance_id: r.instance_id,
                        steps: 0,
                        error: Some("kernel panicked".into()),
                    },
                }
            } else {
                // Detached: the thread keeps its resources until it returns.
                KernelReport {
                    instance_id: r.instance_id,
                    steps: 0,
                    error: Some("did not stop within the grace period".into()),
                }
            };
            failed |= report.error.is_some();
            self.reports.push(report);
        }
        self.state = if failed {
            RunState::Failed
        } else {
            RunState::Stopped
        };
    }

    /// Per-kernel state with the failure cause, if any.
    pub fn kernel_states(&self) -> Vec<(String, RunState, Option<String>)> {
        match self.state {
            RunState::Created => self
                .created
                .iter()
                .map(|i| (i.ctx.instance_id().to_owned(), RunState::Created, None))
                .collect(),
            RunState::Running => self
                .running
                .iter()
                .map(|r| {
                    let s = if r.thread.is_finished() {
                        RunState::Stopped
                    } else {
                        RunState::Running
                    };
                    (r.instance_id.clone(), s, None)
                })
                .collect(),
            RunState::Stopped | RunState::Failed => self
                .reports
                .iter()
                .map(|r| {
                    let s = if r.error.is_some() {
                        RunState::Failed
                    } else {
                        RunState::Stopped
                    };
                    (r.instance_id.clone(), s, r.error.clone())
                })
                .collect(),
        }
    }

    pub fn reports(&self) -> &[KernelReport] {
        &self.reports
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    /// Counters per `instance.port`.
    pub fn port_stats(&self) -> Vec<(String, PortStatsSnapshot)> {
        self.stats
            .iter()
            .map(|(l, s)| (l.clone(), s.snapshot()))
            .collect()
    }

    /// Ports bound by remote inputs, keyed `instance.port`.
    pub fn bound_ports(&self) -> &[(String, u16)] {
        &self.bound
    }
}

impl Drop for PipelineHandle {
    fn drop(&mut self) {
        if self.state == RunState::Running {
            self.stop();
        }
    }
}

impl std::fmt::Debug for PipelineHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PipelineHandle")
            .field("state", &self.state)
            .field("kernels", &self.metadata.kernels.len())
            .finish()
    }
}

/// Validates `recipe`, instantiates it and starts it on this process.
pub fn deploy_local(
    recipe: &PipelineRecipe,
    registry: &KernelRegistry,
    opts: &PipelineOptions,
) -> Result<PipelineHandle, DeployError> {
    let meta = validate(recipe, registry).map_err(DeployError::Invalid)?;
    let mut handle = PipelineHandle::instantiate(meta, registry, opts)?;
    handle.start()?;
    Ok(handle)
}
