//! Per-kernel port registry.
//!
//! Registration happens while a kernel is constructed; activation is done by
//! the deployer from the recipe. Kernels then only read inputs, take output
//! placeholders and send.

use std::collections::HashMap;
use std::time::Duration;

use indexmap::IndexMap;

use super::channel::{bounded, QueueMonitor, QueueReceiver};
use super::kernel::KernelDescriptor;
use super::port::{
    ConnectionState, Delivery, Direction, Endpoint, FlexPort, PortSemantics, PortStats,
};
use super::remote::{RemoteReader, RemoteWriter};
use super::{EventLog, PortError, Received, SocketRegistry};
use crate::clock::now_ns;
use crate::message::{Hop, Message};
use crate::metrics::{MetricsEvent, MetricsTx};
use crate::transport::{DatagramConfig, DatagramEndpoint, NetworkConditions, ReliableListener};
use std::sync::Arc;

/// Connect attempts for remote outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub interval: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 20,
            interval: Duration::from_millis(250),
        }
    }
}

/// Deployment-side knobs that are not part of a port's own state.
#[derive(Clone, Default)]
pub struct ActivationOptions {
    pub retry: RetryPolicy,
    pub datagram: DatagramConfig,
    /// Test shim applied to outgoing remote traffic.
    pub conditions: Option<NetworkConditions>,
    /// Hand-off queue capacity for remote ports; `None` means 1.
    pub remote_queue: Option<usize>,
    pub events: Option<EventLog>,
    pub sockets: Option<SocketRegistry>,
}

impl ActivationOptions {
    fn remote_capacity(&self) -> usize {
        self.remote_queue.unwrap_or(1).max(1)
    }
}

/// The consuming end of a local output, handed to the downstream kernel's
/// input with [`PortManager::attach_local_input`].
pub struct LocalPeer {
    rx: QueueReceiver,
}

impl LocalPeer {
    pub fn capacity(&self) -> usize {
        self.rx.monitor().capacity()
    }
}

impl std::fmt::Debug for LocalPeer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalPeer")
            .field("capacity", &self.capacity())
            .finish()
    }
}

pub struct PortManager {
    kernel_type: String,
    instance_id: String,
    inputs: IndexMap<String, FlexPort>,
    outputs: IndexMap<String, FlexPort>,
    /// branch name → registered output it hangs off.
    branch_of: HashMap<String, String>,
    pending_peers: HashMap<String, LocalPeer>,
    blocking_timeout: Option<Duration>,
    metrics: Option<MetricsTx>,
}

impl PortManager {
    pub fn new(kernel_type: impl Into<String>, instance_id: impl Into<String>) -> Self {
        PortManager {
            kernel_type: kernel_type.into(),
            instance_id: instance_id.into(),
            inputs: IndexMap::new(),
            outputs: IndexMap::new(),
            branch_of: HashMap::new(),
            pending_peers: HashMap::new(),
            blocking_timeout: None,
            metrics: None,
        }
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn kernel_type(&self) -> &str {
        &self.kernel_type
    }

    fn tag_taken(&self, tag: &str) -> bool {
        self.inputs.contains_key(tag)
            || self.outputs.contains_key(tag)
            || self.branch_of.contains_key(tag)
    }

    pub fn register_in_port(
        &mut self,
        tag: &str,
        semantics: PortSemantics,
    ) -> Result<(), PortError> {
        if self.tag_taken(tag) {
            return Err(PortError::DuplicateTag(tag.to_owned()));
        }
        let port = FlexPort::new(&self.instance_id, tag, Direction::Input, Some(semantics));
        self.inputs.insert(tag.to_owned(), port);
        Ok(())
    }

    pub fn register_out_port(&mut self, tag: &str) -> Result<(), PortError> {
        if self.tag_taken(tag) {
            return Err(PortError::DuplicateTag(tag.to_owned()));
        }
        let port = FlexPort::new(&self.instance_id, tag, Direction::Output, None);
        self.outputs.insert(tag.to_owned(), port);
        Ok(())
    }

    pub fn descriptor(&self) -> KernelDescriptor {
        KernelDescriptor {
            kernel_type: self.kernel_type.clone(),
            instance_id: self.instance_id.clone(),
            in_ports: self
                .inputs
                .values()
                .map(|p| (p.tag.clone(), p.semantics.expect("inputs carry semantics")))
                .collect(),
            out_ports: self.outputs.keys().cloned().collect(),
        }
    }

    /// Registered input or output port (not branches).
    pub fn port(&self, tag: &str) -> Option<&FlexPort> {
        self.inputs.get(tag).or_else(|| self.outputs.get(tag))
    }

    pub fn inputs(&self) -> impl Iterator<Item = &FlexPort> {
        self.inputs.values()
    }

    pub fn outputs(&self) -> impl Iterator<Item = &FlexPort> {
        self.outputs.values()
    }

    /// Guards blocking receives and sends; `None` waits indefinitely.
    pub fn set_blocking_timeout(&mut self, timeout: Option<Duration>) {
        self.blocking_timeout = timeout;
    }

    pub fn set_metrics(&mut self, tx: Option<MetricsTx>) {
        self.metrics = tx;
    }

    pub fn metrics(&self) -> Option<&MetricsTx> {
        self.metrics.as_ref()
    }

    /// Activates with default options. See [`activate_with`](Self::activate_with).
    pub fn activate_port(
        &mut self,
        tag: &str,
        state: ConnectionState,
        semantics: Option<PortSemantics>,
    ) -> Result<(), PortError> {
        self.activate_with(tag, state, semantics, &ActivationOptions::default())
    }

    /// Creates the channel behind a registered port.
    ///
    /// Local inputs are not activated here: their queue is created by the
    /// upstream output and attached with
    /// [`attach_local_input`](Self::attach_local_input).
    pub fn activate_with(
        &mut self,
        tag: &str,
        state: ConnectionState,
        semantics: Option<PortSemantics>,
        opts: &ActivationOptions,
    ) -> Result<(), PortError> {
        if let Some(port) = self.inputs.get_mut(tag) {
            if port.is_activated() {
                return Err(PortError::AlreadyActivated(tag.to_owned()));
            }
            if semantics.is_some() {
                return Err(PortError::SemanticsForInput(tag.to_owned()));
            }
            return activate_input(port, state, opts);
        }
        let port = self
            .outputs
            .get_mut(tag)
            .ok_or_else(|| PortError::UnknownPort(tag.to_owned()))?;
        if port.is_activated() {
            return Err(PortError::AlreadyActivated(tag.to_owned()));
        }
        let semantics = semantics.ok_or_else(|| PortError::MissingSemantics(tag.to_owned()))?;
        port.semantics = Some(semantics);
        if let Some(peer) = activate_output(port, state, opts)? {
            self.pending_peers.insert(tag.to_owned(), peer);
        }
        Ok(())
    }

    /// Adds an independently configured branch to a registered output.
    pub fn branch_output(
        &mut self,
        source_tag: &str,
        branch_name: &str,
        state: ConnectionState,
        semantics: PortSemantics,
        opts: &ActivationOptions,
    ) -> Result<(), PortError> {
        if self.inputs.contains_key(source_tag) {
            return Err(PortError::WrongDirection {
                tag: source_tag.to_owned(),
                expected: Direction::Output,
            });
        }
        if !self.outputs.contains_key(source_tag) {
            return Err(PortError::UnknownPort(source_tag.to_owned()));
        }
        if self.tag_taken(branch_name) {
            return Err(PortError::DuplicateBranch(branch_name.to_owned()));
        }
        let mut branch = FlexPort::new(
            &self.instance_id,
            branch_name,
            Direction::Output,
            Some(semantics),
        );
        let peer = activate_output(&mut branch, state, opts)?;
        if let Some(peer) = peer {
            self.pending_peers.insert(branch_name.to_owned(), peer);
        }
        self.outputs[source_tag].branches.push(branch);
        self.branch_of
            .insert(branch_name.to_owned(), source_tag.to_owned());
        Ok(())
    }

    /// Takes the consuming end of a locally activated output or branch.
    pub fn take_local_peer(&mut self, tag: &str) -> Option<LocalPeer> {
        self.pending_peers.remove(tag)
    }

    pub fn attach_local_input(&mut self, tag: &str, peer: LocalPeer) -> Result<(), PortError> {
        let port = self.input_mut(tag)?;
        if port.is_activated() {
            return Err(PortError::AlreadyActivated(tag.to_owned()));
        }
        port.state = ConnectionState::Local {
            capacity: peer.capacity(),
        };
        port.endpoint = Endpoint::LocalIn(peer.rx);
        Ok(())
    }

    /// Declares an optional non-blocking input as intentionally unwired.
    pub fn mark_unconnected(&mut self, tag: &str) -> Result<(), PortError> {
        let port = self.input_mut(tag)?;
        if port.is_activated() {
            return Err(PortError::AlreadyActivated(tag.to_owned()));
        }
        if port.semantics != Some(PortSemantics::NonBlocking) {
            return Err(PortError::InvalidState {
                tag: tag.to_owned(),
                reason: "only non-blocking inputs may stay unconnected".into(),
            });
        }
        port.state = ConnectionState::Unconnected;
        Ok(())
    }

    /// Registered ports (and branches) still unactivated.
    pub fn unactivated(&self) -> Vec<String> {
        self.inputs
            .values()
            .chain(self.outputs.values())
            .filter(|p| !p.is_activated())
            .map(|p| p.tag.clone())
            .collect()
    }

    fn input_mut(&mut self, tag: &str) -> Result<&mut FlexPort, PortError> {
        if self.outputs.contains_key(tag) || self.branch_of.contains_key(tag) {
            return Err(PortError::WrongDirection {
                tag: tag.to_owned(),
                expected: Direction::Input,
            });
        }
        self.inputs
            .get_mut(tag)
            .ok_or_else(|| PortError::UnknownPort(tag.to_owned()))
    }

    fn output_mut(&mut self, tag: &str) -> Result<&mut FlexPort, PortError> {
        if self.inputs.contains_key(tag) {
            return Err(PortError::WrongDirection {
                tag: tag.to_owned(),
                expected: Direction::Output,
            });
        }
        let port = self
            .outputs
            .get_mut(tag)
            .ok_or_else(|| PortError::UnknownPort(tag.to_owned()))?;
        if !port.is_activated() {
            return Err(PortError::NotActivated(tag.to_owned()));
        }
        Ok(port)
    }

    /// Reads one message according to the port's registered semantics.
    pub fn get_input(&mut self, tag: &str) -> Result<Received, PortError> {
        let timeout = self.blocking_timeout;
        self.get_input_timeout(tag, timeout)
    }

    pub fn get_input_timeout(
        &mut self,
        tag: &str,
        timeout: Option<Duration>,
    ) -> Result<Received, PortError> {
        let port = self.input_mut(tag)?;
        if !port.is_activated() {
            return Err(PortError::NotActivated(tag.to_owned()));
        }
        let got = port.receive(timeout)?;
        if let (Received::Message(m), Some(tx)) = (&got, &self.metrics) {
            tx.send(MetricsEvent::consumed(
                &self.instance_id,
                tag,
                m.ts_origin,
                now_ns(),
            ));
        }
        Ok(got)
    }

    /// A fresh message stamped with `ts_origin = now` and this port's next seq.
    pub fn get_output_placeholder(&mut self, tag: &str) -> Result<Message, PortError> {
        let port = self.output_mut(tag)?;
        let seq = port.next_seq;
        port.next_seq += 1;
        Ok(Message {
            seq,
            ts_origin: now_ns(),
            ..Message::default()
        })
    }

    /// Emits `msg` on the registered port and then on each branch in
    /// declaration order, each with its own semantics.
    ///
    /// Seqs must grow strictly per registered port: a seq not above the last
    /// one emitted is replaced by the port's next seq, a higher one (carried
    /// over from upstream) is kept.
    pub fn send_output(&mut self, tag: &str, mut msg: Message) -> Result<(), PortError> {
        let timeout = self.blocking_timeout;
        let label = self.instance_id.clone();
        let port = self.output_mut(tag)?;
        if port.last_seq.is_some_and(|last| msg.seq <= last) {
            msg.seq = port.next_seq.max(port.last_seq.unwrap_or(0) + 1);
        }
        port.next_seq = port.next_seq.max(msg.seq + 1);
        port.last_seq = Some(msg.seq);
        let floor = msg.hops.last().map_or(msg.ts_origin, |h| h.ts);
        msg.hops.push(Hop {
            stage: label,
            ts: now_ns().max(floor),
        });

        let targets = 1 + port.branches.len();
        let mut closed = 0;
        let mut pending = Some(msg);
        for i in 0..targets {
            let m = if i + 1 == targets {
                pending.take().expect("message kept for the last target")
            } else {
                pending.clone().expect("message present")
            };
            let target = if i == 0 {
                &mut *port
            } else {
                &mut port.branches[i - 1]
            };
            if matches!(target.deliver(m, timeout)?, Delivery::Closed) {
                closed += 1;
            }
        }
        if closed == targets {
            return Err(PortError::Closed(tag.to_owned()));
        }
        Ok(())
    }

    /// Per-port counters keyed by `instance.tag`, branches included.
    pub fn stats(&self) -> Vec<(String, Arc<PortStats>)> {
        let mut out = Vec::new();
        for p in self.inputs.values().chain(self.outputs.values()) {
            out.push((p.label().to_owned(), p.stats()));
            for b in &p.branches {
                out.push((b.label().to_owned(), b.stats()));
            }
        }
        out
    }

    /// Queue monitors for every channel owned by this kernel, used by the
    /// deployer to unblock a kernel when the pipeline stops.
    pub fn monitors(&self) -> Vec<QueueMonitor> {
        let mut out: Vec<QueueMonitor> = Vec::new();
        for p in self.inputs.values().chain(self.outputs.values()) {
            out.extend(p.monitor());
            out.extend(p.branches.iter().filter_map(|b| b.monitor()));
        }
        out.extend(self.pending_peers.values().map(|p| p.rx.monitor()));
        out
    }

    /// Port actually bound by a remote input.
    pub fn bound_port(&self, tag: &str) -> Option<u16> {
        self.inputs.get(tag).and_then(|p| p.bound_port)
    }

    /// Closes every channel. Downstream kernels observe end-of-stream once
    /// they have drained what was already queued.
    pub fn close_all(&mut self) {
        for p in self.inputs.values_mut().chain(self.outputs.values_mut()) {
            p.close();
        }
        self.pending_peers.clear();
    }
}

impl std::fmt::Debug for PortManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PortManager")
            .field("kernel_type", &self.kernel_type)
            .field("instance_id", &self.instance_id)
            .field("inputs", &self.inputs)
            .field("outputs", &self.outputs)
            .finish()
    }
}

fn activation_error(tag: &str, source: crate::transport::TransportError) -> PortError {
    PortError::Activation {
        tag: tag.to_owned(),
        source,
    }
}

fn activate_input(
    port: &mut FlexPort,
    state: ConnectionState,
    opts: &ActivationOptions,
) -> Result<(), PortError> {
    let tag = port.tag.clone();
    match &state {
        ConnectionState::Unactivated => {
            return Err(PortError::InvalidState {
                tag,
                reason: "cannot activate into the unactivated state".into(),
            })
        }
        ConnectionState::Unconnected => {
            if port.semantics != Some(PortSemantics::NonBlocking) {
                return Err(PortError::InvalidState {
                    tag,
                    reason: "only non-blocking inputs may stay unconnected".into(),
                });
            }
        }
        ConnectionState::Local { .. } => {
            return Err(PortError::InvalidState {
                tag,
                reason: "local inputs are attached from their upstream output".into(),
            })
        }
        ConnectionState::RemoteReliable { port: p, .. } => {
            let listener = ReliableListener::bind(*p).map_err(|e| activation_error(&tag, e))?;
            let bound = listener.local_port();
            if let Some(ev) = &opts.events {
                ev.push(format!("listen {} tcp:{bound}", port.label()));
            }
            let (reader, rx) =
                RemoteReader::spawn_reliable(port.label(), listener, opts.remote_capacity(), opts);
            port.endpoint = Endpoint::RemoteIn(rx, reader);
            port.bound_port = Some(bound);
        }
        ConnectionState::RemoteDatagram { port: p, .. } => {
            let ep = DatagramEndpoint::open(*p, None, opts.datagram)
                .map_err(|e| activation_error(&tag, e))?;
            let bound = ep
                .local_addr()
                .map_err(|e| activation_error(&tag, e))?
                .port();
            if let Some(ev) = &opts.events {
                ev.push(format!("listen {} udp:{bound}", port.label()));
            }
            let (reader, rx) = RemoteReader::spawn_datagram(
                port.label(),
                ep,
                opts.remote_capacity(),
                port.stats(),
            );
            port.endpoint = Endpoint::RemoteIn(rx, reader);
            port.bound_port = Some(bound);
        }
    }
    port.state = state;
    Ok(())
}

fn activate_output(
    port: &mut FlexPort,
    state: ConnectionState,
    opts: &ActivationOptions,
) -> Result<Option<LocalPeer>, PortError> {
    let tag = port.tag.clone();
    let mut peer = None;
    match &state {
        ConnectionState::Unactivated | ConnectionState::Unconnected => {
            return Err(PortError::InvalidState {
                tag,
                reason: format!("outputs cannot be activated as {state}"),
            })
        }
        ConnectionState::Local { capacity } => {
            if *capacity == 0 {
                return Err(PortError::InvalidState {
                    tag,
                    reason: "queue capacity must be at least 1".into(),
                });
            }
            let (tx, rx) = bounded(*capacity);
            port.endpoint = Endpoint::LocalOut(tx);
            peer = Some(LocalPeer { rx });
        }
        ConnectionState::RemoteReliable { host, port: p } => {
            if *p == 0 {
                return Err(PortError::InvalidState {
                    tag,
                    reason: "remote port must be in 1..65535".into(),
                });
            }
            let writer =
                RemoteWriter::spawn_reliable(port.label(), host, *p, opts.remote_capacity(), opts);
            port.endpoint = Endpoint::ReliableOut(writer);
        }
        ConnectionState::RemoteDatagram { host, port: p } => {
            if *p == 0 {
                return Err(PortError::InvalidState {
                    tag,
                    reason: "remote port must be in 1..65535".into(),
                });
            }
            let mut ep = DatagramEndpoint::open(0, Some((host, *p)), opts.datagram)
                .map_err(|e| activation_error(&tag, e))?;
            if let Some(c) = &opts.conditions {
                ep.set_conditions(c.clone())
                    .map_err(|e| activation_error(&tag, e))?;
            }
            port.endpoint = Endpoint::DatagramOut(Box::new(ep));
        }
    }
    port.state = state;
    Ok(peer)
}
