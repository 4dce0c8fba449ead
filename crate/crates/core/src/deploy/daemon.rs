//! The deployment daemon and its client.
//!
//! Control traffic uses the same framed stream as reliable ports: each
//! request is a [`Message`] whose type tag names the command (`DEPLOY`,
//! `TEARDOWN`, `STATUS`, `PING`) and whose payload is JSON. Every request is
//! answered by one `REPLY` message carrying the daemon's clock, which lets
//! the client estimate the clock offset between the two hosts.
//! Pipelines deployed over a control connection are torn down when that
//! connection closes.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::pipeline::{KernelReport, PipelineHandle, PipelineOptions, RunState};
use super::registry::KernelRegistry;
use super::DeployError;
use crate::clock::{now_ns, StopToken};
use crate::message::Message;
use crate::recipe::{parse_recipe, validate, Violation};
use crate::runtime::PortStatsSnapshot;
use crate::transport::{Poll, ReliableEndpoint, ReliableListener};

pub const REPLY: &str = "REPLY";
const POLL: Duration = Duration::from_millis(50);
const REPLY_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeployRequest {
    pub pipeline_id: String,
    /// Recipe part for this daemon, host labels already resolved.
    pub recipe: String,
    /// Client registry fingerprint; a mismatch is rejected.
    pub fingerprint: String,
}

/// Names a pipeline; `STATUS` without an id lists every hosted pipeline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineRef {
    #[serde(default)]
    pub pipeline_id: Option<String>,
}

/// A remote input listening on the daemon's host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadyPort {
    pub instance: String,
    pub port: String,
    pub listen_port: u16,
}

fn ready_ports(handle: &PipelineHandle) -> Vec<ReadyPort> {
    handle
        .bound_ports()
        .iter()
        .map(|(label, p)| {
            let (instance, port) = label.split_once('.').unwrap_or((label, ""));
            ReadyPort {
                instance: instance.to_owned(),
                port: port.to_owned(),
                listen_port: *p,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Reply {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    pub server_time_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<RunState>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ready_ports: Vec<ReadyPort>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pipelines: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<KernelReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub port_stats: Vec<(String, PortStatsSnapshot)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<(u64, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

impl Reply {
    fn ok() -> Self {
        Reply {
            accepted: true,
            server_time_ns: now_ns(),
            ..Reply::default()
        }
    }

    fn err(e: impl ToString) -> Self {
        Reply {
            accepted: false,
            error: Some(e.to_string()),
            server_time_ns: now_ns(),
            ..Reply::default()
        }
    }

    fn from_error(e: DeployError) -> Self {
        match e {
            DeployError::Invalid(violations) => Reply {
                violations: violations.clone(),
                ..Reply::err(DeployError::Invalid(violations))
            },
            other => Reply::err(other),
        }
    }
}

type Pipelines = Arc<Mutex<HashMap<String, PipelineHandle>>>;

/// A bound daemon; [`run`](Daemon::run) serves until the stop token fires.
pub struct Daemon {
    listener: ReliableListener,
    addr: SocketAddr,
    registry: KernelRegistry,
    options: PipelineOptions,
    pipelines: Pipelines,
}

impl Daemon {
    pub fn bind(addr: SocketAddr, registry: KernelRegistry) -> Result<Self, DeployError> {
        let listener =
            ReliableListener::bind_addr(addr).map_err(|e| DeployError::Control(e.to_string()))?;
        let addr = SocketAddr::new(addr.ip(), listener.local_port());
        Ok(Daemon {
            listener,
            addr,
            registry,
            options: PipelineOptions::default(),
            pipelines: Pipelines::default(),
        })
    }

    /// Options applied to every pipeline this daemon instantiates.
    pub fn with_options(mut self, options: PipelineOptions) -> Self {
        self.options = options;
        self
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn run(self, stop: &StopToken) -> Result<(), DeployError> {
        tracing::info!(addr = %self.addr, "daemon listening");
        let mut sessions = Vec::new();
        while !stop.is_stopped() {
            let ep = match self.listener.accept_timeout(Some(POLL), stop) {
                Ok(Some(ep)) => ep,
                Ok(None) => continue,
                Err(e) => return Err(DeployError::Control(e.to_string())),
            };
            let ctx = Session {
                registry: self.registry.clone(),
                options: self.options.clone(),
                pipelines: self.pipelines.clone(),
                owned: Vec::new(),
                stop: stop.clone(),
            };
            sessions.retain(|h: &JoinHandle<()>| !h.is_finished());
            sessions.push(std::thread::spawn(move || ctx.serve(ep)));
        }
        for h in sessions {
            let _ = h.join();
        }
        for (_, mut p) in self.pipelines.lock().drain() {
            p.stop();
        }
        Ok(())
    }

    /// Runs the daemon on a background thread.
    pub fn spawn(self) -> DaemonHandle {
        let stop = StopToken::new();
        let addr = self.addr;
        let s = stop.clone();
        let thread = std::thread::spawn(move || {
            if let Err(e) = self.run(&s) {
                tracing::error!(error = %e, "daemon failed");
            }
        });
        DaemonHandle {
            addr,
            stop,
            thread: Some(thread),
        }
    }
}

pub struct DaemonHandle {
    addr: SocketAddr,
    stop: StopToken,
    thread: Option<JoinHandle<()>>,
}

impl DaemonHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.stop();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

struct Session {
    registry: KernelRegistry,
    options: PipelineOptions,
    pipelines: Pipelines,
    owned: Vec<String>,
    stop: StopToken,
}

impl Session {
    fn serve(mut self, mut ep: ReliableEndpoint) {
        while !self.stop.is_stopped() {
            let req = match ep.recv_timeout(POLL) {
                Ok(Poll::Message(m)) => m,
                Ok(Poll::Absent) => continue,
                Ok(Poll::EndOfStream) | Err(_) => break,
            };
            let reply = self.handle(&req);
            let body = serde_json::to_vec(&reply).expect("reply serializes");
            if ep.send(&Message::new(REPLY, body)).is_err() {
                break;
            }
        }
        let mut map = self.pipelines.lock();
        for id in self.owned {
            if let Some(mut p) = map.remove(&id) {
                p.stop();
            }
        }
    }

    fn handle(&mut self, req: &Message) -> Reply {
        match req.type_tag.as_str() {
            "PING" => Reply {
                fingerprint: Some(self.registry.fingerprint()),
                ..Reply::ok()
            },
            "DEPLOY" => match serde_json::from_slice::<DeployRequest>(&req.payload) {
                Ok(r) => self.deploy(r).unwrap_or_else(Reply::from_error),
                Err(e) => Reply::err(format!("malformed DEPLOY: {e}")),
            },
            "TEARDOWN" => match serde_json::from_slice::<PipelineRef>(&req.payload) {
                Ok(PipelineRef { pipeline_id: None }) => Reply::err("TEARDOWN needs a pipeline_id"),
                Ok(PipelineRef {
                    pipeline_id: Some(id),
                }) => {
                    let removed = self.pipelines.lock().remove(&id);
                    self.owned.retain(|o| *o != id);
                    match removed {
                        Some(mut p) => {
                            let reports = p.stop();
                            Reply {
                                state: Some(p.state()),
                                reports,
                                port_stats: p.port_stats(),
                                events: p.events().entries(),
                                ..Reply::ok()
                            }
                        }
                        None => Reply::err(format!("unknown pipeline '{id}'")),
                    }
                }
                Err(e) => Reply::err(format!("malformed TEARDOWN: {e}")),
            },
            "STATUS" => match serde_json::from_slice::<PipelineRef>(&req.payload) {
                Ok(PipelineRef { pipeline_id: None }) => {
                    let mut pipelines: Vec<String> =
                        self.pipelines.lock().keys().cloned().collect();
                    pipelines.sort();
                    Reply {
                        pipelines,
                        ..Reply::ok()
                    }
                }
                Ok(PipelineRef {
                    pipeline_id: Some(id),
                }) => match self.pipelines.lock().get_mut(&id) {
                    Some(p) => Reply {
                        state: Some(p.state()),
                        reports: p.reports().to_vec(),
                        port_stats: p.port_stats(),
                        ready_ports: ready_ports(p),
                        ..Reply::ok()
                    },
                    None => Reply::err(format!("unknown pipeline '{id}'")),
                },
                Err(e) => Reply::err(format!("malformed STATUS: {e}")),
            },
            other => Reply::err(format!("unknown command '{other}'")),
        }
    }

    fn deploy(&mut self, r: DeployRequest) -> Result<Reply, DeployError> {
        if r.fingerprint != self.registry.fingerprint() {
            return Err(DeployError::Control(
                "kernel registry differs between client and daemon".into(),
            ));
        }
        // Held across instantiation so one uuid is deployed at most once.
        let mut map = self.pipelines.lock();
        if map.contains_key(&r.pipeline_id) {
            return Err(DeployError::Control(format!(
                "duplicate pipeline '{}'",
                r.pipeline_id
            )));
        }
        let recipe = parse_recipe(&r.recipe)?;
        let meta = validate(&recipe, &self.registry).map_err(DeployError::Invalid)?;
        let mut handle = PipelineHandle::instantiate(meta, &self.registry, &self.options)?;
        handle.start()?;
        let reply = Reply {
            state: Some(handle.state()),
            ready_ports: ready_ports(&handle),
            events: handle.events().entries(),
            ..Reply::ok()
        };
        tracing::info!(pipeline = %r.pipeline_id, "deployed");
        map.insert(r.pipeline_id.clone(), handle);
        self.owned.push(r.pipeline_id);
        Ok(reply)
    }
}

/// A control connection to one daemon.
pub struct DaemonClient {
    ep: ReliableEndpoint,
    addr: SocketAddr,
    /// Last estimate of `daemon clock - local clock`.
    offset_ns: i64,
}

impl DaemonClient {
    pub fn connect(addr: &str) -> Result<Self, DeployError> {
        let (host, port) = addr
            .rsplit_once(':')
            .and_then(|(h, p)| Some((h, p.parse::<u16>().ok()?)))
            .ok_or_else(|| {
                DeployError::Control(format!("daemon address '{addr}' is not host:port"))
            })?;
        let ep = ReliableEndpoint::connect(host, port)
            .map_err(|e| DeployError::Control(e.to_string()))?;
        let addr = ep
            .peer_addr()
            .map_err(|e| DeployError::Control(e.to_string()))?;
        Ok(DaemonClient {
            ep,
            addr,
            offset_ns: 0,
        })
    }

    pub fn peer_addr(&self) -> SocketAddr {
        self.addr
    }

    /// This host's address on the control connection, as the daemon sees it.
    pub fn local_ip(&self) -> Result<std::net::IpAddr, DeployError> {
        self.ep
            .local_addr()
            .map(|a| a.ip())
            .map_err(|e| DeployError::Control(e.to_string()))
    }

    pub fn clock_offset_ns(&self) -> i64 {
        self.offset_ns
    }

    fn request(&mut self, command: &str, body: Vec<u8>) -> Result<Reply, DeployError> {
        let sent = now_ns();
        self.ep
            .send(&Message::new(command, body))
            .map_err(|e| DeployError::Control(e.to_string()))?;
        let msg = match self.ep.recv_timeout(REPLY_TIMEOUT) {
            Ok(Poll::Message(m)) => m,
            Ok(Poll::Absent) => return Err(DeployError::Control(format!("{command}: no reply"))),
            Ok(Poll::EndOfStream) => {
                return Err(DeployError::Control(format!("{command}: daemon closed")))
            }
            Err(e) => return Err(DeployError::Control(e.to_string())),
        };
        let received = now_ns();
        if msg.type_tag != REPLY {
            return Err(DeployError::Control(format!(
                "unexpected '{}'",
                msg.type_tag
            )));
        }
        let reply: Reply = serde_json::from_slice(&msg.payload)
            .map_err(|e| DeployError::Control(format!("malformed reply: {e}")))?;
        let midpoint = sent / 2 + received / 2;
        self.offset_ns = reply.server_time_ns as i64 - midpoint as i64;
        if reply.accepted {
            Ok(reply)
        } else if !reply.violations.is_empty() {
            Err(DeployError::Invalid(reply.violations))
        } else {
            Err(DeployError::Remote {
                daemon: self.addr.to_string(),
                message: reply.error.unwrap_or_default(),
            })
        }
    }

    pub fn ping(&mut self) -> Result<Reply, DeployError> {
        self.request("PING", b"{}".to_vec())
    }

    pub fn deploy(&mut self, req: &DeployRequest) -> Result<Reply, DeployError> {
        self.request("DEPLOY", serde_json::to_vec(req).expect("serializes"))
    }

    /// Status of one pipeline, or the list of hosted pipelines for `None`.
    pub fn status(&mut self, pipeline_id: Option<&str>) -> Result<Reply, DeployError> {
        let body = serde_json::to_vec(&PipelineRef {
            pipeline_id: pipeline_id.map(str::to_owned),
        })
        .expect("serializes");
        self.request("STATUS", body)
    }

    pub fn teardown(&mut self, pipeline_id: &str) -> Result<Reply, DeployError> {
        let body = serde_json::to_vec(&PipelineRef {
            pipeline_id: Some(pipeline_id.to_owned()),
        })
        .expect("serializes");
        self.request("TEARDOWN", body)
    }

    /// Sends raw bytes as a request body, for protocol robustness tests.
    pub fn raw_request(&mut self, command: &str, body: Vec<u8>) -> Result<Reply, DeployError> {
        self.request(command, body)
    }
}
