//! Cross-checking a recipe against kernel descriptors.
//!
//! Input semantics come from each kernel's descriptor; connectivity,
//! branching, queue depths and output semantics come from the recipe.
//! Validation reports every violation it finds, not just the first.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::model::{ConnectionType, KernelEntry, Params, PipelineRecipe, Protocol, LOCAL_HOST};
use crate::deploy::KernelRegistry;
use crate::runtime::{KernelDescriptor, PortSemantics};

pub const DEFAULT_QUEUE_SIZE: usize = 8;

/// Param consumed by the deployer rather than the kernel: a command (string
/// or list of strings) spawned when the kernel starts.
pub const EXEC_PARAM: &str = "exec";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// How one port is to be activated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Local {
        capacity: usize,
    },
    /// Optional non-blocking input left unwired.
    Unconnected,
    Listen {
        protocol: Protocol,
        port: u16,
        queue_size: Option<usize>,
    },
    /// `host` is an address or a placement label resolved at deploy time.
    Connect {
        host: String,
        port: u16,
        protocol: Protocol,
        queue_size: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortPlan {
    pub tag: String,
    pub semantics: PortSemantics,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchPlan {
    pub source: String,
    pub port: PortPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPlan {
    pub descriptor: KernelDescriptor,
    pub host: String,
    pub frequency: Option<f64>,
    /// Kernel params without the deployer's own keys.
    pub params: Params,
    pub exec: Option<Vec<String>>,
    pub inputs: Vec<PortPlan>,
    pub outputs: Vec<PortPlan>,
    pub branches: Vec<BranchPlan>,
}

impl KernelPlan {
    pub fn instance_id(&self) -> &str {
        &self.descriptor.instance_id
    }

    pub fn kernel_type(&self) -> &str {
        &self.descriptor.kernel_type
    }

    pub fn input(&self, tag: &str) -> Option<&PortPlan> {
        self.inputs.iter().find(|p| p.tag == tag)
    }

    pub fn output(&self, tag: &str) -> Option<&PortPlan> {
        self.outputs
            .iter()
            .chain(self.branches.iter().map(|b| &b.port))
            .find(|p| p.tag == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalEdge {
    pub send_kernel: String,
    pub send_port: String,
    pub recv_kernel: String,
    pub recv_port: String,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub kernel: String,
    pub port: String,
}

/// A remote edge; an end is `None` when it lies outside this recipe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteEdge {
    pub sender: Option<Endpoint>,
    pub receiver: Option<Endpoint>,
    pub protocol: Protocol,
    pub host: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetadata {
    pub kernels: Vec<KernelPlan>,
    pub local_edges: Vec<LocalEdge>,
    pub remote_edges: Vec<RemoteEdge>,
}

impl PipelineMetadata {
    pub fn kernel(&self, id: &str) -> Option<&KernelPlan> {
        self.kernels.iter().find(|k| k.instance_id() == id)
    }

    /// Host labels that remote outputs refer to and must be resolved.
    pub fn referenced_labels(&self, labels: &HashSet<String>) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for k in &self.kernels {
            for p in k.outputs.iter().chain(k.branches.iter().map(|b| &b.port)) {
                if let Activation::Connect { host, .. } = &p.activation {
                    if labels.contains(host) && !out.contains(host) {
                        out.push(host.clone());
                    }
                }
            }
        }
        out
    }
}

/// Labels that name hosts: `local` plus every placement target.
pub fn host_labels(recipe: &PipelineRecipe) -> HashSet<String> {
    let mut s: HashSet<String> = recipe.placements.values().cloned().collect();
    s.insert(LOCAL_HOST.to_owned());
    s
}

fn is_literal_host(host: &str) -> bool {
    host == "localhost" || host.parse::<IpAddr>().is_ok()
}

/// Splits the deployer's own params from the kernel's.
pub fn split_exec(params: &Params) -> Result<(Params, Option<Vec<String>>), String> {
    let mut kernel = params.clone();
    let exec = match kernel.remove(EXEC_PARAM) {
        None => None,
        Some(serde_yaml::Value::String(s)) => {
            let argv: Vec<String> = s.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err("exec command is empty".into());
            }
            Some(argv)
        }
        Some(serde_yaml::Value::Sequence(items)) => {
            let argv: Option<Vec<String>> = items
                .iter()
                .map(|v| v.as_str().map(str::to_owned))
                .collect();
            match argv {
                Some(a) if !a.is_empty() => Some(a),
                _ => return Err("exec must be a non-empty list of strings".into()),
            }
        }
        Some(_) => return Err("exec must be a string or a list of strings".into()),
    };
    Ok((kernel, exec))
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn flag(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }
}

/// What a kernel entry declares, keyed by port tag.
#[derive(Default)]
struct Declared {
    /// tag → (entry index, plan without local capacity resolved)
    inputs: HashMap<String, (usize, PortPlan)>,
    outputs: HashMap<String, (usize, PortPlan)>,
    branches: Vec<BranchPlan>,
}

pub fn validate(
    recipe: &PipelineRecipe,
    registry: &KernelRegistry,
) -> Result<PipelineMetadata, Vec<Violation>> {
    let mut c = Checker {
        violations: Vec::new(),
    };
    let labels = host_labels(recipe);

    if recipe.kernels.is_empty() {
        c.flag("kernels", "at least one kernel is required");
    }
    let mut seen = HashSet::new();
    for (i, k) in recipe.kernels.iter().enumerate() {
        if k.id.is_empty() {
            c.flag(format!("kernels[{i}].id"), "instance id must not be empty");
        }
        if !seen.insert(k.id.as_str()) {
            c.flag(
                format!("kernels[{i}].id"),
                format!("duplicate instance id '{}'", k.id),
            );
        }
    }
    for (id, host) in &recipe.placements {
        if recipe.kernel(id).is_none() {
            c.flag(
                format!("placements.{id}"),
                format!("unknown instance '{id}'"),
            );
        }
        if host.is_empty() {
            c.flag(format!("placements.{id}"), "host label must not be empty");
        }
    }

    // Per-kernel checks against descriptors.
    let mut descriptors: HashMap<&str, (KernelDescriptor, Params, Option<Vec<String>>)> =
        HashMap::new();
    let mut declared: HashMap<&str, Declared> = HashMap::new();
    for (i, k) in recipe.kernels.iter().enumerate() {
        let base = format!("kernels[{i}]");
        if let Some(f) = k.frequency {
            if !(f.is_finite() && f > 0.0) {
                c.flag(
                    format!("{base}.frequency"),
                    format!("frequency must be positive, got {f}"),
                );
            }
        }
        let (params, exec) = match split_exec(&k.params) {
            Ok(x) => x,
            Err(e) => {
                c.flag(format!("{base}.params.{EXEC_PARAM}"), e);
                (k.params.clone(), None)
            }
        };
        let desc = match registry.describe(&k.kernel, &k.id, &params) {
            Ok(d) => d,
            Err(e) => {
                c.flag(format!("{base}.kernel"), e.to_string());
                continue;
            }
        };
        let d = check_entry(&mut c, &base, k, &desc, &labels);
        declared.insert(k.id.as_str(), d);
        descriptors.insert(k.id.as_str(), (desc, params, exec));
    }

    // Local connections.
    let mut local_edges = Vec::new();
    let mut wired_out: HashSet<(String, String)> = HashSet::new();
    let mut wired_in: HashSet<(String, String)> = HashSet::new();
    // Ends named by some connection, valid or not; an invalid connection is
    // reported once rather than again as a missing one.
    let mut mentioned: HashSet<(&str, &str)> = HashSet::new();
    for (l, conn) in recipe.local_connections.iter().enumerate() {
        mentioned.insert((&conn.send_kernel, &conn.send_port_name));
        mentioned.insert((&conn.recv_kernel, &conn.recv_port_name));
        let base = format!("local_connections[{l}]");
        let capacity = conn.queue_size.unwrap_or(DEFAULT_QUEUE_SIZE);
        if capacity == 0 {
            c.flag(
                format!("{base}.queue_size"),
                "queue_size must be at least 1",
            );
        }
        let send_ok = check_local_end(
            &mut c,
            &format!("{base}.send_kernel"),
            &conn.send_kernel,
            &conn.send_port_name,
            true,
            recipe,
            &descriptors,
            &declared,
        );
        let recv_ok = check_local_end(
            &mut c,
            &format!("{base}.recv_kernel"),
            &conn.recv_kernel,
            &conn.recv_port_name,
            false,
            recipe,
            &descriptors,
            &declared,
        );
        if send_ok && !wired_out.insert((conn.send_kernel.clone(), conn.send_port_name.clone())) {
            c.flag(
                format!("{base}.send_port_name"),
                format!(
                    "{}.{} already has a local connection",
                    conn.send_kernel, conn.send_port_name
                ),
            );
        }
        if recv_ok && !wired_in.insert((conn.recv_kernel.clone(), conn.recv_port_name.clone())) {
            c.flag(
                format!("{base}.recv_port_name"),
                format!(
                    "{}.{} already has a local connection",
                    conn.recv_kernel, conn.recv_port_name
                ),
            );
        }
        let (sh, rh) = (
            recipe.host_of(&conn.send_kernel),
            recipe.host_of(&conn.recv_kernel),
        );
        if sh != rh {
            c.flag(
                base.clone(),
                format!("local connection crosses hosts ({sh} -> {rh}); use a remote connection"),
            );
        }
        if send_ok && recv_ok && capacity > 0 {
            local_edges.push(LocalEdge {
                send_kernel: conn.send_kernel.clone(),
                send_port: conn.send_port_name.clone(),
                recv_kernel: conn.recv_kernel.clone(),
                recv_port: conn.recv_port_name.clone(),
                capacity,
            });
        }
    }

    // Assemble per-kernel plans; every registered port must end up activated.
    let capacity_of = |kernel: &str, port: &str, sending: bool| {
        local_edges
            .iter()
            .find(|e| {
                if sending {
                    e.send_kernel == kernel && e.send_port == port
                } else {
                    e.recv_kernel == kernel && e.recv_port == port
                }
            })
            .map(|e| e.capacity)
    };
    let mut plans = Vec::new();
    for (i, k) in recipe.kernels.iter().enumerate() {
        let Some((desc, params, exec)) = descriptors.get(k.id.as_str()) else {
            continue;
        };
        let d = &declared[k.id.as_str()];
        let base = format!("kernels[{i}]");
        let mut inputs = Vec::new();
        for (tag, sem) in &desc.in_ports {
            let local = capacity_of(&k.id, tag, false);
            let activation = match (d.inputs.get(tag), local) {
                (Some((_, plan)), _) if !matches!(plan.activation, Activation::Local { .. }) => {
                    Some(plan.activation.clone())
                }
                (_, Some(capacity)) => Some(Activation::Local { capacity }),
                (Some((j, _)), None) => {
                    if !mentioned.contains(&(k.id.as_str(), tag.as_str())) {
                        c.flag(
                            format!("{base}.input[{j}]"),
                            format!("local input {}.{tag} has no local connection", k.id),
                        );
                    }
                    None
                }
                (None, None) if *sem == PortSemantics::NonBlocking => Some(Activation::Unconnected),
                (None, None) => {
                    c.flag(
                        base.clone(),
                        format!("hard dependency unconnected: blocking input {}.{tag}", k.id),
                    );
                    None
                }
            };
            if let Some(activation) = activation {
                inputs.push(PortPlan {
                    tag: tag.clone(),
                    semantics: *sem,
                    activation,
                });
            }
        }
        let mut outputs = Vec::new();
        for tag in &desc.out_ports {
            let local = capacity_of(&k.id, tag, true);
            match (d.outputs.get(tag), local) {
                (Some((_, plan)), _) if !matches!(plan.activation, Activation::Local { .. }) => {
                    outputs.push(plan.clone())
                }
                (Some((_, plan)), Some(capacity)) => outputs.push(PortPlan {
                    activation: Activation::Local { capacity },
                    ..plan.clone()
                }),
                (None, Some(capacity)) => outputs.push(PortPlan {
                    tag: tag.clone(),
                    semantics: PortSemantics::Blocking,
                    activation: Activation::Local { capacity },
                }),
                (Some((j, _)), None) => {
                    if !mentioned.contains(&(k.id.as_str(), tag.as_str())) {
                        c.flag(
                            format!("{base}.output[{j}]"),
                            format!("local output {}.{tag} has no local connection", k.id),
                        );
                    }
                }
                (None, None) => c.flag(
                    base.clone(),
                    format!("output {}.{tag} is never activated", k.id),
                ),
            }
        }
        let mut branches = Vec::new();
        for b in &d.branches {
            match &b.port.activation {
                Activation::Local { .. } => match capacity_of(&k.id, &b.port.tag, true) {
                    Some(capacity) => branches.push(BranchPlan {
                        source: b.source.clone(),
                        port: PortPlan {
                            activation: Activation::Local { capacity },
                            ..b.port.clone()
                        },
                    }),
                    None => c.flag(
                        base.clone(),
                        format!(
                            "local branch {}.{} has no local connection",
                            k.id, b.port.tag
                        ),
                    ),
                },
                _ => branches.push(b.clone()),
            }
        }
        plans.push(KernelPlan {
            descriptor: desc.clone(),
            host: recipe.host_of(&k.id).to_owned(),
            frequency: k.frequency,
            params: params.clone(),
            exec: exec.clone(),
            inputs,
            outputs,
            branches,
        });
    }

    let remote_edges = pair_remote_edges(&mut c, &plans, &labels);

    if c.violations.is_empty() {
        Ok(PipelineMetadata {
            kernels: plans,
            local_edges,
            remote_edges,
        })
    } else {
        Err(c.violations)
    }
}

fn check_entry(
    c: &mut Checker,
    base: &str,
    k: &KernelEntry,
    desc: &KernelDescriptor,
    labels: &HashSet<String>,
) -> Declared {
    let mut d = Declared::default();
    for (j, inp) in k.input.iter().enumerate() {
        let path = format!("{base}.input[{j}]");
        let Some(semantics) = desc.input_semantics(&inp.port_name) else {
            let msg = if desc.has_output(&inp.port_name) {
                format!("{} is an output port", inp.port_name)
            } else {
                format!("unregistered port {}", inp.port_name)
            };
            c.flag(format!("{path}.port_name"), msg);
            continue;
        };
        if d.inputs.contains_key(&inp.port_name) {
            c.flag(
                format!("{path}.port_name"),
                format!("port {} configured twice", inp.port_name),
            );
            continue;
        }
        let activation = match (inp.connection_type, &inp.remote_info) {
            (ConnectionType::Local, None) => {
                if inp.queue_size.is_some() {
                    c.flag(
                        format!("{path}.queue_size"),
                        "local queue sizes belong to local_connections",
                    );
                }
                Activation::Local { capacity: 0 }
            }
            (ConnectionType::Local, Some(_)) => {
                c.flag(
                    format!("{path}.remote_info"),
                    "remote_info on a local input",
                );
                continue;
            }
            (ConnectionType::Remote, None) => {
                c.flag(
                    format!("{path}.remote_info"),
                    "remote input needs remote_info",
                );
                continue;
            }
            (ConnectionType::Remote, Some(r)) => {
                if r.1 == 0 {
                    c.flag(format!("{path}.remote_info"), "port must be in 1..65535");
                    continue;
                }
                if inp.queue_size == Some(0) {
                    c.flag(
                        format!("{path}.queue_size"),
                        "queue_size must be at least 1",
                    );
                    continue;
                }
                Activation::Listen {
                    protocol: r.0,
                    port: r.1,
                    queue_size: inp.queue_size,
                }
            }
        };
        d.inputs.insert(
            inp.port_name.clone(),
            (
                j,
                PortPlan {
                    tag: inp.port_name.clone(),
                    semantics,
                    activation,
                },
            ),
        );
    }

    let mut earlier: Vec<&str> = Vec::new();
    for (j, out) in k.output.iter().enumerate() {
        let path = format!("{base}.output[{j}]");
        let name = out.port_name.as_str();
        match &out.branched_from {
            Some(src) => {
                if !desc.has_output(src) || !earlier.contains(&src.as_str()) {
                    c.flag(
                        format!("{path}.branched_from"),
                        format!(
                            "'{src}' is not a registered output declared earlier on this kernel"
                        ),
                    );
                    continue;
                }
                if desc.has_output(name) || desc.input_semantics(name).is_some() {
                    c.flag(
                        format!("{path}.port_name"),
                        format!("branch name {name} collides with a registered port"),
                    );
                    continue;
                }
            }
            None => {
                if !desc.has_output(name) {
                    let msg = if desc.input_semantics(name).is_some() {
                        format!("{name} is an input port")
                    } else {
                        format!("unregistered port {name}")
                    };
                    c.flag(format!("{path}.port_name"), msg);
                    continue;
                }
            }
        }
        if d.outputs.contains_key(name) || d.branches.iter().any(|b| b.port.tag == name) {
            c.flag(
                format!("{path}.port_name"),
                format!("port {name} configured twice"),
            );
            continue;
        }
        let semantics = out.semantics.unwrap_or(PortSemantics::Blocking);
        let activation = match (out.connection_type, &out.remote_info) {
            (ConnectionType::Local, None) => {
                if out.queue_size.is_some() {
                    c.flag(
                        format!("{path}.queue_size"),
                        "local queue sizes belong to local_connections",
                    );
                }
                Activation::Local { capacity: 0 }
            }
            (ConnectionType::Local, Some(_)) => {
                c.flag(
                    format!("{path}.remote_info"),
                    "remote_info on a local output",
                );
                continue;
            }
            (ConnectionType::Remote, None) => {
                c.flag(
                    format!("{path}.remote_info"),
                    "remote output needs remote_info",
                );
                continue;
            }
            (ConnectionType::Remote, Some(r)) => {
                if r.1 == 0 {
                    c.flag(format!("{path}.remote_info"), "port must be in 1..65535");
                    continue;
                }
                if !labels.contains(&r.0) && !is_literal_host(&r.0) {
                    c.flag(
                        format!("{path}.remote_info"),
                        format!(
                            "host '{}' is neither an IP address nor a placement label",
                            r.0
                        ),
                    );
                    continue;
                }
                if out.queue_size == Some(0) {
                    c.flag(
                        format!("{path}.queue_size"),
                        "queue_size must be at least 1",
                    );
                    continue;
                }
                Activation::Connect {
                    host: r.0.clone(),
                    port: r.1,
                    protocol: r.2,
                    queue_size: out.queue_size,
                }
            }
        };
        let plan = PortPlan {
            tag: name.to_owned(),
            semantics,
            activation,
        };
        match &out.branched_from {
            Some(src) => d.branches.push(BranchPlan {
                source: src.clone(),
                port: plan,
            }),
            None => {
                earlier.push(name);
                d.outputs.insert(name.to_owned(), (j, plan));
            }
        }
    }
    d
}

#[allow(clippy::too_many_arguments)]
fn check_local_end(
    c: &mut Checker,
    path: &str,
    kernel: &str,
    port: &str,
    sending: bool,
    recipe: &PipelineRecipe,
    descriptors: &HashMap<&str, (KernelDescriptor, Params, Option<Vec<String>>)>,
    declared: &HashMap<&str, Declared>,
) -> bool {
    let Some((desc, _, _)) = descriptors.get(kernel) else {
        // Entries whose type failed to resolve were already reported.
        if recipe.kernel(kernel).is_none() {
            c.flag(path, format!("unknown kernel instance '{kernel}'"));
        }
        return false;
    };
    let d = &declared[kernel];
    let (registered, declared_plan) = if sending {
        let branch = d
            .branches
            .iter()
            .find(|b| b.port.tag == port)
            .map(|b| &b.port);
        (
            desc.has_output(port) || branch.is_some(),
            d.outputs.get(port).map(|(_, p)| p).or(branch),
        )
    } else {
        (
            desc.input_semantics(port).is_some(),
            d.inputs.get(port).map(|(_, p)| p),
        )
    };
    let field = if sending {
        "send_port_name"
    } else {
        "recv_port_name"
    };
    let port_path = format!("{}.{field}", path.rsplit_once('.').map_or(path, |x| x.0));
    if !registered {
        c.flag(port_path, format!("unregistered port {port} on {kernel}"));
        return false;
    }
    if let Some(p) = declared_plan {
        if !matches!(p.activation, Activation::Local { .. }) {
            c.flag(port_path, format!("{kernel}.{port} is declared remote"));
            return false;
        }
    }
    true
}

fn pair_remote_edges(
    c: &mut Checker,
    plans: &[KernelPlan],
    labels: &HashSet<String>,
) -> Vec<RemoteEdge> {
    struct Listener<'a> {
        host: &'a str,
        ep: Endpoint,
        protocol: Protocol,
        port: u16,
    }
    let mut listeners = Vec::new();
    let mut bound: BTreeMap<(&str, u16), Endpoint> = BTreeMap::new();
    for k in plans {
        for p in &k.inputs {
            if let Activation::Listen { protocol, port, .. } = p.activation {
                let ep = Endpoint {
                    kernel: k.instance_id().to_owned(),
                    port: p.tag.clone(),
                };
                if let Some(prev) = bound.insert((k.host.as_str(), port), ep.clone()) {
                    c.flag(
                        format!("{}.{}", ep.kernel, ep.port),
                        format!(
                            "remote port collision on host {}: port {port} also used by {}.{}",
                            k.host, prev.kernel, prev.port
                        ),
                    );
                }
                listeners.push(Listener {
                    host: &k.host,
                    ep,
                    protocol,
                    port,
                });
            }
        }
    }

    let mut edges = Vec::new();
    let mut received: HashMap<Endpoint, usize> = HashMap::new();
    for k in plans {
        for p in k.outputs.iter().chain(k.branches.iter().map(|b| &b.port)) {
            let Activation::Connect {
                host,
                port,
                protocol,
                ..
            } = &p.activation
            else {
                continue;
            };
            let sender = Endpoint {
                kernel: k.instance_id().to_owned(),
                port: p.tag.clone(),
            };
            let by_label = labels.contains(host);
            let candidates: Vec<&Listener> = listeners
                .iter()
                .filter(|l| l.port == *port && (!by_label || l.host == host))
                .collect();
            let receiver = match candidates.as_slice() {
                [l] if l.protocol == *protocol => Some(l.ep.clone()),
                [l] if by_label => {
                    c.flag(
                        format!("{}.{}", sender.kernel, sender.port),
                        format!(
                            "protocol mismatch: sends {protocol} to {}.{} which listens with {}",
                            l.ep.kernel, l.ep.port, l.protocol
                        ),
                    );
                    None
                }
                _ => None,
            };
            if let Some(r) = &receiver {
                *received.entry(r.clone()).or_default() += 1;
            }
            edges.push(RemoteEdge {
                sender: Some(sender),
                receiver,
                protocol: *protocol,
                host: host.clone(),
                port: *port,
            });
        }
    }
    for l in &listeners {
        let n = received.get(&l.ep).copied().unwrap_or(0);
        if n > 1 && l.protocol == Protocol::TCP {
            c.flag(
                format!("{}.{}", l.ep.kernel, l.ep.port),
                format!("TCP input has {n} senders; a stream input accepts exactly one"),
            );
        }
        if n == 0 {
            edges.push(RemoteEdge {
                sender: None,
                receiver: Some(l.ep.clone()),
                protocol: l.protocol,
                host: l.host.to_owned(),
                port: l.port,
            });
        }
    }
    edges
}
