use std::collections::HashMap;

use super::daemon::{DaemonClient, DeployRequest, Reply};
use super::pipeline::{KernelReport, PipelineHandle, PipelineOptions};
use super::registry::KernelRegistry;
use super::DeployError;
use crate::recipe::{
    emit_recipe, resolve_hosts, split_recipe, validate, PipelineRecipe, LOCAL_HOST,
};
use crate::runtime::PortStatsSnapshot;

struct RemotePart {
    label: String,
    client: DaemonClient,
}

/// A pipeline split across this process and one or more daemons.
pub struct Deployment {
    id: String,
    local: Option<PipelineHandle>,
    remotes: Vec<RemotePart>,
    torn_down: bool,
}

/// Validates the whole recipe, splits it by placement and deploys each part.
///
/// `daemons` maps every non-local placement label to a daemon `host:port`.
/// Host labels in remote outputs are resolved per part: a daemon's label
/// becomes the address the client reached it on, and `local` becomes this
/// process's address as seen from that daemon.
pub fn deploy_distributed(
    recipe: &PipelineRecipe,
    daemons: &HashMap<String, String>,
    registry: &KernelRegistry,
    opts: &PipelineOptions,
) -> Result<Deployment, DeployError> {
    validate(recipe, registry).map_err(DeployError::Invalid)?;
    let parts = split_recipe(recipe).map_err(DeployError::Invalid)?;
    let id = uuid::Uuid::new_v4().to_string();

    let remote_labels: Vec<&String> = parts.keys().filter(|l| *l != LOCAL_HOST).collect();
    if let Some(missing) = remote_labels.iter().find(|l| !daemons.contains_key(**l)) {
        return Err(DeployError::Control(format!(
            "no server address for placement host '{missing}'"
        )));
    }
    let mut clients: Vec<(String, DaemonClient)> = Vec::new();
    for label in remote_labels {
        let addr = &daemons[label];
        let mut c = DaemonClient::connect(addr)?;
        let pong = c.ping()?;
        if pong.fingerprint.as_deref() != Some(registry.fingerprint().as_str()) {
            return Err(DeployError::Control(format!(
                "daemon for '{label}' has a different kernel registry"
            )));
        }
        clients.push((label.clone(), c));
    }
    let mut daemon_ips: HashMap<String, String> = clients
        .iter()
        .map(|(l, c)| (l.clone(), c.peer_addr().ip().to_string()))
        .collect();

    let mut deployment = Deployment {
        id: id.clone(),
        local: None,
        remotes: Vec::new(),
        torn_down: false,
    };
    for (label, mut client) in clients {
        let mut part = parts[&label].clone();
        let mut hosts = daemon_ips.clone();
        hosts.insert(LOCAL_HOST.to_owned(), client.local_ip()?.to_string());
        resolve_hosts(&mut part, &hosts);
        client.deploy(&DeployRequest {
            pipeline_id: id.clone(),
            recipe: emit_recipe(&part),
            fingerprint: registry.fingerprint(),
        })?;
        tracing::info!(host = %label, daemon = %client.peer_addr(), "part deployed");
        deployment.remotes.push(RemotePart { label, client });
    }
    if let Some(part) = parts.get(LOCAL_HOST) {
        let mut part = part.clone();
        daemon_ips.insert(LOCAL_HOST.to_owned(), "127.0.0.1".to_owned());
        resolve_hosts(&mut part, &daemon_ips);
        let meta = validate(&part, registry).map_err(DeployError::Invalid)?;
        let mut handle = PipelineHandle::instantiate(meta, registry, opts)?;
        handle.start()?;
        deployment.local = Some(handle);
    }
    Ok(deployment)
}

impl Deployment {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn local(&mut self) -> Option<&mut PipelineHandle> {
        self.local.as_mut()
    }

    /// Labels of the daemons hosting parts of this pipeline.
    pub fn remote_hosts(&self) -> Vec<&str> {
        self.remotes.iter().map(|r| r.label.as_str()).collect()
    }

    /// Estimated `daemon clock - local clock` per remote host.
    pub fn clock_offsets(&self) -> Vec<(String, i64)> {
        self.remotes
            .iter()
            .map(|r| (r.label.clone(), r.client.clock_offset_ns()))
            .collect()
    }

    pub fn status(&mut self) -> Vec<(String, Result<Reply, DeployError>)> {
        let id = self.id.clone();
        self.remotes
            .iter_mut()
            .map(|r| (r.label.clone(), r.client.status(Some(&id))))
            .collect()
    }

    /// Stops the local part, then tears down each remote part. Collects
    /// kernel reports and port counters from every host that answered.
    pub fn teardown(&mut self) -> Result<TeardownSummary, DeployError> {
        let mut summary = TeardownSummary::default();
        if self.torn_down {
            return Ok(summary);
        }
        self.torn_down = true;
        if let Some(local) = self.local.as_mut() {
            let reports = local.stop();
            summary.add(LOCAL_HOST, reports, local.port_stats());
        }
        let mut first_err = None;
        for r in &mut self.remotes {
            match r.client.teardown(&self.id) {
                Ok(reply) => summary.add(&r.label, reply.reports, reply.port_stats),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(summary),
        }
    }
}

/// What every host reported when a deployment was torn down.
#[derive(Debug, Clone, Default)]
pub struct TeardownSummary {
    /// `(host, report)`
    pub reports: Vec<(String, KernelReport)>,
    /// `(host, instance.port, counters)`
    pub port_stats: Vec<(String, String, PortStatsSnapshot)>,
}

impl TeardownSummary {
    fn add(
        &mut self,
        host: &str,
        reports: Vec<KernelReport>,
        stats: Vec<(String, PortStatsSnapshot)>,
    ) {
        self.reports
            .extend(reports.into_iter().map(|r| (host.to_owned(), r)));
        self.port_stats
            .extend(stats.into_iter().map(|(l, s)| (host.to_owned(), l, s)));
    }

    pub fn failures(&self) -> impl Iterator<Item = &(String, KernelReport)> {
        self.reports.iter().filter(|(_, r)| r.error.is_some())
    }
}

impl Drop for Deployment {
    fn drop(&mut self) {
        let _ = self.teardown();
    }
}
