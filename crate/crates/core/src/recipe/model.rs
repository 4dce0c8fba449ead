use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::message::MAX_PAYLOAD;
use crate::runtime::PortSemantics;

/// Placement label for the process that submits the recipe.
pub const LOCAL_HOST: &str = "local";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineRecipe {
    pub kernels: Vec<KernelEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub local_connections: Vec<LocalConnection>,
    /// instance id → host label; kernels not listed run on `local`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub placements: BTreeMap<String, String>,
}

impl PipelineRecipe {
    pub fn kernel(&self, id: &str) -> Option<&KernelEntry> {
        self.kernels.iter().find(|k| k.id == id)
    }

    pub fn host_of(&self, id: &str) -> &str {
        self.placements
            .get(id)
            .map(String::as_str)
            .unwrap_or(LOCAL_HOST)
    }

    /// Host labels in first-use order, `local` first when it hosts anything.
    pub fn hosts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for k in &self.kernels {
            let h = self.host_of(&k.id).to_owned();
            if !out.contains(&h) {
                out.push(h);
            }
        }
        if let Some(i) = out.iter().position(|h| h == LOCAL_HOST) {
            let local = out.remove(i);
            out.insert(0, local);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    pub kernel: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Params::is_empty")]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input: Vec<InputEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub output: Vec<OutputEntry>,
}

impl KernelEntry {
    pub fn new(kernel: &str, id: &str) -> Self {
        KernelEntry {
            kernel: kernel.to_owned(),
            id: id.to_owned(),
            frequency: None,
            params: Params::default(),
            input: Vec::new(),
            output: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionType {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(alias = "tcp")]
    TCP,
    #[serde(alias = "rtp")]
    RTP,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::TCP => "TCP",
            Protocol::RTP => "RTP",
        })
    }
}

/// `[protocol, listen_port]`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRemote(pub Protocol, pub u16);

/// `[host, port, protocol]`; `host` is an address or a placement label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRemote(pub String, pub u16, pub Protocol);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputEntry {
    pub port_name: String,
    pub connection_type: ConnectionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_info: Option<InputRemote>,
    /// Hand-off queue depth for remote inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    pub port_name: String,
    pub connection_type: ConnectionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<PortSemantics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_info: Option<OutputRemote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branched_from: Option<String>,
    /// Hand-off queue depth for remote outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConnection {
    pub send_kernel: String,
    pub send_port_name: String,
    pub recv_kernel: String,
    pub recv_port_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_size: Option<usize>,
}

/// Longest duration a millisecond param may name (one day).
pub const MAX_MILLIS: f64 = 86_400_000.0;

/// Free-form kernel parameters, checked by each kernel type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub BTreeMap<String, serde_yaml::Value>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("param '{key}': {reason}")]
pub struct ParamError {
    pub key: String,
    pub reason: String,
}

impl Params {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn insert(&mut self, key: &str, value: impl Into<serde_yaml::Value>) -> &mut Self {
        self.0.insert(key.to_owned(), value.into());
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_yaml::Value>) -> Self {
        self.insert(key, value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&serde_yaml::Value> {
        self.0.get(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<serde_yaml::Value> {
        self.0.remove(key)
    }

    fn err(key: &str, reason: impl Into<String>) -> ParamError {
        ParamError {
            key: key.to_owned(),
            reason: reason.into(),
        }
    }

    /// Fails on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ParamError> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Self::err(
                k,
                format!(
                    "unknown parameter (expected one of: {})",
                    allowed.join(", ")
                ),
            )),
            None => Ok(()),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ParamError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Self::err(key, "expected a number")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ParamError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Self::err(key, "expected a non-negative integer")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ParamError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| Self::err(key, "expected true or false")),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str, ParamError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_str()
                .ok_or_else(|| Self::err(key, "expected a string")),
        }
    }

    /// A duration in milliseconds within `0..=MAX_MILLIS`.
    pub fn millis_or(&self, key: &str, default: f64) -> Result<std::time::Duration, ParamError> {
        let ms = self.f64_or(key, default)?;
        if !(0.0..=MAX_MILLIS).contains(&ms) {
            return Err(Self::err(
                key,
                format!("must be within 0..={MAX_MILLIS} ms"),
            ));
        }
        Ok(std::time::Duration::from_secs_f64(ms / 1000.0))
    }

    /// A byte count no larger than the largest payload a channel accepts.
    pub fn size_or(&self, key: &str, default: usize) -> Result<usize, ParamError> {
        let n = self.u64_or(key, default as u64)?;
        match usize::try_from(n) {
            Ok(n) if n <= MAX_PAYLOAD => Ok(n),
            _ => Err(Self::err(
                key,
                format!("must be at most {MAX_PAYLOAD} bytes"),
            )),
        }
    }
}
