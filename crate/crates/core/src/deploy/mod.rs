//! Instantiating recipes: the kernel registry, local pipelines, the
//! deployment daemon and multi-host deployment.

pub mod daemon;
pub mod distributed;
pub mod pipeline;
pub mod registry;

use thiserror::Error;

use crate::recipe::{RecipeError, Violation};
use crate::runtime::PortError;

pub use daemon::{Daemon, DaemonClient, DaemonHandle};
pub use distributed::{deploy_distributed, Deployment, TeardownSummary};
pub use pipeline::{
    deploy_local, KernelReport, PipelineHandle, PipelineOptions, RunState, STOP_GRACE,
};
pub use registry::{KernelFactory, KernelRegistry, RegistryError};

#[derive(Debug, Error)]
pub enum DeployError {
    #[error("recipe has {} violation(s): {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Recipe(#[from] RecipeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("kernel '{kernel}': {source}")]
    Port {
        kernel: String,
        #[source]
        source: PortError,
    },
    #[error("kernel '{kernel}' has unactivated ports: {}", ports.join(", "))]
    Unactivated { kernel: String, ports: Vec<String> },
    #[error("wiring failed: {0}")]
    Wiring(String),
    #[error("{0}")]
    State(String),
    #[error("cannot start exec command for '{kernel}': {reason}")]
    Exec { kernel: String, reason: String },
    #[error("control channel: {0}")]
    Control(String),
    #[error("daemon {daemon}: {message}")]
    Remote { daemon: String, message: String },
}

impl DeployError {
    /// True for errors caused by the recipe rather than the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            DeployError::Invalid(_) | DeployError::Recipe(_) | DeployError::Registry(_) => true,
            DeployError::Remote { message, .. } => message.contains("violation"),
            _ => false,
        }
    }
}
