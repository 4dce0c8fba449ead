//! `flexpipe` is a stream-processing runtime for latency-sensitive pipelines.
//!
//! Kernels declare their ports at development time through a [`PortManager`];
//! a YAML recipe decides at deployment time how every port is connected
//! (local bounded queue, reliable stream, or datagram), which semantics
//! output ports use, how outputs are branched, and how deep queues are.
//! The same compiled kernels can then run locally or split across a client
//! and one or more deployment daemons.
//!
//! Module map:
//!
//! * [`runtime`]: messages, bounded local queues, ports, the port manager and
//!   the kernel execution loop.
//! * [`transport`]: wire format, reliable stream and datagram endpoints, and
//!   the network impairment shim used by tests.
//! * [`recipe`]: recipe parsing, validation into pipeline metadata, splitting
//!   by host.
//! * [`deploy`]: kernel registry, pipeline instantiation and lifecycle, the
//!   deployment daemon and distributed deployment.
//! * [`kernels`]: built-in synthetic kernels.
//! * [`metrics`]: benchmark runner, reports and scenario comparison.

pub mod clock;
pub mod deploy;
pub mod kernels;
pub mod message;
pub mod metrics;
pub mod recipe;
pub mod runtime;
pub mod transport;

pub use clock::{now_ns, StopToken};
pub use deploy::{Deployment, KernelRegistry, PipelineHandle, RunState};
pub use message::{Hop, Message};
pub use recipe::{parse_recipe, split_recipe, validate, PipelineMetadata, PipelineRecipe};
pub use runtime::{
    ConnectionState, Direction, FlexPort, Kernel, KernelContext, KernelDescriptor, KernelError,
    KernelStatus, PortError, PortManager, PortSemantics, Received,
};
