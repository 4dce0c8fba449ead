use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::kernels::{
    CodecStub, DetectorStub, EventSource, ExampleKernel, FrameSource, PoseEstimatorStub,
    RendererStub, Sink,
};
use crate::recipe::Params;
use crate::runtime::{Kernel, KernelDescriptor, KernelError, PortManager};

/// Builds a kernel, registering its ports on the given manager.
pub type KernelFactory =
    Arc<dyn Fn(&Params, &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> + Send + Sync>;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown kernel type '{0}'")]
    UnknownType(String),
    #[error("kernel '{instance_id}' ({kernel_type}): {source}")]
    Build {
        kernel_type: String,
        instance_id: String,
        #[source]
        source: KernelError,
    },
}

/// Kernel types known to a process, by name.
#[derive(Clone, Default)]
pub struct KernelRegistry {
    factories: BTreeMap<String, KernelFactory>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every built-in synthetic kernel.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(FrameSource::TYPE, FrameSource::build);
        r.register(EventSource::TYPE, EventSource::build);
        r.register(DetectorStub::TYPE, DetectorStub::build);
        r.register(RendererStub::TYPE, RendererStub::build);
        r.register(CodecStub::TYPE, CodecStub::build);
        r.register(PoseEstimatorStub::TYPE, PoseEstimatorStub::build);
        r.register(Sink::TYPE, Sink::build);
        r.register(ExampleKernel::TYPE, ExampleKernel::build);
        r
    }

    /// Adds or replaces a type.
    pub fn register<F>(&mut self, kernel_type: &str, factory: F) -> &mut Self
    where
        F: Fn(&Params, &mut PortManager) -> Result<Box<dyn Kernel>, KernelError>
            + Send
            + Sync
            + 'static,
    {
        self.factories
            .insert(kernel_type.to_owned(), Arc::new(factory));
        self
    }

    pub fn contains(&self, kernel_type: &str) -> bool {
        self.factories.contains_key(kernel_type)
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(
        &self,
        kernel_type: &str,
        instance_id: &str,
        params: &Params,
    ) -> Result<(Box<dyn Kernel>, PortManager), RegistryError> {
        let factory = self
            .factories
            .get(kernel_type)
            .ok_or_else(|| RegistryError::UnknownType(kernel_type.to_owned()))?;
        let mut ports = PortManager::new(kernel_type, instance_id);
        let kernel = factory(params, &mut ports).map_err(|source| RegistryError::Build {
            kernel_type: kernel_type.to_owned(),
            instance_id: instance_id.to_owned(),
            source,
        })?;
        Ok((kernel, ports))
    }

    /// The ports an instance would register with these params.
    pub fn describe(
        &self,
        kernel_type: &str,
        instance_id: &str,
        params: &Params,
    ) -> Result<KernelDescriptor, RegistryError> {
        self.build(kernel_type, instance_id, params)
            .map(|(_, ports)| ports.descriptor())
    }

    /// Stable digest of the registered type names, exchanged between client
    /// and daemon to detect mismatched builds.
    pub fn fingerprint(&self) -> String {
        // FNV-1a, so the value is identical across processes and platforms.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for name in self.factories.keys() {
            for b in name.bytes().chain(std::iter::once(0)) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

impl std::fmt::Debug for KernelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}
