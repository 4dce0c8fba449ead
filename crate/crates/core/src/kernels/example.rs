use super::{latest, required};
use crate::recipe::Params;
use crate::runtime::{
    Kernel, KernelContext, KernelError, KernelStatus, PortManager, PortSemantics,
};

/// The kernel-author template: one hard and one soft dependency, one output.
///
/// ```
/// use flexpipe::kernels::ExampleKernel;
/// use flexpipe::recipe::Params;
/// use flexpipe::{PortManager, PortSemantics};
///
/// let mut ports = PortManager::new(ExampleKernel::TYPE, "example_kernel1");
/// ExampleKernel::build(&Params::default(), &mut ports).unwrap();
/// let d = ports.descriptor();
/// assert_eq!(d.in_ports[0], ("in1".to_string(), PortSemantics::Blocking));
/// assert_eq!(d.in_ports[1], ("in2".to_string(), PortSemantics::NonBlocking));
/// assert_eq!(d.out_ports, vec!["out".to_string()]);
/// ```
pub struct ExampleKernel;

impl ExampleKernel {
    pub const TYPE: &'static str = "ExampleKernel";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&[])?;
        ports.register_in_port("in1", PortSemantics::Blocking)?;
        ports.register_in_port("in2", PortSemantics::NonBlocking)?;
        ports.register_out_port("out")?;
        Ok(Box::new(ExampleKernel))
    }
}

impl Kernel for ExampleKernel {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        let Some(in1) = required(ctx, "in1")? else {
            return Ok(KernelStatus::Stop);
        };
        let _steer = latest(ctx, "in2")?;
        let mut out = ctx.ports.get_output_placeholder("out")?;
        out.ts_origin = in1.ts_origin;
        out.hops = in1.hops;
        out.type_tag = in1.type_tag;
        out.payload = in1.payload;
        ctx.ports.send_output("out", out)?;
        Ok(KernelStatus::Continue)
    }
}
