use std::time::Duration;

use bytes::{Bytes, BytesMut};

use super::{latest, read_word, required, tagged_payload, work};
use crate::recipe::Params;
use crate::runtime::{
    Kernel, KernelContext, KernelError, KernelStatus, PortManager, PortSemantics,
};
use crate::Message;

fn compute_params(params: &Params) -> Result<(Duration, bool), KernelError> {
    Ok((
        params.millis_or("compute_ms", 0.0)?,
        params.bool_or("busy", false)?,
    ))
}

/// Seqs of the messages a stage combined, written at the start of its
/// payload. `primary` is the hard-dependency input; absent secondaries are
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StampMeta {
    pub primary: u64,
    pub secondary: Option<u64>,
    pub tertiary: Option<u64>,
}

impl StampMeta {
    const NONE: u64 = u64::MAX;

    fn encode(&self, len: usize) -> Bytes {
        tagged_payload(
            &[
                self.primary,
                self.secondary.unwrap_or(Self::NONE),
                self.tertiary.unwrap_or(Self::NONE),
            ],
            len,
        )
    }

    pub fn decode(payload: &[u8]) -> Option<Self> {
        let opt = |w: u64| (w != Self::NONE).then_some(w);
        Some(StampMeta {
            primary: read_word(payload, 0)?,
            secondary: opt(read_word(payload, 1)?),
            tertiary: opt(read_word(payload, 2)?),
        })
    }
}

/// Object-detector stand-in: `in` (blocking) → `out`.
///
/// The result keeps the frame's seq, origin timestamp and hops so latency is
/// attributed to the frame it was computed from.
/// Params: `compute_ms` (0), `result_bytes` (64), `busy` (false).
pub struct DetectorStub {
    compute: Duration,
    busy: bool,
    result_bytes: usize,
}

impl DetectorStub {
    pub const TYPE: &'static str = "DetectorStub";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&["compute_ms", "result_bytes", "busy"])?;
        let (compute, busy) = compute_params(params)?;
        let result_bytes = params.size_or("result_bytes", 64)?;
        ports.register_in_port("in", PortSemantics::Blocking)?;
        ports.register_out_port("out")?;
        Ok(Box::new(DetectorStub {
            compute,
            busy,
            result_bytes,
        }))
    }
}

impl Kernel for DetectorStub {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        let Some(frame) = required(ctx, "in")? else {
            return Ok(KernelStatus::Stop);
        };
        if work(ctx, self.compute, self.busy) {
            return Ok(KernelStatus::Stop);
        }
        let mut out = Message::new("detection", tagged_payload(&[frame.seq], self.result_bytes));
        out.inherit(&frame);
        out.seq = frame.seq;
        ctx.ports.send_output("out", out)?;
        Ok(KernelStatus::Continue)
    }
}

/// Renderer stand-in: `bg` (blocking), `det` and `key` (non-blocking) → `out`.
///
/// Each step consumes one background frame and the newest detection and key
/// event available. The output is attributed to the most recent detection
/// incorporated so far (or to the background frame before any detection
/// arrives), measuring how long the pipeline takes to reflect what the
/// detector saw. The payload starts with [`StampMeta`] (bg, det, key seqs).
///
/// Params: `compute_ms` (0), `output_bytes` (1024), `busy` (false),
/// `det_semantics` (`nonblocking`; `blocking` makes the detection a hard
/// dependency).
pub struct RendererStub {
    compute: Duration,
    busy: bool,
    output_bytes: usize,
    det_blocking: bool,
    last_det: Option<Message>,
    last_key: Option<u64>,
}

impl RendererStub {
    pub const TYPE: &'static str = "RendererStub";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&["compute_ms", "output_bytes", "busy", "det_semantics"])?;
        let (compute, busy) = compute_params(params)?;
        let output_bytes = params.size_or("output_bytes", 1024)?;
        let det_semantics = match params.str_or("det_semantics", "nonblocking")? {
            "blocking" => PortSemantics::Blocking,
            "nonblocking" | "non_blocking" => PortSemantics::NonBlocking,
            other => {
                return Err(KernelError::Config(format!(
                    "det_semantics must be blocking or nonblocking, got '{other}'"
                )))
            }
        };
        ports.register_in_port("bg", PortSemantics::Blocking)?;
        ports.register_in_port("det", det_semantics)?;
        ports.register_in_port("key", PortSemantics::NonBlocking)?;
        ports.register_out_port("out")?;
        Ok(Box::new(RendererStub {
            compute,
            busy,
            output_bytes,
            det_blocking: det_semantics == PortSemantics::Blocking,
            last_det: None,
            last_key: None,
        }))
    }
}

impl Kernel for RendererStub {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        let Some(bg) = required(ctx, "bg")? else {
            return Ok(KernelStatus::Stop);
        };
        let det = if self.det_blocking {
            match required(ctx, "det")? {
                Some(d) => Some(d),
                None => return Ok(KernelStatus::Stop),
            }
        } else {
            latest(ctx, "det")?
        };
        if let Some(d) = det {
            self.last_det = Some(d);
        }
        if let Some(k) = latest(ctx, "key")? {
            self.last_key = Some(k.seq);
        }
        if work(ctx, self.compute, self.busy) {
            return Ok(KernelStatus::Stop);
        }
        let mut out = ctx.ports.get_output_placeholder("out")?;
        let basis = self.last_det.as_ref().unwrap_or(&bg);
        out.ts_origin = basis.ts_origin;
        out.hops = basis.hops.clone();
        out.type_tag = "rendered".into();
        out.payload = StampMeta {
            primary: bg.seq,
            secondary: self.last_det.as_ref().map(|d| d.seq),
            tertiary: self.last_key,
        }
        .encode(self.output_bytes);
        ctx.ports.send_output("out", out)?;
        Ok(KernelStatus::Continue)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecMode {
    Encode,
    Decode,
}

/// Compression stand-in: `in` (blocking) → `out` with payload length scaled
/// by `ratio`.
///
/// Encoding keeps a prefix of the input; decoding repeats the input
/// cyclically. Seq, origin timestamp and hops are preserved.
/// Params: `mode` (`encode` or `decode`, required), `compute_ms` (0),
/// `ratio` (0.05 for encode, 20 for decode), `busy` (false).
pub struct CodecStub {
    mode: CodecMode,
    ratio: f64,
    compute: Duration,
    busy: bool,
}

impl CodecStub {
    pub const TYPE: &'static str = "CodecStub";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&["mode", "compute_ms", "ratio", "busy"])?;
        let mode = match params.str_or("mode", "")? {
            "encode" => CodecMode::Encode,
            "decode" => CodecMode::Decode,
            other => {
                return Err(KernelError::Config(format!(
                    "mode must be encode or decode, got '{other}'"
                )))
            }
        };
        let ratio = params.f64_or(
            "ratio",
            if mode == CodecMode::Encode {
                0.05
            } else {
                20.0
            },
        )?;
        let valid = match mode {
            CodecMode::Encode => ratio > 0.0 && ratio <= 1.0,
            CodecMode::Decode => ratio >= 1.0,
        };
        if !valid {
            return Err(KernelError::Config(format!(
                "ratio {ratio} out of range for {mode:?} (encode: 0 < r <= 1, decode: r >= 1)"
            )));
        }
        let (compute, busy) = compute_params(params)?;
        ports.register_in_port("in", PortSemantics::Blocking)?;
        ports.register_out_port("out")?;
        Ok(Box::new(CodecStub {
            mode,
            ratio,
            compute,
            busy,
        }))
    }

    /// Output payload for `input` under this codec's ratio.
    pub fn transform(mode: CodecMode, ratio: f64, input: &Bytes) -> Bytes {
        let n = (input.len() as f64 * ratio).round() as usize;
        match mode {
            CodecMode::Encode => input.slice(..n.min(input.len())),
            CodecMode::Decode if input.is_empty() => Bytes::new(),
            CodecMode::Decode => {
                let n = n.min(crate::message::MAX_PAYLOAD);
                let mut out = BytesMut::with_capacity(n);
                while out.len() < n {
                    let take = (n - out.len()).min(input.len());
                    out.extend_from_slice(&input[..take]);
                }
                out.freeze()
            }
        }
    }
}

impl Kernel for CodecStub {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        let Some(msg) = required(ctx, "in")? else {
            return Ok(KernelStatus::Stop);
        };
        if work(ctx, self.compute, self.busy) {
            return Ok(KernelStatus::Stop);
        }
        let mut out = Message::new(
            msg.type_tag.clone(),
            Self::transform(self.mode, self.ratio, &msg.payload),
        );
        out.inherit(&msg);
        out.seq = msg.seq;
        ctx.ports.send_output("out", out)?;
        Ok(KernelStatus::Continue)
    }
}

/// Pose-estimator stand-in: `imu` (blocking), `cam` (non-blocking) → `out`.
///
/// Output is attributed to the IMU sample; the payload's [`StampMeta`] cites
/// the newest camera frame incorporated so far.
/// Params: `compute_ms` (0), `pose_bytes` (64), `busy` (false).
pub struct PoseEstimatorStub {
    compute: Duration,
    busy: bool,
    pose_bytes: usize,
    last_cam: Option<u64>,
}

impl PoseEstimatorStub {
    pub const TYPE: &'static str = "PoseEstimatorStub";

    pub fn build(params: &Params, ports: &mut PortManager) -> Result<Box<dyn Kernel>, KernelError> {
        params.check_keys(&["compute_ms", "pose_bytes", "busy"])?;
        let (compute, busy) = compute_params(params)?;
        let pose_bytes = params.size_or("pose_bytes", 64)?;
        ports.register_in_port("imu", PortSemantics::Blocking)?;
        ports.register_in_port("cam", PortSemantics::NonBlocking)?;
        ports.register_out_port("out")?;
        Ok(Box::new(PoseEstimatorStub {
            compute,
            busy,
            pose_bytes,
            last_cam: None,
        }))
    }
}

impl Kernel for PoseEstimatorStub {
    fn step(&mut self, ctx: &mut KernelContext) -> Result<KernelStatus, KernelError> {
        let Some(imu) = required(ctx, "imu")? else {
            return Ok(KernelStatus::Stop);
        };
        if let Some(cam) = latest(ctx, "cam")? {
            self.last_cam = Some(cam.seq);
        }
        if work(ctx, self.compute, self.busy) {
            return Ok(KernelStatus::Stop);
        }
        let mut out = ctx.ports.get_output_placeholder("out")?;
        out.ts_origin = imu.ts_origin;
        out.hops = imu.hops.clone();
        out.type_tag = "pose".into();
        out.payload = StampMeta {
            primary: imu.seq,
            secondary: self.last_cam,
            tertiary: None,
        }
        .encode(self.pose_bytes);
        ctx.ports.send_output("out", out)?;
        Ok(KernelStatus::Continue)
    }
}
