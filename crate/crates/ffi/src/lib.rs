//! C ABI for the flexpipe runtime.
//!
//! Every function returns an [`FpStatus`]; on failure a message is available
//! from [`fp_last_error`] on the same thread until the next call. Handles
//! are opaque and must be released with their `_free` function. Strings
//! returned to the caller are released with [`fp_string_free`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Duration;

use flexpipe::deploy::{
    deploy_distributed, Daemon, DaemonHandle, DeployError, Deployment, PipelineOptions,
};
use flexpipe::metrics::{bench, metrics_channel, BenchConfig, BenchError, Collector};
use flexpipe::recipe::RecipeError;
use flexpipe::{parse_recipe, validate, KernelRegistry};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Recipe is not valid YAML or does not match the schema.
    Parse = 3,
    /// Recipe parsed but violates a rule; see the error message.
    Validation = 4,
    /// Deployment or transport failure.
    Deploy = 5,
    /// Invalid argument value.
    Argument = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpFormat {
    Csv = 0,
    Json = 1,
}

/// A running pipeline and its metrics collector.
pub struct FpPipeline {
    deployment: Deployment,
    collector: Collector,
    kernels: usize,
    sink_messages: u64,
}

/// A deployment daemon serving on a background thread.
pub struct FpDaemon {
    handle: DaemonHandle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (FpStatus, String)>) -> FpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic in flexpipe");
            FpStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FpStatus, String)> {
    if p.is_null() {
        return Err((FpStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FpStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn recipe_status(e: RecipeError) -> (FpStatus, String) {
    let status = match e {
        RecipeError::Invalid(_) => FpStatus::Validation,
        _ => FpStatus::Parse,
    };
    (status, e.to_string())
}

fn deploy_status(e: DeployError) -> (FpStatus, String) {
    let status = if e.is_validation() {
        FpStatus::Validation
    } else {
        FpStatus::Deploy
    };
    (status, e.to_string())
}

/// Parses `name=host:port` pairs separated by `;` or `,`.
fn parse_servers(list: &str) -> Result<HashMap<String, String>, (FpStatus, String)> {
    list.split([';', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            pair.split_once('=')
                .map(|(n, a)| (n.to_owned(), a.to_owned()))
                .ok_or_else(|| (FpStatus::Argument, format!("bad server entry '{pair}'")))
        })
        .collect()
}

/// # Safety
/// `servers` is null or a NUL-terminated string valid for the call.
unsafe fn servers_arg(
    servers: *const c_char,
) -> Result<HashMap<String, String>, (FpStatus, String)> {
    if servers.is_null() {
        Ok(HashMap::new())
    } else {
        parse_servers(str_arg(servers, "servers")?)
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a YAML recipe against the built-in kernels.
///
/// # Safety
/// `recipe_yaml` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fp_validate_recipe(recipe_yaml: *const c_char) -> FpStatus {
    guard(|| {
        let text = str_arg(recipe_yaml, "recipe_yaml")?;
        let recipe = parse_recipe(text).map_err(recipe_status)?;
        validate(&recipe, &KernelRegistry::builtin())
            .map(|_| ())
            .map_err(|v| recipe_status(RecipeError::Invalid(v)))
    })
}

/// Deploys and starts a recipe. `servers` maps placement labels to daemon
/// addresses as `name=host:port;...` and may be null for local recipes.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_pipeline_deploy(
    recipe_yaml: *const c_char,
    servers: *const c_char,
    out: *mut *mut FpPipeline,
) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return Err((FpStatus::NullArgument, "out is null".into()));
        }
        let recipe = parse_recipe(str_arg(recipe_yaml, "recipe_yaml")?).map_err(recipe_status)?;
        let servers = servers_arg(servers)?;
        let (tx, collector) = metrics_channel();
        let opts = PipelineOptions {
            metrics: Some(tx),
            ..PipelineOptions::default()
        };
        let deployment = deploy_distributed(&recipe, &servers, &KernelRegistry::builtin(), &opts)
            .map_err(deploy_status)?;
        *out = Box::into_raw(Box::new(FpPipeline {
            deployment,
            collector,
            kernels: recipe.kernels.len(),
            sink_messages: 0,
        }));
        Ok(())
    })
}

/// Number of kernel instances across all hosts.
///
/// # Safety
/// `p` is a live pipeline handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fp_pipeline_kernel_count(
    p: *const FpPipeline,
    out: *mut usize,
) -> FpStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), out.is_null()) else {
            return Err((FpStatus::NullArgument, "null argument".into()));
        };
        *out = p.kernels;
        Ok(())
    })
}

/// Messages that reached sinks on this process so far.
///
/// # Safety
/// `p` is a live pipeline handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fp_pipeline_sink_count(p: *mut FpPipeline, out: *mut u64) -> FpStatus {
    guard(|| {
        let (Some(p), false) = (p.as_mut(), out.is_null()) else {
            return Err((FpStatus::NullArgument, "null argument".into()));
        };
        p.sink_messages += Collector::sink_records(&p.collector.drain()).count() as u64;
        *out = p.sink_messages;
        Ok(())
    })
}

/// Whether every kernel on this process has exited on its own.
///
/// # Safety
/// `p` is a live pipeline handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fp_pipeline_is_finished(p: *mut FpPipeline, out: *mut bool) -> FpStatus {
    guard(|| {
        let (Some(p), false) = (p.as_mut(), out.is_null()) else {
            return Err((FpStatus::NullArgument, "null argument".into()));
        };
        *out = p.deployment.local().is_none_or(|h| h.is_finished());
        Ok(())
    })
}

/// Stops the pipeline on every host. Idempotent.
///
/// # Safety
/// `p` is a live pipeline handle.
#[no_mangle]
pub unsafe extern "C" fn fp_pipeline_stop(p: *mut FpPipeline) -> FpStatus {
    guard(|| {
        let p = p
            .as_mut()
            .ok_or((FpStatus::NullArgument, "pipeline is null".to_owned()))?;
        let summary = p.deployment.teardown().map_err(deploy_status)?;
        let failure = summary.failures().next().map(|(host, r)| {
            format!(
                "{host}/{}: {}",
                r.instance_id,
                r.error.as_deref().unwrap_or("")
            )
        });
        failure.map_or(Ok(()), |m| Err((FpStatus::Deploy, m)))
    })
}

/// Stops (if needed) and releases a pipeline. Null is ignored.
///
/// # Safety
/// `p` is null or a handle from [`fp_pipeline_deploy`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_pipeline_free(p: *mut FpPipeline) {
    if !p.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(p))));
    }
}

/// Starts a daemon on `bind` (`host:port`, port 0 for any free port).
///
/// # Safety
/// `bind` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fp_daemon_start(bind: *const c_char, out: *mut *mut FpDaemon) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return Err((FpStatus::NullArgument, "out is null".into()));
        }
        let addr = str_arg(bind, "bind")?
            .parse()
            .map_err(|_| (FpStatus::Argument, "bind must be host:port".to_owned()))?;
        let daemon = Daemon::bind(addr, KernelRegistry::builtin()).map_err(deploy_status)?;
        *out = Box::into_raw(Box::new(FpDaemon {
            handle: daemon.spawn(),
        }));
        Ok(())
    })
}

/// The port the daemon listens on.
///
/// # Safety
/// `d` is a live daemon handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fp_daemon_port(d: *const FpDaemon, out: *mut u16) -> FpStatus {
    guard(|| {
        let (Some(d), false) = (d.as_ref(), out.is_null()) else {
            return Err((FpStatus::NullArgument, "null argument".into()));
        };
        *out = d.handle.local_addr().port();
        Ok(())
    })
}

/// Stops the daemon and every pipeline it hosts, then releases it.
///
/// # Safety
/// `d` is null or a handle from [`fp_daemon_start`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_daemon_free(d: *mut FpDaemon) {
    if !d.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(d))));
    }
}

/// Runs a benchmark and returns the report text in `out_report`, to be
/// released with [`fp_string_free`].
///
/// # Safety
/// String arguments are NUL-terminated (`servers` may be null);
/// `out_report` is writable.
#[no_mangle]
pub unsafe extern "C" fn fp_bench(
    recipe_yaml: *const c_char,
    servers: *const c_char,
    duration_s: f64,
    warmup_s: f64,
    format: FpFormat,
    out_report: *mut *mut c_char,
) -> FpStatus {
    guard(|| {
        if out_report.is_null() {
            return Err((FpStatus::NullArgument, "out_report is null".into()));
        }
        let recipe = parse_recipe(str_arg(recipe_yaml, "recipe_yaml")?).map_err(recipe_status)?;
        let secs = |v: f64, what: &str| {
            Duration::try_from_secs_f64(v).map_err(|_| {
                (
                    FpStatus::Argument,
                    format!("{what} must be a non-negative number"),
                )
            })
        };
        let cfg = BenchConfig {
            duration: secs(duration_s, "duration_s")?,
            warmup: secs(warmup_s, "warmup_s")?,
            servers: servers_arg(servers)?,
            ..BenchConfig::default()
        };
        let report = bench(&recipe, &KernelRegistry::builtin(), &cfg).map_err(|e| match e {
            BenchError::Config(m) => (FpStatus::Argument, m),
            BenchError::Deploy(d) => deploy_status(d),
        })?;
        let text = match format {
            FpFormat::Csv => report.to_csv(),
            FpFormat::Json => report.to_json(),
        };
        *out_report = CString::new(text)
            .map_err(|_| (FpStatus::Argument, "report contains NUL".to_owned()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
