use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use flexpipe::deploy::{deploy_distributed, Daemon, DeployError, PipelineOptions};
use flexpipe::metrics::{
    compare, metrics_channel, BenchConfig, BenchError, Collector, MetricsReport, ReportFormat,
};
use flexpipe::recipe::{load_recipe, validate, RecipeError};
use flexpipe::{KernelRegistry, PipelineRecipe, StopToken};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "flexpipe",
    version,
    about = "Run, serve and benchmark recipe-configured pipelines"
)]
struct Cli {
    /// error, warn, info, debug, trace or off; FLEXPIPE_LOG overrides it.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a recipe against the built-in kernels.
    Validate {
        #[arg(long)]
        recipe: PathBuf,
    },
    /// Deploy a recipe and run it until interrupted or its sources finish.
    Run {
        #[command(flatten)]
        target: Target,
        /// Stop after this many seconds.
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Serve as a deployment daemon.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: String,
    },
    /// Deploy a recipe, measure latency and throughput, write a report.
    Bench {
        #[command(flatten)]
        target: Target,
        /// Total run time, warmup included.
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 2.0)]
        warmup_s: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
        /// Scenario label; defaults to the recipe file name.
        #[arg(long)]
        scenario: Option<String>,
        /// Workload label used to group scenarios; defaults to the file
        /// name up to its first underscore.
        #[arg(long)]
        workload: Option<String>,
    },
    /// Compare benchmark reports side by side.
    Scenarios {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Target {
    #[arg(long)]
    recipe: PathBuf,
    /// Daemon for a placement label, as name=host:port. Repeatable.
    #[arg(long = "server", value_parser = parse_server)]
    servers: Vec<(String, String)>,
}

fn parse_server(s: &str) -> Result<(String, String), String> {
    let (name, addr) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=host:port, got '{s}'"))?;
    if name.is_empty() || !addr.contains(':') {
        return Err(format!("expected name=host:port, got '{s}'"));
    }
    Ok((name.to_owned(), addr.to_owned()))
}

fn init_logging(level: Option<&str>, default: &str) {
    let filter = std::env::var("FLEXPIPE_LOG")
        .ok()
        .or_else(|| level.map(str::to_owned))
        .unwrap_or_else(|| default.to_owned());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(filter))
        .with_writer(std::io::stderr)
        .try_init();
}

fn interrupt_token() -> StopToken {
    let stop = StopToken::new();
    let s = stop.clone();
    let _ = ctrlc::set_handler(move || s.stop());
    stop
}

fn load(path: &Path) -> Result<PipelineRecipe, u8> {
    load_recipe(path).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            RecipeError::Io { .. } => EXIT_RUNTIME,
            _ => EXIT_VALIDATION,
        }
    })
}

fn deploy_exit(e: &DeployError) -> u8 {
    eprintln!("error: {e}");
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn cmd_validate(recipe: &Path) -> Result<(), u8> {
    let r = load(recipe)?;
    match validate(&r, &KernelRegistry::builtin()) {
        Ok(meta) => {
            println!(
                "ok: {} kernel(s), {} local edge(s), {} remote edge(s)",
                meta.kernels.len(),
                meta.local_edges.len(),
                meta.remote_edges.len()
            );
            Ok(())
        }
        Err(violations) => {
            for v in &violations {
                println!("violation: {v}");
            }
            Err(EXIT_VALIDATION)
        }
    }
}

fn cmd_run(target: &Target, duration_s: Option<f64>) -> Result<(), u8> {
    let limit = match duration_s.map(Duration::try_from_secs_f64) {
        Some(Err(_)) => {
            eprintln!("error: duration-s must be a non-negative number");
            return Err(EXIT_USAGE);
        }
        other => other.map(Result::unwrap_or_default),
    };
    let recipe = load(&target.recipe)?;
    let servers: HashMap<String, String> = target.servers.iter().cloned().collect();
    let registry = KernelRegistry::builtin();
    let (tx, collector) = metrics_channel();
    let opts = PipelineOptions {
        metrics: Some(tx),
        ..PipelineOptions::default()
    };
    let stop = interrupt_token();
    let mut deployment =
        deploy_distributed(&recipe, &servers, &registry, &opts).map_err(|e| deploy_exit(&e))?;
    drop(opts);
    eprintln!("pipeline {} running; interrupt to stop", deployment.id());
    let start = Instant::now();
    let mut counts: HashMap<String, u64> = HashMap::new();
    loop {
        if stop.sleep(Duration::from_millis(100)) {
            break;
        }
        if limit.is_some_and(|l| start.elapsed() >= l) {
            break;
        }
        for r in Collector::sink_records(&collector.drain()) {
            *counts.entry(r.sink.clone()).or_default() += 1;
        }
        if deployment.local().is_some_and(|h| h.is_finished()) {
            break;
        }
    }
    let summary = deployment.teardown().map_err(|e| deploy_exit(&e))?;
    for r in Collector::sink_records(&collector.drain()) {
        *counts.entry(r.sink.clone()).or_default() += 1;
    }
    let mut sinks: Vec<_> = counts.into_iter().collect();
    sinks.sort();
    for (sink, n) in &sinks {
        println!("{sink}: {n} message(s)");
    }
    for (host, r) in &summary.reports {
        println!("{host}/{}: {} step(s)", r.instance_id, r.steps);
    }
    let failed: Vec<_> = summary.failures().collect();
    for (host, r) in &failed {
        eprintln!(
            "{host}/{} failed: {}",
            r.instance_id,
            r.error.as_deref().unwrap_or("")
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(EXIT_RUNTIME)
    }
}

fn cmd_serve(bind: &str, port: u16) -> Result<(), u8> {
    let addr = format!("{bind}:{port}").parse().map_err(|_| {
        eprintln!("error: invalid bind address '{bind}'");
        EXIT_USAGE
    })?;
    let daemon = Daemon::bind(addr, KernelRegistry::builtin()).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_RUNTIME
    })?;
    println!("listening on {}", daemon.local_addr());
    let stop = interrupt_token();
    daemon.run(&stop).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_RUNTIME
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    target: &Target,
    duration_s: f64,
    warmup_s: f64,
    out: Option<&Path>,
    format: ReportFormat,
    scenario: Option<String>,
    workload: Option<String>,
) -> Result<(), u8> {
    let (Ok(duration), Ok(warmup)) = (
        Duration::try_from_secs_f64(duration_s),
        Duration::try_from_secs_f64(warmup_s),
    ) else {
        eprintln!("error: need 0 <= warmup-s < duration-s");
        return Err(EXIT_USAGE);
    };
    if duration <= warmup {
        eprintln!("error: need 0 <= warmup-s < duration-s");
        return Err(EXIT_USAGE);
    }
    let recipe = load(&target.recipe)?;
    let stem = target
        .recipe
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let cfg = BenchConfig {
        workload: workload.unwrap_or_else(|| stem.split('_').next().unwrap_or("").to_owned()),
        scenario: scenario.unwrap_or(stem),
        duration,
        warmup,
        servers: target.servers.iter().cloned().collect(),
        options: PipelineOptions::default(),
        stop: Some(interrupt_token()),
    };
    let report = flexpipe::metrics::bench(&recipe, &KernelRegistry::builtin(), &cfg).map_err(
        |e| match e {
            BenchError::Config(m) => {
                eprintln!("error: {m}");
                EXIT_USAGE
            }
            BenchError::Deploy(d) => deploy_exit(&d),
        },
    )?;
    match out {
        Some(path) => report.write(path, format).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        })?,
        None => match format {
            ReportFormat::Csv => print!("{}", report.to_csv()),
            ReportFormat::Json => println!("{}", report.to_json()),
        },
    }
    eprintln!(
        "{}: end-to-end mean {:.2} ms, throughput {:.2} msg/s over {:.1} s{}",
        report.scenario,
        report.end_to_end.mean_ms,
        report.throughput_hz,
        report.duration_s,
        if report.degenerate {
            " (degenerate: no sink messages)"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_scenarios(paths: &[PathBuf]) -> Result<(), u8> {
    let mut reports = Vec::new();
    for p in paths {
        reports.push(MetricsReport::read(p).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        })?);
    }
    print!("{}", compare(&reports));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let quiet_default = matches!(cli.command, Command::Bench { .. });
    init_logging(
        cli.log_level.as_deref(),
        if quiet_default { "off" } else { "warn" },
    );
    let result = match &cli.command {
        Command::Validate { recipe } => cmd_validate(recipe),
        Command::Run { target, duration_s } => cmd_run(target, *duration_s),
        Command::Serve { port, bind } => cmd_serve(bind, *port),
        Command::Bench {
            target,
            duration_s,
            warmup_s,
            out,
            format,
            scenario,
            workload,
        } => cmd_bench(
            target,
            *duration_s,
            *warmup_s,
            out.as_deref(),
            *format,
            scenario.clone(),
            workload.clone(),
        ),
        Command::Scenarios { reports } => cmd_scenarios(reports),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
