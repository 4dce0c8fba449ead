//! Deploy, measure, tear down.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::collector::{metrics_channel, Collector, ConsumedRecord, SinkRecord};
use super::report::{EdgeStats, LatencyStats, MetricsReport, StageStats, Staleness};
use crate::clock::{now_ns, StopToken};
use crate::deploy::{
    deploy_distributed, DeployError, KernelRegistry, PipelineOptions, TeardownSummary,
};
use crate::recipe::PipelineRecipe;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Deploy(#[from] DeployError),
}

#[derive(Clone, Default)]
pub struct BenchConfig {
    pub scenario: String,
    pub workload: String,
    /// Total run time; the first `warmup` of it is discarded.
    pub duration: Duration,
    pub warmup: Duration,
    /// Placement label → daemon `host:port`.
    pub servers: HashMap<String, String>,
    pub options: PipelineOptions,
    /// Ends the run early when fired (e.g. on an interrupt).
    pub stop: Option<StopToken>,
}

/// A finished run: the report plus the raw records it was computed from.
pub struct BenchRun {
    pub report: MetricsReport,
    pub sinks: Vec<SinkRecord>,
    pub consumed: Vec<ConsumedRecord>,
    pub teardown: TeardownSummary,
}

pub fn bench(
    recipe: &PipelineRecipe,
    registry: &KernelRegistry,
    cfg: &BenchConfig,
) -> Result<MetricsReport, BenchError> {
    run_bench(recipe, registry, cfg).map(|r| r.report)
}

pub fn run_bench(
    recipe: &PipelineRecipe,
    registry: &KernelRegistry,
    cfg: &BenchConfig,
) -> Result<BenchRun, BenchError> {
    if cfg.duration.is_zero() {
        return Err(BenchError::Config("duration must be positive".into()));
    }
    if cfg.warmup >= cfg.duration {
        return Err(BenchError::Config(format!(
            "warmup ({:?}) must be shorter than duration ({:?})",
            cfg.warmup, cfg.duration
        )));
    }
    let (tx, collector) = metrics_channel();
    let mut options = cfg.options.clone();
    options.metrics = Some(tx);
    let mut deployment = deploy_distributed(recipe, &cfg.servers, registry, &options)?;
    drop(options);

    let t0 = now_ns();
    let start = Instant::now();
    let stop = cfg.stop.clone().unwrap_or_default();
    while start.elapsed() < cfg.duration {
        if stop.sleep(Duration::from_millis(20)) {
            break;
        }
        if deployment.local().is_some_and(|h| h.is_finished()) {
            break;
        }
    }
    let elapsed = start.elapsed().min(cfg.duration);
    let end = t0 + elapsed.as_nanos() as u64;
    let teardown = deployment.teardown()?;
    drop(deployment);

    let warm_end = t0 + cfg.warmup.as_nanos() as u64;
    let window_s = elapsed.saturating_sub(cfg.warmup).as_secs_f64();
    let events = collector.drain();
    let in_window = |t: u64| t >= warm_end && t <= end;
    let sinks: Vec<SinkRecord> = Collector::sink_records(&events)
        .filter(|r| in_window(r.received_ns))
        .cloned()
        .collect();
    let consumed: Vec<ConsumedRecord> = Collector::consumed_records(&events)
        .filter(|r| in_window(r.consumed_ns))
        .cloned()
        .collect();

    let report = summarize(cfg, registry, window_s, &sinks, &consumed, &teardown);
    Ok(BenchRun {
        report,
        sinks,
        consumed,
        teardown,
    })
}

/// The hop path most records followed; ties prefer the longer path.
fn dominant_path(sinks: &[SinkRecord]) -> Option<Vec<&str>> {
    let mut counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    for r in sinks {
        *counts
            .entry(r.hops.iter().map(|h| h.stage.as_str()).collect())
            .or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|(path, n)| (*n, path.len()))
        .map(|(p, _)| p)
}

fn summarize(
    cfg: &BenchConfig,
    registry: &KernelRegistry,
    window_s: f64,
    sinks: &[SinkRecord],
    consumed: &[ConsumedRecord],
    teardown: &TeardownSummary,
) -> MetricsReport {
    let mut stages = Vec::new();
    if let Some(path) = dominant_path(sinks) {
        let mut per_stage: Vec<Vec<u64>> = vec![Vec::new(); path.len()];
        for r in sinks {
            let deltas = r.stage_deltas();
            if deltas.len() == path.len() && deltas.iter().zip(&path).all(|((s, _), p)| s == p) {
                for (i, (_, d)) in deltas.into_iter().enumerate() {
                    per_stage[i].push(d);
                }
            }
        }
        stages = path
            .iter()
            .zip(per_stage)
            .map(|(stage, samples)| StageStats {
                stage: (*stage).to_owned(),
                latency: LatencyStats::from_ns(&samples),
            })
            .collect();
    }
    let ages: Vec<u64> = sinks.iter().map(SinkRecord::age_ns).collect();

    let mut staleness: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for c in consumed {
        let e = staleness
            .entry(format!("{}.{}", c.consumer, c.port))
            .or_default();
        e.0 += c.age_ns() as f64 / 1e6;
        e.1 += 1;
    }
    let mut transport: Vec<EdgeStats> = teardown
        .port_stats
        .iter()
        .map(|(_, label, s)| EdgeStats {
            edge: label.clone(),
            sent: s.sent,
            delivered: s.delivered,
            dropped: s.dropped,
        })
        .collect();
    transport.sort_by(|a, b| a.edge.cmp(&b.edge));

    MetricsReport {
        scenario: cfg.scenario.clone(),
        workload: cfg.workload.clone(),
        duration_s: window_s,
        warmup_s: cfg.warmup.as_secs_f64(),
        stages,
        end_to_end: LatencyStats::from_ns(&ages),
        throughput_hz: if window_s > 0.0 {
            sinks.len() as f64 / window_s
        } else {
            0.0
        },
        sink_count: sinks.len() as u64,
        transport,
        staleness: staleness
            .into_iter()
            .map(|(consumer, (sum, n))| Staleness {
                consumer,
                mean_age_ms: sum / n as f64,
                count: n,
            })
            .collect(),
        degenerate: sinks.is_empty(),
        registry_fingerprint: registry.fingerprint(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::Hop;

    fn rec(path: &[(&str, u64)]) -> SinkRecord {
        SinkRecord {
            sink: "display".into(),
            seq: 0,
            ts_origin: 0,
            received_ns: path.last().map_or(0, |h| h.1),
            payload_len: 0,
            hops: path
                .iter()
                .map(|(s, t)| Hop {
                    stage: (*s).into(),
                    ts: *t,
                })
                .collect(),
            payload: None,
        }
    }

    #[test]
    fn stages_follow_dominant_path() {
        let sinks = vec![
            rec(&[
                ("camera", 1_000_000),
                ("renderer", 3_000_000),
                ("display", 4_000_000),
            ]),
            rec(&[
                ("camera", 1_000_000),
                ("transport", 2_000_000),
                ("renderer", 5_000_000),
                ("display", 6_000_000),
            ]),
            rec(&[
                ("camera", 1_000_000),
                ("transport", 4_000_000),
                ("renderer", 5_000_000),
                ("display", 8_000_000),
            ]),
        ];
        let report = summarize(
            &BenchConfig::default(),
            &KernelRegistry::empty(),
            1.0,
            &sinks,
            &[],
            &TeardownSummary::default(),
        );
        let names: Vec<&str> = report.stages.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(names, ["camera", "transport", "renderer", "display"]);
        assert_eq!(report.stages[1].latency.mean_ms, 2.0);
        // Stage means telescope to the mean age of the path's records.
        assert!((report.stage_mean_sum_ms() - 7.0).abs() < 1e-9);
        assert_eq!(report.sink_count, 3);
        assert_eq!(report.throughput_hz, 3.0);
    }

    #[test]
    fn zero_duration_rejected() {
        let recipe = PipelineRecipe::default();
        let err = bench(&recipe, &KernelRegistry::builtin(), &BenchConfig::default());
        assert!(matches!(err, Err(BenchError::Config(_))));
        let cfg = BenchConfig {
            duration: Duration::from_secs(1),
            warmup: Duration::from_secs(2),
            ..BenchConfig::default()
        };
        assert!(matches!(
            bench(&recipe, &KernelRegistry::builtin(), &cfg),
            Err(BenchError::Config(_))
        ));
    }
}
