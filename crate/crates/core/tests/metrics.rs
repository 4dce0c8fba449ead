use proptest::prelude::*;

use flexpipe::metrics::report::{EdgeStats, Staleness};
use flexpipe::metrics::{compare, LatencyStats, MetricsReport, ReportFormat, StageStats};

fn latency() -> impl Strategy<Value = LatencyStats> {
    (
        0.0f64..1e5,
        0.0f64..1e5,
        proptest::option::of(0.0f64..1e5),
        any::<u32>(),
    )
        .prop_map(|(mean_ms, p50_ms, p99_ms, count)| LatencyStats {
            mean_ms,
            p50_ms,
            p99_ms,
            count: count.into(),
        })
}

fn label() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_.>-]{0,16}"
}

fn report() -> impl Strategy<Value = MetricsReport> {
    (
        (label(), label(), 0.0f64..1e4, 0.0f64..1e3, 0.0f64..1e4),
        proptest::collection::vec((label(), latency()), 1..6),
        latency(),
        (any::<u32>(), any::<bool>(), "[0-9a-f]{16}"),
        proptest::collection::vec((label(), any::<u32>(), any::<u32>(), any::<u32>()), 0..3),
        proptest::collection::vec((label(), 0.0f64..1e4, any::<u32>()), 0..3),
    )
        .prop_map(
            |(
                (scenario, workload, duration_s, warmup_s, throughput_hz),
                stages,
                e2e,
                misc,
                tr,
                st,
            )| {
                MetricsReport {
                    scenario,
                    workload,
                    duration_s,
                    warmup_s,
                    stages: stages
                        .into_iter()
                        .map(|(stage, latency)| StageStats { stage, latency })
                        .collect(),
                    end_to_end: e2e,
                    throughput_hz,
                    sink_count: misc.0.into(),
                    transport: tr
                        .into_iter()
                        .map(|(edge, s, d, x)| EdgeStats {
                            edge,
                            sent: s.into(),
                            delivered: d.into(),
                            dropped: x.into(),
                        })
                        .collect(),
                    staleness: st
                        .into_iter()
                        .map(|(consumer, mean_age_ms, count)| Staleness {
                            consumer,
                            mean_age_ms,
                            count: count.into(),
                        })
                        .collect(),
                    degenerate: misc.1,
                    registry_fingerprint: misc.2,
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn csv_round_trip(r in report()) {
        prop_assert_eq!(MetricsReport::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn json_round_trip(r in report()) {
        prop_assert_eq!(MetricsReport::from_json(&r.to_json()).unwrap(), r);
    }
}

#[test]
fn files_are_read_back_in_either_format() {
    let dir = tempfile::tempdir().unwrap();
    let r = MetricsReport {
        scenario: "ar1_local".into(),
        workload: "ar1".into(),
        duration_s: 8.0,
        warmup_s: 2.0,
        stages: vec![StageStats {
            stage: "camera->detector".into(),
            latency: LatencyStats::from_ns(&[1_000_000, 3_000_000]),
        }],
        end_to_end: LatencyStats::from_ns(&[1_000_000, 3_000_000]),
        throughput_hz: 30.0,
        sink_count: 2,
        ..MetricsReport::default()
    };
    for (file, format) in [("r.csv", ReportFormat::Csv), ("r.json", ReportFormat::Json)] {
        let path = dir.path().join(file);
        r.write(&path, format).unwrap();
        assert_eq!(MetricsReport::read(&path).unwrap(), r, "{file}");
    }
}

#[test]
fn malformed_csv_is_rejected() {
    for text in [
        "# bogus=1\nscenario,stage,mean_ms,p50_ms,p99_ms,count\n",
        "scenario,stage,mean\n",
        "scenario,stage,mean_ms,p50_ms,p99_ms,count\na,b,x,1,,1\n",
        "# end_to_end=1,2\nscenario,stage,mean_ms,p50_ms,p99_ms,count\n",
    ] {
        assert!(MetricsReport::from_csv(text).is_err(), "{text:?}");
    }
}

#[test]
fn latency_stats_percentiles() {
    let samples: Vec<u64> = (1..=200).map(|i| i * 1_000_000).collect();
    let s = LatencyStats::from_ns(&samples);
    assert_eq!(s.count, 200);
    assert!((s.mean_ms - 100.5).abs() < 1e-9);
    assert_eq!(s.p50_ms, 100.0);
    assert_eq!(s.p99_ms, Some(198.0));
    assert_eq!(LatencyStats::from_ns(&samples[..199]).p99_ms, None);
}

#[test]
fn comparison_flags_best_live_rows_per_workload() {
    let mk = |scenario: &str, workload: &str, mean: f64, hz: f64, degenerate: bool| MetricsReport {
        scenario: scenario.into(),
        workload: workload.into(),
        end_to_end: LatencyStats {
            mean_ms: mean,
            ..LatencyStats::default()
        },
        throughput_hz: hz,
        degenerate,
        ..MetricsReport::default()
    };
    let c = compare(&[
        mk("a", "w1", 50.0, 20.0, false),
        mk("b", "w1", 30.0, 25.0, false),
        mk("c", "w1", 1.0, 100.0, true),
        mk("d", "w2", 80.0, 5.0, false),
    ]);
    assert_eq!(c.groups.len(), 2);
    let w1 = &c.groups[0].rows;
    assert!(w1[1].best_latency && w1[1].best_throughput);
    assert!(!w1[2].best_latency && !w1[2].best_throughput);
    assert!(c.groups[1].rows[0].best_latency);
    let text = c.to_string();
    assert!(
        text.contains("workload: w2") && text.contains("degenerate"),
        "{text}"
    );
}
