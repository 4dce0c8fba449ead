//! Side-by-side comparison of scenario reports.

use std::fmt;

use serde::Serialize;

use super::report::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub throughput_hz: f64,
    pub best_latency: bool,
    pub best_throughput: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadGroup {
    pub workload: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub groups: Vec<WorkloadGroup>,
}

/// Groups reports by workload (first-seen order) and flags, per group, the
/// lowest mean end-to-end latency and the highest throughput. Degenerate
/// reports are listed but never flagged.
pub fn compare(reports: &[MetricsReport]) -> Comparison {
    let mut groups: Vec<WorkloadGroup> = Vec::new();
    for r in reports {
        let row = ComparisonRow {
            scenario: r.scenario.clone(),
            mean_ms: r.end_to_end.mean_ms,
            p50_ms: r.end_to_end.p50_ms,
            throughput_hz: r.throughput_hz,
            best_latency: false,
            best_throughput: false,
            degenerate: r.degenerate,
        };
        match groups.iter_mut().find(|g| g.workload == r.workload) {
            Some(g) => g.rows.push(row),
            None => groups.push(WorkloadGroup {
                workload: r.workload.clone(),
                rows: vec![row],
            }),
        }
    }
    for g in &mut groups {
        let live = || g.rows.iter().enumerate().filter(|(_, r)| !r.degenerate);
        let best_lat = live()
            .min_by(|a, b| a.1.mean_ms.total_cmp(&b.1.mean_ms))
            .map(|(i, _)| i);
        let best_tp = live()
            .max_by(|a, b| a.1.throughput_hz.total_cmp(&b.1.throughput_hz))
            .map(|(i, _)| i);
        if let Some(i) = best_lat {
            g.rows[i].best_latency = true;
        }
        if let Some(i) = best_tp {
            g.rows[i].best_throughput = true;
        }
    }
    Comparison { groups }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(f, "workload: {}", g.workload)?;
            writeln!(
                f,
                "  {:<24} {:>12} {:>12} {:>14}  flags",
                "scenario", "mean_ms", "p50_ms", "throughput_hz"
            )?;
            for r in &g.rows {
                let mut flags = Vec::new();
                if r.best_latency {
                    flags.push("best-latency");
                }
                if r.best_throughput {
                    flags.push("best-throughput");
                }
                if r.degenerate {
                    flags.push("degenerate");
                }
                writeln!(
                    f,
                    "  {:<24} {:>12.2} {:>12.2} {:>14.2}  {}",
                    r.scenario,
                    r.mean_ms,
                    r.p50_ms,
                    r.throughput_hz,
                    flags.join(",")
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::report::LatencyStats;

    fn report(workload: &str, scenario: &str, mean: f64, tp: f64) -> MetricsReport {
        MetricsReport {
            scenario: scenario.into(),
            workload: workload.into(),
            end_to_end: LatencyStats {
                mean_ms: mean,
                p50_ms: mean,
                p99_ms: None,
                count: 10,
            },
            throughput_hz: tp,
            ..MetricsReport::default()
        }
    }

    #[test]
    fn flags_argmin_latency_and_argmax_throughput() {
        let c = compare(&[
            report("ar1", "L", 90.0, 12.0),
            report("ar1", "P", 60.0, 25.0),
            report("ar1", "R", 70.0, 29.0),
            report("ar1", "P+R", 80.0, 20.0),
        ]);
        assert_eq!(c.groups.len(), 1);
        let rows = &c.groups[0].rows;
        assert_eq!(rows.iter().filter(|r| r.best_latency).count(), 1);
        assert!(rows[1].best_latency);
        assert!(rows[2].best_throughput);
    }

    #[test]
    fn single_report_and_grouping() {
        let c = compare(&[report("ar1", "L", 1.0, 1.0)]);
        assert_eq!(c.groups[0].rows.len(), 1);
        assert!(c.groups[0].rows[0].best_latency && c.groups[0].rows[0].best_throughput);
        let c = compare(&[report("ar1", "L", 1.0, 1.0), report("vr", "L", 2.0, 2.0)]);
        assert_eq!(c.groups.len(), 2);
        assert!(c.to_string().contains("workload: vr"));
    }
}
