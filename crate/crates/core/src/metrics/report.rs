//! Benchmark reports and their CSV/JSON forms.
//!
//! CSV layout: `#`-prefixed `key=value` preamble lines carry the scalar
//! fields, transport counters and staleness, followed by the header
//! `scenario,stage,mean_ms,p50_ms,p99_ms,count` and one row per stage in
//! path order. An absent p99 is an empty cell.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 6] = ["scenario", "stage", "mean_ms", "p50_ms", "p99_ms", "count"];

/// Below this many samples p99 is not reported.
pub const P99_MIN_SAMPLES: usize = 200;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: Option<f64>,
    pub count: u64,
}

impl LatencyStats {
    pub fn from_ns(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut ms: Vec<f64> = samples.iter().map(|&n| n as f64 / 1e6).collect();
        ms.sort_by(f64::total_cmp);
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        LatencyStats {
            mean_ms: mean,
            p50_ms: percentile(&ms, 0.50),
            p99_ms: (ms.len() >= P99_MIN_SAMPLES).then(|| percentile(&ms, 0.99)),
            count: ms.len() as u64,
        }
    }
}

/// Nearest-rank percentile of sorted, non-empty data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    #[serde(flatten)]
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub edge: String,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// Mean age of sensor-origin data when a kernel consumed it from a port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Staleness {
    pub consumer: String,
    pub mean_age_ms: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub workload: String,
    /// Measurement window, warmup excluded.
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Per-stage latency along the dominant hop path, in path order.
    pub stages: Vec<StageStats>,
    pub end_to_end: LatencyStats,
    pub throughput_hz: f64,
    pub sink_count: u64,
    pub transport: Vec<EdgeStats>,
    pub staleness: Vec<Staleness>,
    /// No sink message arrived in the window.
    pub degenerate: bool,
    pub registry_fingerprint: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn stage_mean_sum_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.latency.mean_ms).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let e = &self.end_to_end;
        let _ = writeln!(out, "# workload={}", self.workload);
        let _ = writeln!(out, "# duration_s={}", self.duration_s);
        let _ = writeln!(out, "# warmup_s={}", self.warmup_s);
        let _ = writeln!(out, "# throughput_hz={}", self.throughput_hz);
        let _ = writeln!(out, "# sink_count={}", self.sink_count);
        let _ = writeln!(out, "# degenerate={}", self.degenerate);
        let _ = writeln!(out, "# registry_fingerprint={}", self.registry_fingerprint);
        let _ = writeln!(
            out,
            "# end_to_end={},{},{},{}",
            e.mean_ms,
            e.p50_ms,
            opt(e.p99_ms),
            e.count
        );
        for t in &self.transport {
            let _ = writeln!(
                out,
                "# transport={},{},{},{}",
                t.edge, t.sent, t.delivered, t.dropped
            );
        }
        for s in &self.staleness {
            let _ = writeln!(
                out,
                "# staleness={},{},{}",
                s.consumer, s.mean_age_ms, s.count
            );
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for s in &self.stages {
            w.write_record([
                self.scenario.clone(),
                s.stage.clone(),
                s.latency.mean_ms.to_string(),
                s.latency.p50_ms.to_string(),
                opt(s.latency.p99_ms),
                s.latency.count.to_string(),
            ])
            .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let bad = |what: &str| ReportError::Parse(what.to_owned());
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(&format!("bad number '{s}'")))
        };
        let int = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| bad(&format!("bad count '{s}'")))
        };
        let optnum = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };

        let mut r = MetricsReport::default();
        let mut body = String::new();
        for line in text.lines() {
            let Some(meta) = line.strip_prefix("# ") else {
                body.push_str(line);
                body.push('\n');
                continue;
            };
            let (key, value) = meta.split_once('=').ok_or_else(|| bad(line))?;
            let fields: Vec<&str> = value.split(',').collect();
            match key {
                "workload" => r.workload = value.to_owned(),
                "duration_s" => r.duration_s = num(value)?,
                "warmup_s" => r.warmup_s = num(value)?,
                "throughput_hz" => r.throughput_hz = num(value)?,
                "sink_count" => r.sink_count = int(value)?,
                "degenerate" => r.degenerate = value == "true",
                "registry_fingerprint" => r.registry_fingerprint = value.to_owned(),
                "end_to_end" => match fields.as_slice() {
                    [m, p50, p99, n] => {
                        r.end_to_end = LatencyStats {
                            mean_ms: num(m)?,
                            p50_ms: num(p50)?,
                            p99_ms: optnum(p99)?,
                            count: int(n)?,
                        }
                    }
                    _ => return Err(bad(line)),
                },
                "transport" => match fields.as_slice() {
                    [edge, s, d, x] => r.transport.push(EdgeStats {
                        edge: (*edge).to_owned(),
                        sent: int(s)?,
                        delivered: int(d)?,
                        dropped: int(x)?,
                    }),
                    _ => return Err(bad(line)),
                },
                "staleness" => match fields.as_slice() {
                    [c, m, n] => r.staleness.push(Staleness {
                        consumer: (*c).to_owned(),
                        mean_age_ms: num(m)?,
                        count: int(n)?,
                    }),
                    _ => return Err(bad(line)),
                },
                _ => return Err(bad(&format!("unknown preamble key '{key}'"))),
            }
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header = rd.headers().map_err(|e| bad(&e.to_string()))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(bad("unexpected CSV header"));
        }
        for row in rd.records() {
            let row = row.map_err(|e| bad(&e.to_string()))?;
            if row.len() != CSV_HEADER.len() {
                return Err(bad("short CSV row"));
            }
            r.scenario = row[0].to_owned();
            r.stages.push(StageStats {
                stage: row[1].to_owned(),
                latency: LatencyStats {
                    mean_ms: num(&row[2])?,
                    p50_ms: num(&row[3])?,
                    p99_ms: optnum(&row[4])?,
                    count: int(&row[5])?,
                },
            });
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))
    }

    /// Writes CSV or JSON depending on `format`.
    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<(), ReportError> {
        let text = match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        };
        std::fs::write(path, text).map_err(|source| ReportError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads a report, picking the format from the content.
    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
            path: path.display().to_string(),
            source,
        })?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text)
        } else {
            let mut r = Self::from_csv(&text)?;
            // A header-only CSV carries no scenario column; fall back to the name.
            if r.scenario.is_empty() {
                r.scenario = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
            }
            Ok(r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}
