use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::stats;

pub const CSV_HEADER: &str = "index,issued_at_ms,latency_ms,status,bytes";

/// One request's outcome. Failed requests carry status 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestSample {
    pub index: usize,
    /// Offset from the start of the run.
    pub issued_at_ms: f64,
    pub latency_ms: f64,
    pub status: u16,
    pub bytes: u64,
}

impl RequestSample {
    pub fn succeeded(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn completed_at_ms(&self) -> f64 {
        self.issued_at_ms + self.latency_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
    /// Bytes per second over the whole run.
    pub throughput: f64,
    pub success_count: usize,
    pub requests: usize,
    pub total_bytes: u64,
    pub last_completion_ms: f64,
    #[serde(skip)]
    pub samples: Vec<RequestSample>,
}

/// Mean and nearest-rank p99 over successful requests; throughput is all
/// received bytes over the span from the first issue to the last completion.
pub fn compute_report(
    scenario: &str,
    samples: &[RequestSample],
) -> Result<BenchReport, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::NoSamples);
    }
    let ok: Vec<&RequestSample> = samples.iter().filter(|s| s.succeeded()).collect();
    if ok.is_empty() {
        return Err(BenchError::AllFailed(samples.len()));
    }
    let latencies: Vec<f64> = ok.iter().map(|s| s.latency_ms).collect();
    let first_issue = samples
        .iter()
        .map(|s| s.issued_at_ms)
        .fold(f64::INFINITY, f64::min);
    let last_completion = ok
        .iter()
        .map(|s| s.completed_at_ms())
        .fold(f64::NEG_INFINITY, f64::max);
    let total_bytes: u64 = samples.iter().map(|s| s.bytes).sum();
    let span_s = (last_completion - first_issue) / 1e3;
    Ok(BenchReport {
        scenario: scenario.to_string(),
        mean_latency_ms: stats::mean(&latencies),
        p99_latency_ms: stats::nearest_rank(&stats::sorted(&latencies), 0.99),
        throughput: if span_s > 0.0 {
            total_bytes as f64 / span_s
        } else {
            0.0
        },
        success_count: ok.len(),
        requests: samples.len(),
        total_bytes,
        last_completion_ms: last_completion,
        samples: samples.to_vec(),
    })
}

impl BenchReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<BenchReport, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_toml())
    }
}

pub fn series_csv(samples: &[RequestSample]) -> String {
    let mut ordered: Vec<&RequestSample> = samples.iter().collect();
    ordered.sort_by_key(|s| s.index);
    let mut out = String::with_capacity(32 * (samples.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in ordered {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{},{}",
            s.index, s.issued_at_ms, s.latency_ms, s.status, s.bytes
        );
    }
    out
}

pub fn emit_series(samples: &[RequestSample], path: &Path) -> io::Result<()> {
    fs::write(path, series_csv(samples))
}

/// Latency-versus-index scatter plot as a standalone SVG document.
pub fn series_svg(title: &str, samples: &[RequestSample]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let n = samples.iter().map(|s| s.index).max().map_or(1, |m| m + 1) as f64;
    let max_lat = samples
        .iter()
        .map(|s| s.latency_ms)
        .fold(0.0, f64::max)
        .max(1e-9);
    let x = |i: usize| PAD + (i as f64 + 0.5) / n * (W - 2.0 * PAD);
    let y = |l: f64| H - PAD - l / max_lat * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} V{b} H{r}" stroke="black" fill="none"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for tick in 0..=4 {
        let v = max_lat * f64::from(tick) / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD - 6.0,
            y(v) + 4.0,
            format_ms(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">request index</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">latency</text>"#,
        H / 2.0,
        H / 2.0
    );
    for s in samples {
        let color = if s.succeeded() { "#1f77b4" } else { "#d62728" };
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}"/>"#,
            x(s.index),
            y(s.latency_ms)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_ms(ms: f64) -> String {
    if ms >= 1000.0 {
        format!("{:.1}s", ms / 1000.0)
    } else {
        format!("{ms:.1}ms")
    }
}

pub fn emit_plot(title: &str, samples: &[RequestSample], path: &Path) -> io::Result<()> {
    fs::write(path, series_svg(title, samples))
}

/// Side-by-side summary of several reports, one row per scenario.
pub fn summary_table(reports: &[BenchReport]) -> String {
    let mut out = format!(
        "{:<10} {:>12} {:>12} {:>14} {:>9}\n",
        "scenario", "mean", "p99", "throughput", "ok"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<10} {:>12} {:>12} {:>11.2}MB/s {:>5}/{}",
            r.scenario,
            format_ms(r.mean_latency_ms),
            format_ms(r.p99_latency_ms),
            r.throughput / 1e6,
            r.success_count,
            r.requests
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(index: usize, latency_ms: f64, bytes: u64) -> RequestSample {
        RequestSample {
            index,
            issued_at_ms: index as f64 * 20.0,
            latency_ms,
            status: 200,
            bytes,
        }
    }

    #[test]
    fn constant_latency() {
        let s: Vec<_> = (0..250).map(|i| sample(i, 10.0, 0)).collect();
        let r = compute_report("c", &s).unwrap();
        assert_eq!(r.mean_latency_ms, 10.0);
        assert_eq!(r.p99_latency_ms, 10.0);
    }

    #[test]
    fn one_to_hundred() {
        let s: Vec<_> = (0..100).map(|i| sample(i, (100 - i) as f64, 0)).collect();
        assert_eq!(compute_report("x", &s).unwrap().p99_latency_ms, 99.0);
    }

    #[test]
    fn throughput_of_ten_mib_blobs() {
        // 250 blobs, first issued at 0, last completing at exactly 348.7 s
        let mut s: Vec<_> = (0..250).map(|i| sample(i, 1000.0, 10_485_760)).collect();
        s[249].latency_ms = 348_700.0 - s[249].issued_at_ms;
        let r = compute_report("blob10m", &s).unwrap();
        let expected = 250.0 * 10_485_760.0 / 348.7;
        assert!((r.throughput - expected).abs() < 1e-6 * expected);
        assert!((r.throughput - 7.52e6).abs() / 7.52e6 < 0.005);
    }

    #[test]
    fn failures_excluded_from_latency() {
        let mut s = vec![sample(0, 10.0, 5), sample(1, 30.0, 5)];
        s.push(RequestSample {
            status: 0,
            latency_ms: 120_000.0,
            bytes: 0,
            ..sample(2, 0.0, 0)
        });
        let r = compute_report("f", &s).unwrap();
        assert_eq!(r.mean_latency_ms, 20.0);
        assert_eq!(r.success_count, 2);
        assert_eq!(r.requests, 3);
        let all_failed: Vec<_> = s
            .iter()
            .map(|x| RequestSample { status: 0, ..*x })
            .collect();
        assert!(matches!(
            compute_report("f", &all_failed),
            Err(BenchError::AllFailed(3))
        ));
        assert!(matches!(
            compute_report("f", &[]),
            Err(BenchError::NoSamples)
        ));
    }

    #[test]
    fn csv_layout() {
        let s = vec![sample(2, 1.5, 9), sample(0, 10.0, 0), sample(1, 2.25, 3)];
        let csv = series_csv(&s);
        assert_eq!(
            csv,
            "index,issued_at_ms,latency_ms,status,bytes\n0,0.000,10.000,200,0\n1,20.000,2.250,200,3\n2,40.000,1.500,200,9\n"
        );
        assert_eq!(csv.lines().count(), 4);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        emit_series(&s, &a).unwrap();
        emit_series(&s, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn report_toml_roundtrip() {
        let s: Vec<_> = (0..10).map(|i| sample(i, i as f64 + 1.0, 100)).collect();
        let r = compute_report("rt", &s).unwrap();
        let back = BenchReport::from_toml(&r.to_toml()).unwrap();
        assert_eq!(
            back,
            BenchReport {
                samples: vec![],
                ..r
            }
        );
    }

    #[test]
    fn svg_has_a_point_per_sample() {
        let s: Vec<_> = (0..5).map(|i| sample(i, 1.0 + i as f64, 0)).collect();
        let svg = series_svg("t", &s);
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(svg.starts_with("<svg"));
    }

    proptest! {
        #[test]
        fn p99_matches_sort_and_index(lat in prop::collection::vec(0.0f64..1e6, 1..1000)) {
            let s: Vec<_> = lat.iter().enumerate().map(|(i, l)| sample(i, *l, 0)).collect();
            let r = compute_report("p", &s).unwrap();
            let mut sorted = lat.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // integer ceil(99n/100) - 1, independent of float rounding
            let idx = (99 * sorted.len()).div_ceil(100) - 1;
            prop_assert_eq!(r.p99_latency_ms, sorted[idx]);
        }
    }
}
