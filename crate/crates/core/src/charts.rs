//! Deterministic SVG bar charts.
//!
//! Each chart shows one metric. Bars are grouped by workload (audio, image,
//! scalar, custom) and coloured by series, one series per platform profile,
//! in order of first appearance. Output depends only on the reports, so
//! identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::RunReport;
use crate::workloads::WorkloadKind;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no reports to chart")]
pub struct EmptyInput;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chart {
    pub file_name: String,
    pub svg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartMetric {
    EndToEnd,
    Flight,
    Compute,
    Residence,
    Payload,
    Cpu,
    Ram,
}

impl ChartMetric {
    pub const ALL: [ChartMetric; 7] = [
        Self::EndToEnd,
        Self::Flight,
        Self::Compute,
        Self::Residence,
        Self::Payload,
        Self::Cpu,
        Self::Ram,
    ];

    pub fn stem(self) -> &'static str {
        match self {
            Self::EndToEnd => "e2e_latency",
            Self::Flight => "time_in_flight",
            Self::Compute => "compute_time",
            Self::Residence => "hub_residence",
            Self::Payload => "payload_size",
            Self::Cpu => "cpu_utilization",
            Self::Ram => "ram_utilization",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::EndToEnd => "Avg. end-to-end latency (s)",
            Self::Flight => "Avg. time in flight (ms)",
            Self::Compute => "Avg. compute time (s)",
            Self::Residence => "Avg. time in hub (s)",
            Self::Payload => "Avg. payload size (bytes)",
            Self::Cpu => "Avg. CPU utilization (%)",
            Self::Ram => "Avg. RAM usage (MB)",
        }
    }

    pub fn value(self, report: &RunReport) -> Option<f64> {
        let m = report.metrics.as_ref();
        match self {
            Self::EndToEnd => m.map(|m| m.e2e_ms.mean / 1000.0),
            Self::Flight => m.map(|m| m.flight_ms.mean),
            Self::Compute => m.map(|m| m.c_edge_ms.mean / 1000.0),
            Self::Residence => m.map(|m| m.residence_ms.mean / 1000.0),
            Self::Payload => m.map(|m| m.payload_bytes.mean),
            Self::Cpu => report.resources.map(|r| r.mean_cpu_pct),
            Self::Ram => report.resources.map(|r| r.mean_ram_mb),
        }
    }
}

const PALETTE: [&str; 6] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1",
];
const KINDS: [WorkloadKind; 4] = [
    WorkloadKind::Audio,
    WorkloadKind::Image,
    WorkloadKind::Scalar,
    WorkloadKind::Custom,
];

struct Layout {
    groups: Vec<WorkloadKind>,
    series: Vec<String>,
}

impl Layout {
    fn of(reports: &[RunReport]) -> Self {
        let groups = KINDS
            .into_iter()
            .filter(|k| reports.iter().any(|r| r.workload == *k))
            .collect();
        let mut series: Vec<String> = Vec::new();
        for r in reports {
            if !series.contains(&r.platform_profile) {
                series.push(r.platform_profile.clone());
            }
        }
        Self { groups, series }
    }

    fn find<'a>(
        &self,
        reports: &'a [RunReport],
        kind: WorkloadKind,
        series: &str,
    ) -> Option<&'a RunReport> {
        reports
            .iter()
            .find(|r| r.workload == kind && r.platform_profile == series)
    }
}

const BAR_W: f64 = 28.0;
const GROUP_GAP: f64 = 24.0;
const PLOT_H: f64 = 200.0;
const LEFT: f64 = 56.0;
const TOP: f64 = 36.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_value(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for step in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if step * mag >= v {
            return step * mag;
        }
    }
    10.0 * mag
}

fn panel_width(layout: &Layout) -> f64 {
    let groups = layout.groups.len().max(1) as f64;
    let series = layout.series.len().max(1) as f64;
    LEFT + groups * (series * BAR_W + GROUP_GAP) + GROUP_GAP + 120.0
}

const PANEL_H: f64 = TOP + PLOT_H + 48.0;

/// Draws one panel with its top-left corner at `(x0, y0)`.
fn panel(
    out: &mut String,
    reports: &[RunReport],
    layout: &Layout,
    metric: ChartMetric,
    x0: f64,
    y0: f64,
) {
    let values: Vec<Vec<Option<f64>>> = layout
        .groups
        .iter()
        .map(|&k| {
            layout
                .series
                .iter()
                .map(|s| layout.find(reports, k, s).and_then(|r| metric.value(r)))
                .collect()
        })
        .collect();
    let max = values
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b));
    let top = nice_max(max);
    let base_y = y0 + TOP + PLOT_H;
    let width = panel_width(layout);

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" font-weight="bold">{}</text>"#,
        x0 + LEFT,
        y0 + 20.0,
        xml_escape(metric.title())
    );
    for i in 0..=4 {
        let v = top * f64::from(i) / 4.0;
        let y = base_y - PLOT_H * f64::from(i) / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            x0 + LEFT,
            x0 + width - 120.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
            x0 + LEFT - 6.0,
            y + 3.0,
            fmt_value(v)
        );
    }
    let mut x = x0 + LEFT + GROUP_GAP;
    for (g, kind) in layout.groups.iter().enumerate() {
        let group_w = layout.series.len() as f64 * BAR_W;
        for (s, value) in values[g].iter().enumerate() {
            let bx = x + s as f64 * BAR_W;
            if let Some(v) = value {
                let h = PLOT_H * v / top;
                let _ = writeln!(
                    out,
                    r#"<rect x="{bx:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                    base_y - h,
                    BAR_W - 2.0,
                    PALETTE[s % PALETTE.len()]
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{}</text>"#,
                    bx + (BAR_W - 2.0) / 2.0,
                    base_y - h - 3.0,
                    fmt_value(*v)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            x + group_w / 2.0,
            base_y + 16.0,
            kind.as_str()
        );
        x += group_w + GROUP_GAP;
    }
    let _ = writeln!(
        out,
        r##"<line x1="{:.1}" y1="{base_y:.1}" x2="{:.1}" y2="{base_y:.1}" stroke="#333333"/>"##,
        x0 + LEFT,
        x0 + width - 120.0
    );
    if values.iter().flatten().all(Option::is_none) {
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" fill="#888888">no data</text>"##,
            x0 + LEFT + 8.0,
            y0 + TOP + PLOT_H / 2.0
        );
    }
    for (s, name) in layout.series.iter().enumerate() {
        let ly = y0 + TOP + 14.0 * s as f64;
        let lx = x0 + width - 110.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/>"#,
            PALETTE[s % PALETTE.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            lx + 14.0,
            ly + 9.0,
            xml_escape(name)
        );
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// One chart per metric across all reports.
pub fn emit_charts(reports: &[RunReport]) -> Result<Vec<Chart>, EmptyInput> {
    if reports.is_empty() {
        return Err(EmptyInput);
    }
    let layout = Layout::of(reports);
    Ok(ChartMetric::ALL
        .iter()
        .map(|&metric| {
            let mut body = String::new();
            panel(&mut body, reports, &layout, metric, 0.0, 0.0);
            Chart {
                file_name: format!("{}.svg", metric.stem()),
                svg: document(panel_width(&layout), PANEL_H, &body),
            }
        })
        .collect())
}

/// All metric panels for a single report, stacked in one figure.
pub fn report_figure(report: &RunReport) -> String {
    let reports = std::slice::from_ref(report);
    let layout = Layout::of(reports);
    let mut body = String::new();
    for (i, &metric) in ChartMetric::ALL.iter().enumerate() {
        panel(&mut body, reports, &layout, metric, 0.0, i as f64 * PANEL_H);
    }
    document(
        panel_width(&layout),
        PANEL_H * ChartMetric::ALL.len() as f64,
        &body,
    )
}

pub fn write_charts(charts: &[Chart], dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    charts
        .iter()
        .map(|c| {
            let path = dir.join(&c.file_name);
            fs::write(&path, &c.svg)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_rejected() {
        assert_eq!(emit_charts(&[]), Err(EmptyInput));
    }

    #[test]
    fn nice_axis_tops() {
        assert_eq!(nice_max(0.0), 1.0);
        assert_eq!(nice_max(87.0), 100.0);
        assert_eq!(nice_max(5.37), 10.0);
        assert_eq!(nice_max(1.79), 2.0);
        assert_eq!(nice_max(0.22), 0.25);
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(xml_escape("a<b>&\"c\""), "a&lt;b&gt;&amp;&quot;c&quot;");
    }
}
