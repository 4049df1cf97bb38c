//! CSV tables and static SVG line charts for finished runs.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::coefficient_of_variation;
use crate::types::{BiasCurve, ImportanceCurve};

/// Categorical palette, one color per segment, cycled past ten.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub const CURVES_CSV_HEADER: &str = "segment,position,accuracy,cv";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Long-format curve table, k-major, six decimals. A segment whose CV is
/// undefined gets an empty `cv` field.
pub fn write_curves_csv(curves: &[BiasCurve], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{CURVES_CSV_HEADER}")?;
    let mut sorted: Vec<&BiasCurve> = curves.iter().collect();
    sorted.sort_by_key(|c| c.segment_index);
    for c in sorted {
        let cv = c.cv.map(|v| format!("{v:.6}")).unwrap_or_default();
        for (j, a) in c.accuracies.iter().enumerate() {
            writeln!(w, "{},{j},{a:.6},{cv}", c.segment_index)?;
        }
    }
    Ok(())
}

pub fn emit_curves_csv(curves: &[BiasCurve], path: &Path) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::invalid("no curves to write"));
    }
    let mut buf = Vec::new();
    write_curves_csv(curves, &mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

#[derive(Deserialize)]
struct CurveRow {
    segment: usize,
    position: usize,
    accuracy: f64,
    cv: Option<f64>,
}

/// Reads a table written by [`write_curves_csv`] back into curves.
///
/// The CSV carries no metric id, so `metric_id` comes from the caller;
/// `beginning_biased` is recomputed.
pub fn read_curves_csv(r: impl Read, metric_id: &str) -> Result<Vec<BiasCurve>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CURVES_CSV_HEADER {
        return Err(Error::invalid(format!("unexpected curves header {header:?}")));
    }
    let mut curves: Vec<BiasCurve> = Vec::new();
    for (n, row) in rdr.deserialize::<CurveRow>().enumerate() {
        let row = row?;
        if curves.last().is_none_or(|c| c.segment_index != row.segment) {
            if curves.iter().any(|c| c.segment_index == row.segment) {
                return Err(Error::invalid(format!("segment {} is not contiguous (row {})", row.segment, n + 2)));
            }
            curves.push(BiasCurve {
                segment_index: row.segment,
                accuracies: Vec::new(),
                cv: row.cv,
                metric_id: metric_id.to_owned(),
                beginning_biased: false,
            });
        }
        let c = curves.last_mut().expect("pushed above");
        if row.position != c.accuracies.len() {
            return Err(Error::invalid(format!("position {} out of order (row {})", row.position, n + 2)));
        }
        c.accuracies.push(row.accuracy);
    }
    for c in &mut curves {
        let max = c.accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        c.beginning_biased = c.accuracies.first() == Some(&max);
    }
    Ok(curves)
}

/// Per-segment accuracies at their anchors plus the resampled curve:
/// `series,index,x,accuracy` with `series` one of `segment`, `interpolated`.
pub fn write_importance_csv(curve: &ImportanceCurve, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "series,index,x,accuracy")?;
    let n = curve.per_segment.len() as f64;
    for (k, a) in curve.per_segment.iter().enumerate() {
        writeln!(w, "segment,{k},{:.6},{a:.6}", (k as f64 + 0.5) / n)?;
    }
    let m = curve.interpolated.len();
    for (i, a) in curve.interpolated.iter().enumerate() {
        let x = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.0 };
        writeln!(w, "interpolated,{i},{x:.6},{a:.6}")?;
    }
    Ok(())
}

pub fn emit_importance_csv(curve: &ImportanceCurve, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_importance_csv(curve, &mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

/// Recomputes every CV from its accuracies; `false` when any disagrees.
pub fn cvs_consistent(curves: &[BiasCurve], tol: f64) -> bool {
    curves.iter().all(|c| match (c.cv, coefficient_of_variation(&c.accuracies)) {
        (Some(cv), Ok(want)) => (cv - want).abs() <= tol,
        (None, Err(_)) => true,
        _ => false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Draw a dot at every point.
    pub markers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Integer tick labels on the x axis (positions) instead of decimals.
    pub integer_x: bool,
}

/// One polyline per segment, positions on x.
pub fn bias_chart(curves: &[BiasCurve], title: &str) -> LineChart {
    LineChart {
        title: title.to_owned(),
        x_label: "position".into(),
        y_label: "accuracy".into(),
        series: curves
            .iter()
            .map(|c| Series {
                label: format!("segment {}", c.segment_index),
                points: c.accuracies.iter().enumerate().map(|(j, &a)| (j as f64, a)).collect(),
                markers: true,
            })
            .collect(),
        integer_x: true,
    }
}

/// The resampled importance curve with per-segment anchor points.
pub fn importance_chart(curve: &ImportanceCurve, title: &str) -> LineChart {
    let n = curve.per_segment.len() as f64;
    let m = curve.interpolated.len().max(2) as f64;
    LineChart {
        title: title.to_owned(),
        x_label: "position".into(),
        y_label: "accuracy".into(),
        series: vec![
            Series {
                label: "interpolated".into(),
                points: curve
                    .interpolated
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| (i as f64 / (m - 1.0), a))
                    .collect(),
                markers: false,
            },
            Series {
                label: "segments".into(),
                points: curve
                    .per_segment
                    .iter()
                    .enumerate()
                    .map(|(k, &a)| ((k as f64 + 0.5) / n, a))
                    .collect(),
                markers: true,
            },
        ],
        integer_x: false,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 136.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;

/// Renders a self-contained SVG 1.1 document. The y axis spans
/// `[0, 1.05 * max]` (or `[0, 1]` when every value is zero).
pub fn render_svg(chart: &LineChart) -> Result<String> {
    let points = chart.series.iter().flat_map(|s| &s.points);
    if chart.series.is_empty() || points.clone().next().is_none() {
        return Err(Error::invalid("chart has no data"));
    }
    if points.clone().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("chart data must be finite"));
    }
    let y_max = match points.clone().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) {
        m if m > 0.0 => m * 1.05,
        _ => 1.0,
    };
    let x_min = points.clone().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut x_max = points.map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| TOP + plot_h - y / y_max * plot_h;

    let mut s = String::new();
    let w = &mut s;
    // writing to a String cannot fail
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&chart.title)
    );

    // axes
    let _ = writeln!(
        w,
        r#"<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/></g>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h,
        TOP + plot_h
    );
    let x_ticks: Vec<f64> = if chart.integer_x {
        let (lo, hi) = (x_min.ceil() as i64, x_max.floor() as i64);
        let step = ((hi - lo) / 10 + 1).max(1);
        (lo..=hi).step_by(step as usize).map(|v| v as f64).collect()
    } else {
        (0..=5).map(|i| x_min + (x_max - x_min) * f64::from(i) / 5.0).collect()
    };
    for x in x_ticks {
        let label = if chart.integer_x { format!("{x:.0}") } else { format!("{x:.2}") };
        let _ = writeln!(
            w,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{label}</text>"#,
            sx(x),
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0
        );
    }
    for i in 0..=5 {
        let y = y_max * f64::from(i) / 5.0;
        let _ = writeln!(
            w,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="#dddddd"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{y:.3}</text>"##,
            LEFT,
            sy(y),
            LEFT + plot_w,
            LEFT - 6.0,
            sy(y) + 4.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
        TOP + plot_h / 2.0,
        escape(&chart.y_label)
    );

    for (i, series) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        if series.markers {
            for &(x, y) in &series.points {
                let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
            }
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            w,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

pub fn emit_svg_lines(chart: &LineChart, path: &Path) -> Result<()> {
    write_file(path, render_svg(chart)?.as_bytes())
}
