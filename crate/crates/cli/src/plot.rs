//! Minimal SVG line charts for the sweep outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::HarnessError;
use crate::sweep::{REGION_HEADER, SWEEP_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(series: &[Series], fixed: Option<(f64, f64, f64, f64)>) -> (f64, f64, f64, f64) {
    if let Some(b) = fixed {
        return b;
    }
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let x0 = x0.min(0.0);
    let y0 = y0.min(0.0);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let y1 = if y1 > y0 { y1 * 1.05 } else { y0 + 1.0 };
    (x0, x1, y0, y1)
}

/// Render a line chart. `fixed` pins the axes to `(x0, x1, y0, y1)`.
pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    fixed: Option<(f64, f64, f64, f64)>,
) -> String {
    let (x0, x1, y0, y1) = bounds(series, fixed);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            sx(fx),
            H - PAD + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !ser.points.is_empty() {
            let pts: Vec<String> = ser
                .points
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for &(x, y) in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(x), sy(y));
            }
        }
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            W - PAD - 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 10.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    PolicySweep,
    Region,
}

impl std::str::FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "policy-sweep" | "policy_sweep" => Ok(PlotKind::PolicySweep),
            "region" | "feasible-region" => Ok(PlotKind::Region),
            other => Err(format!("unknown plot kind {other:?}")),
        }
    }
}

fn records(text: &str, header: &str) -> Result<Vec<csv::StringRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let expected: Vec<&str> = header.split(',').collect();
    let got = rdr.headers()?.clone();
    if got.is_empty() {
        return Ok(Vec::new());
    }
    if got.iter().collect::<Vec<_>>() != expected {
        return Err(HarnessError::Schema(format!(
            "header {:?} does not match {header:?}",
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(rdr.records().collect::<Result<_, _>>()?)
}

fn num(rec: &csv::StringRecord, i: usize) -> Result<f64, HarnessError> {
    let f = rec.get(i).unwrap_or("");
    f.parse::<f64>()
        .map_err(|_| HarnessError::Schema(format!("field {i} value {f:?} is not a number")))
}

/// Delay against throughput, one series per policy and skew.
pub fn plot_policy_sweep(text: &str) -> Result<(String, bool), HarnessError> {
    let recs = records(text, SWEEP_HEADER)?;
    let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &recs {
        let thr = num(r, 3)?;
        let delay = num(r, 4)?;
        let pts = series
            .entry((r[0].to_owned(), r[1].to_owned()))
            .or_default();
        if delay.is_finite() {
            pts.push((thr, delay));
        }
    }
    let series: Vec<Series> = series
        .into_iter()
        .map(|((p, g), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: format!("{p}, gamma={g}"),
                points,
            }
        })
        .collect();
    let svg = line_chart("Delay vs throughput", "Throughput (fps)", "Mean delay (ms)", &series, None);
    Ok((svg, recs.is_empty()))
}

/// Border of the feasible region, one series per storage fraction.
pub fn plot_region(text: &str) -> Result<(String, bool), HarnessError> {
    let recs = records(text, REGION_HEADER)?;
    let mut best: BTreeMap<String, BTreeMap<u64, Option<f64>>> = BTreeMap::new();
    for r in &recs {
        let b1 = num(r, 1)?;
        let b2 = num(r, 2)?;
        let feasible = num(r, 3)? != 0.0;
        let slot = best.entry(r[0].to_owned()).or_default().entry(b1.to_bits()).or_insert(None);
        if feasible && slot.is_none_or(|b| b2 < b) {
            *slot = Some(b2);
        }
    }
    let series: Vec<Series> = best
        .into_iter()
        .map(|(b3, border)| {
            let mut points: Vec<(f64, f64)> = border
                .into_iter()
                .filter_map(|(b1, b2)| b2.map(|b2| (f64::from_bits(b1), b2)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: format!("beta3={b3}"),
                points,
            }
        })
        .collect();
    let svg = line_chart(
        "Feasible region border",
        "beta1 (user processing fraction)",
        "beta2 (user bandwidth fraction)",
        &series,
        Some((0.0, 1.0, 0.0, 1.0)),
    );
    Ok((svg, recs.is_empty()))
}

/// Render `csv_path` into `out_path`. An empty table gives empty axes and a warning.
pub fn emit_plot(csv_path: &Path, kind: PlotKind, out_path: &Path) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(csv_path).map_err(|source| HarnessError::Missing {
        path: csv_path.to_owned(),
        source,
    })?;
    let (svg, empty) = match kind {
        PlotKind::PolicySweep => plot_policy_sweep(&text)?,
        PlotKind::Region => plot_region(&text)?,
    };
    if empty {
        eprintln!("warning: {} has no data rows", csv_path.display());
    }
    std::fs::write(out_path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_chart_has_one_line_per_series() {
        let csv = format!(
            "# config_sha256=x\n{SWEEP_HEADER}\ncentralized,1,10,10,12\ncentralized,1,20,20,13\nmec,1,10,10,inf\n"
        );
        let (svg, empty) = plot_policy_sweep(&csv).unwrap();
        assert!(!empty);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("Throughput (fps)") && svg.contains("Mean delay (ms)"));
        assert!(svg.contains("mec, gamma=1"));
    }

    #[test]
    fn region_border_takes_the_lowest_feasible_beta2() {
        let csv = format!(
            "{REGION_HEADER}\n0.5,1,0,0,1,,\n0.5,1,0.5,1,1,60,10\n0.5,1,1,1,0,,\n0.5,0,1,0,1,1,inf\n"
        );
        let (svg, _) = plot_region(&csv).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn wrong_header_is_a_schema_error() {
        let err = plot_policy_sweep("a,b\n1,2\n").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(plot_region(&format!("{SWEEP_HEADER}\n")).is_err());
    }

    #[test]
    fn empty_input_gives_empty_axes() {
        let (svg, empty) = plot_policy_sweep("").unwrap();
        assert!(empty);
        assert!(svg.contains("<svg") && !svg.contains("<polyline"));
        let (_, empty) = plot_region(&format!("# x\n{REGION_HEADER}\n")).unwrap();
        assert!(empty);
    }
}
