//! Hand-written SVG line charts.

use std::fmt::{self, Write as _};

/// Malformed plot input; maps to its own exit code.
#[derive(Debug)]
pub struct PlotInputError(pub String);

impl fmt::Display for PlotInputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad plot input: {}", self.0)
    }
}

impl std::error::Error for PlotInputError {}

pub const METRICS: [&str; 3] = ["acc", "f1", "auc"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Per-metric series parsed from a history or sweep CSV, plus the x label.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub x_label: &'static str,
    pub metrics: Vec<(&'static str, Vec<Series>)>,
}

pub fn parse_csv(text: &str) -> Result<PlotData, PlotInputError> {
    let bad = |m: String| PlotInputError(m);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let (x_label, x_col, split_col) = match cols.as_slice() {
        ["epoch", "split", "loss", "acc", "f1", "auc"] => ("epoch", 0, Some(1)),
        ["axis_value", "acc", "f1", "auc"] => ("axis value", 0, None),
        _ => return Err(bad(format!("unrecognised header `{}`", cols.join(",")))),
    };
    let col = |name: &str| cols.iter().position(|c| *c == name).expect("header checked");
    let mut metrics: Vec<(&'static str, Vec<Series>)> = METRICS.iter().map(|&m| (m, Vec::new())).collect();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let num = |j: usize| -> Result<Option<f64>, PlotInputError> {
            let s = rec.get(j).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s.parse().map_err(|_| bad(format!("line {line}: `{s}` is not a number")))?;
            if v.is_finite() {
                Ok(Some(v))
            } else {
                Err(bad(format!("line {line}: non-finite value `{s}`")))
            }
        };
        for j in (0..cols.len()).filter(|&j| Some(j) != split_col) {
            num(j)?;
        }
        let x = num(x_col)?.ok_or_else(|| bad(format!("line {line}: missing x value")))?;
        let series = split_col.map(|j| rec.get(j).unwrap_or("").to_string()).unwrap_or_default();
        for (name, list) in metrics.iter_mut() {
            let Some(y) = num(col(name))? else { continue };
            match list.iter_mut().find(|s| s.name == series) {
                Some(s) => s.points.push((x, y)),
                None => list.push(Series { name: series.clone(), points: vec![(x, y)] }),
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("no data rows".into()));
    }
    Ok(PlotData { x_label, metrics })
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Chart with the metric on y in [0, 1] and `x_label` on x.
pub fn render_svg(title: &str, x_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.2}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            py + 4.0
        );
    }
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}">{}</text>"#,
            sx(x),
            TOP + ph + 16.0,
            fmt_num(x)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        esc(x_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        if !ser.name.is_empty() {
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{ly:.2}" text-anchor="end" fill="{color}">{}</text>"#,
                LEFT + pw - 8.0,
                esc(&ser.name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
