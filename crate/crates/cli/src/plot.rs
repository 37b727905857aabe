//! Minimal SVG line charts drawn from CSV columns. Charts only re-plot
//! values already written to disk.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = values
            .map(|v| if log { v.log10() } else { v })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
            (lo, hi) = (lo - pad, hi + pad);
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        (0..=4)
            .map(|k| {
                let u = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
                let v = if self.log { 10f64.powf(u) } else { u };
                (k as f64 / 4.0, format_tick(v))
            })
            .collect()
    }
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart. Points that cannot be placed (non-finite, or
/// non-positive on a log axis) are skipped.
pub fn render_svg(chart: &Chart) -> String {
    let usable = |x: f64, y: f64| {
        x.is_finite() && y.is_finite() && (!chart.log_x || x > 0.0) && (!chart.log_y || y > 0.0)
    };
    let series: Vec<Series> = chart
        .series
        .iter()
        .map(|s| Series {
            label: s.label.clone(),
            points: s.points.iter().copied().filter(|&(x, y)| usable(x, y)).collect(),
        })
        .collect();
    let all = || series.iter().flat_map(|s| s.points.iter());
    let xa = Axis::fit(all().map(|p| p.0), chart.log_x);
    let ya = Axis::fit(all().map(|p| p.1), chart.log_y);
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + pw * xa.unit(x);
    let py = |y: f64| MARGIN_TOP + ph * (1.0 - ya.unit(y));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (u, label) in xa.ticks() {
        let x = MARGIN_LEFT + pw * u;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{MARGIN_TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
            MARGIN_TOP + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            MARGIN_TOP + ph + 18.0
        );
    }
    for (u, label) in ya.ticks() {
        let y = MARGIN_TOP + ph * (1.0 - u);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            MARGIN_LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    let log_note = |log: bool| if log { " (log)" } else { "" };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&chart.x_label),
        log_note(chart.log_x)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">{}{}</text>"#,
        MARGIN_TOP + ph / 2.0,
        escape(&chart.y_label),
        log_note(chart.log_y)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if !ser.points.is_empty() {
            let pts: Vec<String> = ser
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
                pts.join(" ")
            );
            if ser.points.len() <= 40 {
                for &(x, y) in &ser.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                        px(x),
                        py(y)
                    );
                }
            }
        }
        let ly = MARGIN_TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads numeric columns `x` and `ys` of a headed CSV. Empty and unparsable
/// cells become NaN.
pub fn read_columns(csv_path: &Path, x: &str, ys: &[&str]) -> CliResult<Vec<Series>> {
    let mut r = csv::Reader::from_path(csv_path)?;
    let header = r.headers()?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::config(format!("{}: no column `{name}`", csv_path.display()))
        })
    };
    let xi = find(x)?;
    let yi: Vec<usize> = ys.iter().map(|c| find(c)).collect::<CliResult<_>>()?;
    let mut series: Vec<Series> = ys
        .iter()
        .map(|c| Series {
            label: c.to_string(),
            points: vec![],
        })
        .collect();
    let num = |s: Option<&str>| s.and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
    for rec in r.records() {
        let rec = rec?;
        let xv = num(rec.get(xi));
        for (ser, &c) in series.iter_mut().zip(&yi) {
            ser.points.push((xv, num(rec.get(c))));
        }
    }
    Ok(series)
}

/// Plots columns of `csv_path` against column `x` and writes the SVG.
pub fn plot_csv(csv_path: &Path, x: &str, ys: &[&str], svg_path: &Path, mut chart: Chart) -> CliResult<()> {
    chart.series = read_columns(csv_path, x, ys)?;
    std::fs::write(svg_path, render_svg(&chart)).map_err(|e| CliError::io(svg_path, e))
}

/// Columns of a headed CSV whose names start with `prefix`.
pub fn columns_with_prefix(csv_path: &Path, prefix: &str) -> CliResult<Vec<String>> {
    let mut r = csv::Reader::from_path(csv_path)?;
    Ok(r.headers()?
        .iter()
        .filter(|h| h.starts_with(prefix))
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(log: bool) -> Chart {
        Chart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: log,
            log_y: log,
            series: vec![Series {
                label: "s".into(),
                points: vec![(1.0, 2.0), (10.0, 0.5), (100.0, f64::NAN), (0.0, 1.0)],
            }],
        }
    }

    #[test]
    fn renders_valid_looking_svg() {
        let svg = render_svg(&chart(true));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        // NaN and the zero abscissa are dropped on log axes
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(render_svg(&chart(false)).matches("<circle").count(), 3);
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let mut c = chart(false);
        c.series[0].points = vec![(1.0, 3.0), (1.0, 3.0)];
        assert!(!render_svg(&c).contains("NaN"));
        c.series.clear();
        assert!(!render_svg(&c).contains("NaN"));
    }

    #[test]
    fn reads_columns_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "t,u,v\n1,2,\n2,4,5\n").unwrap();
        let s = read_columns(&p, "t", &["u", "v"]).unwrap();
        assert_eq!(s[0].points, vec![(1.0, 2.0), (2.0, 4.0)]);
        assert!(s[1].points[0].1.is_nan());
        assert!(read_columns(&p, "t", &["w"]).is_err());
        assert_eq!(columns_with_prefix(&p, "u").unwrap(), vec!["u".to_string()]);
    }
}
