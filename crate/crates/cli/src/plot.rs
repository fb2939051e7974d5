//! Plain-text SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use sormq::{Error, Result};

use crate::output::CsvTable;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 60.0;
/// Series longer than this are thinned by a fixed stride.
pub const MAX_POINTS: usize = 2000;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn legend_label(t: &CsvTable, field: &str, multi: bool) -> String {
    let algorithm = t.meta.get("algorithm").cloned().unwrap_or_else(|| {
        t.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let w = t
        .meta
        .get("w")
        .cloned()
        .or_else(|| t.column("w").ok().and_then(|c| c.first().map(|w| w.to_string())));
    let mut label = match w {
        Some(w) => format!("{algorithm} (w={w})"),
        None => algorithm,
    };
    if multi {
        label += &format!(" {field}");
    }
    label
}

/// One series per `(file, field)` pair.
pub fn load_series(paths: &[&Path], x: &str, fields: &[&str]) -> Result<Vec<Series>> {
    let mut out = Vec::new();
    for path in paths {
        let t = CsvTable::read(path)?;
        let xs = t.column(x)?;
        for field in fields {
            let ys = t.column(field)?;
            let points: Vec<(f64, f64)> = xs
                .iter()
                .zip(&ys)
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(a, b)| (*a, *b))
                .collect();
            if points.is_empty() {
                return Err(Error::EmptySeries(format!("{field} in {}", path.display())));
            }
            out.push(Series {
                label: legend_label(&t, field, fields.len() > 1),
                points,
            });
        }
    }
    Ok(out)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-3..1e5).contains(&a) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        (lo - pad, hi + pad)
    }
}

/// Renders the series into an SVG document.
pub fn render_svg(series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() {
        return Err(Error::EmptySeries("nothing to plot".into()));
    }
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(all().map(|p| p.1));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick(xv));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let stride = series.points.len().div_ceil(MAX_POINTS);
        let mut pts: Vec<(f64, f64)> = series.points.iter().step_by(stride).copied().collect();
        if let Some(last) = series.points.last() {
            if pts.last() != Some(last) {
                pts.push(*last);
            }
        }
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Plots `fields` against `x` for every CSV and writes the SVG to `out`.
pub fn emit_plot(paths: &[&Path], x: &str, fields: &[&str], out: &Path) -> Result<()> {
    let series = load_series(paths, x, fields)?;
    let svg = render_svg(&series, x, &fields.join(", "))?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter_map(|l| l.split("points=\"").nth(1))
            .map(|rest| {
                rest.split('"')
                    .next()
                    .unwrap()
                    .split(' ')
                    .map(|p| {
                        let (a, b) = p.split_once(',').unwrap();
                        (a.parse().unwrap(), b.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_series_is_horizontal_across_range() {
        let s = Series {
            label: "c".into(),
            points: (0..5).map(|i| (i as f64 * 10.0, 3.0)).collect(),
        };
        let svg = render_svg(&[s], "step", "v").unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        let pts = &lines[0];
        assert!(pts.iter().all(|p| p.1 == pts[0].1));
        assert_eq!(pts.first().unwrap().0, LEFT);
        assert_eq!(pts.last().unwrap().0, WIDTH - RIGHT);
    }

    #[test]
    fn two_series_two_legend_entries() {
        let mk = |l: &str, k: f64| Series {
            label: l.into(),
            points: (0..4).map(|i| (i as f64, k * i as f64)).collect(),
        };
        let svg = render_svg(&[mk("a", 1.0), mk("b <w>", 2.0)], "x", "y").unwrap();
        assert_eq!(polylines(&svg).len(), 2);
        assert!(svg.contains(">a</text>") && svg.contains(">b &lt;w&gt;</text>"));
        assert!(!svg.contains("<image"));
    }

    #[test]
    fn long_series_are_thinned() {
        let s = Series {
            label: "l".into(),
            points: (0..10_001).map(|i| (i as f64, (i as f64).sin())).collect(),
        };
        let pts = &polylines(&render_svg(&[s], "x", "y").unwrap())[0];
        assert!(pts.len() <= MAX_POINTS + 1);
        assert_eq!(pts.last().unwrap().0, WIDTH - RIGHT);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(render_svg(&[], "x", "y"), Err(Error::EmptySeries(_))));
    }
}
