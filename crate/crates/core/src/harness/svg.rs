//! Self-contained SVG learning-curve plots: loss against alpha, one series
//! per (loss, lambda, source); theory as lines, simulation as markers with
//! error bars. Output bytes are deterministic for fixed input.

use crate::harness::curve::{CurveRow, LearningCurve, Source};
use crate::harness::HarnessError;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

struct Series<'a> {
    label: String,
    source: Source,
    rows: Vec<&'a CurveRow>,
}

/// Writes the plot; fails on an empty curve or if no row has finite values.
pub fn emit_svg(curve: &LearningCurve, path: &Path) -> Result<(), HarnessError> {
    let svg = render_svg(curve)?;
    std::fs::write(path, svg)
        .map_err(|e| HarnessError::Curve(format!("cannot write {}: {e}", path.display())))
}

pub fn render_svg(curve: &LearningCurve) -> Result<String, HarnessError> {
    let finite: Vec<&CurveRow> = curve
        .rows
        .iter()
        .filter(|r| r.alpha.is_finite() && r.mean_loss.is_finite())
        .collect();
    if finite.is_empty() {
        return Err(HarnessError::EmptyCurve);
    }

    // Group into series by (loss, lambda, source), sorted.
    let mut series: Vec<Series> = Vec::new();
    for row in &finite {
        let label = format!(
            "{} λ={:.3e} {}",
            row.loss.name(),
            row.lambda,
            row.source.name()
        );
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.rows.push(row),
            None => series.push(Series {
                label,
                source: row.source,
                rows: vec![row],
            }),
        }
    }
    series.sort_by(|a, b| a.label.cmp(&b.label));
    for s in &mut series {
        s.rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    }

    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &finite {
        xmin = xmin.min(r.alpha);
        xmax = xmax.max(r.alpha);
        let lo = r.mean_loss - r.stderr_loss.unwrap_or(0.0);
        let hi = r.mean_loss + r.stderr_loss.unwrap_or(0.0);
        ymin = ymin.min(lo);
        ymax = ymax.max(hi);
    }
    if xmax == xmin {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymax == ymin {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let xpad = 0.05 * (xmax - xmin);
    let ypad = 0.08 * (ymax - ymin);
    let (xmin, xmax) = (xmin - xpad, xmax + xpad);
    let (ymin, ymax) = (ymin - ypad, ymax + ypad);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| MARGIN_L + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = move |y: f64| MARGIN_T + plot_h - (y - ymin) / (ymax - ymin) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    );
    // Axes.
    let _ = writeln!(
        out,
        r##"<g stroke="#333333" stroke-width="1" fill="none">
<line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/>
<line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/>
</g>"##,
        l = fmt(MARGIN_L),
        r = fmt(WIDTH - MARGIN_R),
        t = fmt(MARGIN_T),
        b = fmt(HEIGHT - MARGIN_B),
    );
    // Ticks: 6 per axis.
    for k in 0..=5 {
        let fx = xmin + (xmax - xmin) * k as f64 / 5.0;
        let px = sx(fx);
        let _ = writeln!(
            out,
            r##"<line x1="{x}" y1="{b}" x2="{x}" y2="{b2}" stroke="#333333"/>
<text x="{x}" y="{ty}" font-family="monospace" font-size="11" text-anchor="middle">{v}</text>"##,
            x = fmt(px),
            b = fmt(HEIGHT - MARGIN_B),
            b2 = fmt(HEIGHT - MARGIN_B + 5.0),
            ty = fmt(HEIGHT - MARGIN_B + 18.0),
            v = format_args!("{fx:.2}"),
        );
        let fy = ymin + (ymax - ymin) * k as f64 / 5.0;
        let py = sy(fy);
        let _ = writeln!(
            out,
            r##"<line x1="{l2}" y1="{y}" x2="{l}" y2="{y}" stroke="#333333"/>
<text x="{tx}" y="{ty}" font-family="monospace" font-size="11" text-anchor="end">{v}</text>"##,
            l = fmt(MARGIN_L),
            l2 = fmt(MARGIN_L - 5.0),
            y = fmt(py),
            tx = fmt(MARGIN_L - 8.0),
            ty = fmt(py + 4.0),
            v = format_args!("{fy:.3}"),
        );
    }
    // Axis labels.
    let _ = writeln!(
        out,
        r##"<text x="{x}" y="{y}" font-family="monospace" font-size="13" text-anchor="middle">alpha = n/p</text>"##,
        x = fmt(MARGIN_L + plot_w / 2.0),
        y = fmt(HEIGHT - 12.0),
    );
    let _ = writeln!(
        out,
        r##"<text x="16" y="{y}" font-family="monospace" font-size="13" text-anchor="middle" transform="rotate(-90 16 {y})">training loss</text>"##,
        y = fmt(MARGIN_T + plot_h / 2.0),
    );

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        match s.source {
            Source::Theory => {
                let pts: Vec<String> = s
                    .rows
                    .iter()
                    .map(|r| format!("{},{}", fmt(sx(r.alpha)), fmt(sy(r.mean_loss))))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            Source::Simulation => {
                for r in &s.rows {
                    let (cx, cy) = (sx(r.alpha), sy(r.mean_loss));
                    if let Some(se) = r.stderr_loss {
                        let (y1, y2) = (sy(r.mean_loss - se), sy(r.mean_loss + se));
                        let _ = writeln!(
                            out,
                            r#"<line x1="{x}" y1="{y1}" x2="{x}" y2="{y2}" stroke="{color}" stroke-width="1.5"/>
<line x1="{xl}" y1="{y1}" x2="{xr}" y2="{y1}" stroke="{color}" stroke-width="1.5"/>
<line x1="{xl}" y1="{y2}" x2="{xr}" y2="{y2}" stroke="{color}" stroke-width="1.5"/>"#,
                            x = fmt(cx),
                            xl = fmt(cx - 4.0),
                            xr = fmt(cx + 4.0),
                            y1 = fmt(y1),
                            y2 = fmt(y2),
                        );
                    }
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{x}" cy="{y}" r="4" fill="{color}"/>"#,
                        x = fmt(cx),
                        y = fmt(cy),
                    );
                }
            }
        }
        // Legend entry.
        let ly = MARGIN_T + 14.0 + 18.0 * idx as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{x1}" y1="{y}" x2="{x2}" y2="{y}" stroke="{color}" stroke-width="3"/>
<text x="{tx}" y="{ty}" font-family="monospace" font-size="11">{label}</text>"#,
            x1 = fmt(WIDTH - MARGIN_R + 10.0),
            x2 = fmt(WIDTH - MARGIN_R + 30.0),
            y = fmt(ly),
            tx = fmt(WIDTH - MARGIN_R + 36.0),
            ty = fmt(ly + 4.0),
            label = s.label,
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
