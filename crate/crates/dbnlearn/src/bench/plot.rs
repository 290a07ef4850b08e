//! Static vector-graphics summaries of an experiment: for every metric one
//! SVG of metric vs vertex count with a mean (solid) and worst-case
//! (dashed) line per sample count, plus the numeric CSV behind the image
//! so every plotted point is traceable to raw rows.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::bench::runner::AggregateRow;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 52.0;

const PALETTE: &[&str] = &[
    "#1b6ca8", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#16a085", "#7f8c8d",
];

/// Writes `plot_<metric>.svg` and `plot_<metric>.csv` for every metric
/// present in `aggs`; returns the SVG paths in metric order.
pub fn emit_plots(dir: &Path, ensemble: &str, aggs: &[AggregateRow]) -> Result<Vec<PathBuf>> {
    let metrics: Vec<String> = {
        let mut seen = BTreeSet::new();
        aggs.iter()
            .filter(|a| seen.insert(a.metric.clone()))
            .map(|a| a.metric.clone())
            .collect()
    };
    let mut paths = Vec::new();
    for metric in metrics {
        let points: Vec<&AggregateRow> = aggs.iter().filter(|a| a.metric == metric).collect();
        let svg_path = dir.join(format!("plot_{}.svg", metric));
        let csv_path = svg_path.with_extension("csv");
        write_plot_csv(&csv_path, &points)?;
        let svg = render_metric_svg(ensemble, &metric, &points)?;
        std::fs::write(&svg_path, svg)?;
        paths.push(svg_path);
    }
    Ok(paths)
}

fn write_plot_csv(path: &Path, points: &[&AggregateRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for p in points {
        writer
            .serialize(p)
            .map_err(|e| Error::Config(format!("plot data serialization: {}", e)))?;
    }
    writer.flush()?;
    Ok(())
}

struct Frame {
    d_min: f64,
    d_max: f64,
    v_min: f64,
    v_max: f64,
}

impl Frame {
    fn x(&self, d: f64) -> f64 {
        let span = (self.d_max - self.d_min).max(1e-12);
        MARGIN_LEFT + (d - self.d_min) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.v_max - self.v_min).max(1e-12);
        HEIGHT - MARGIN_BOTTOM - (v - self.v_min) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn render_metric_svg(ensemble: &str, metric: &str, points: &[&AggregateRow]) -> Result<String> {
    let finite: Vec<&&AggregateRow> = points
        .iter()
        .filter(|p| p.mean.is_finite() && p.worst.is_finite())
        .collect();
    if finite.is_empty() {
        return Err(Error::Config(format!(
            "no finite aggregate points to plot for metric {}",
            metric
        )));
    }
    let d_values: BTreeSet<usize> = finite.iter().map(|p| p.d).collect();
    let n_values: BTreeSet<usize> = finite.iter().map(|p| p.n).collect();
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for p in &finite {
        v_min = v_min.min(p.mean).min(p.worst);
        v_max = v_max.max(p.mean).max(p.worst);
    }
    if v_max - v_min < 1e-12 {
        // Flat series: open a visible band around the single value.
        let pad = v_max.abs().max(1.0) * 0.1;
        v_min -= pad;
        v_max += pad;
    } else {
        let pad = (v_max - v_min) * 0.08;
        v_min -= pad;
        v_max += pad;
    }
    let frame = Frame {
        d_min: *d_values.iter().next().unwrap() as f64,
        d_max: *d_values.iter().last().unwrap() as f64,
        v_min,
        v_max,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n",
        WIDTH, HEIGHT
    ));
    svg.push_str(&format!(
        "  <rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        WIDTH, HEIGHT
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{} vs d &#8212; {}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        escape(metric),
        escape(ensemble)
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         \x20 <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));

    // X ticks at every observed d.
    for &d in &d_values {
        let x = frame.x(d as f64);
        svg.push_str(&format!(
            "  <line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            d
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">d (vertices)</text>\n",
        (x0 + x1) / 2.0,
        y0 + 40.0
    ));

    // Y ticks on a rounded step.
    for v in y_ticks(frame.v_min, frame.v_max) {
        let y = frame.y(v);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "  <line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            x0 - 9.0,
            y + 4.0,
            format_tick(v)
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(metric)
    ));

    // One mean and one worst line per sample count.
    let mut legend_y = MARGIN_TOP + 8.0;
    for (color_idx, &n) in n_values.iter().enumerate() {
        let color = PALETTE[color_idx % PALETTE.len()];
        let mut series: Vec<&&AggregateRow> = finite.iter().copied().filter(|p| p.n == n).collect();
        series.sort_by_key(|p| p.d);
        for (dashed, label, value) in [
            (false, "mean", (|p: &AggregateRow| p.mean) as fn(&AggregateRow) -> f64),
            (true, "worst", |p: &AggregateRow| p.worst),
        ] {
            let pts: Vec<String> = series
                .iter()
                .map(|p| format!("{:.2},{:.2}", frame.x(p.d as f64), frame.y(value(p))))
                .collect();
            let dash = if dashed { " stroke-dasharray=\"7 4\"" } else { "" };
            svg.push_str(&format!(
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{}/>\n",
                pts.join(" "),
                color,
                dash
            ));
            for p in &series {
                svg.push_str(&format!(
                    "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                    frame.x(p.d as f64),
                    frame.y(value(p)),
                    color
                ));
            }
            // Legend entry.
            let lx = WIDTH - MARGIN_RIGHT + 16.0;
            svg.push_str(&format!(
                "  <line x1=\"{lx}\" y1=\"{legend_y}\" x2=\"{}\" y2=\"{legend_y}\" stroke=\"{}\" stroke-width=\"2\"{}/>\n",
                lx + 26.0,
                color,
                dash
            ));
            svg.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\">n={} {}</text>\n",
                lx + 32.0,
                legend_y + 4.0,
                n,
                label
            ));
            legend_y += 20.0;
        }
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Round tick step from the 1-2-5 ladder covering the range in ~5 steps.
fn y_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= 5.5)
        .unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut v = (lo / step).ceil() * step;
    while v <= hi + step * 1e-9 {
        // Snap near-zero accumulation error so labels read "0", not "1e-17".
        ticks.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    ticks
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 10000.0 || a < 0.01 {
        format!("{:.1e}", v)
    } else {
        let s = format!("{:.3}", v);
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
