use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const PLOT: (f64, f64, f64, f64) = (40.0, 30.0, 540.0, 480.0); // x, y, w, h
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn color(k: usize) -> String {
    match PALETTE.get(k) {
        Some(c) => (*c).to_string(),
        None => format!("hsl({}, 60%, 45%)", (k * 137) % 360),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot as an SVG document: one `<circle>` per point, legend in
/// sorted label order.
pub fn render_scatter(points: &[[f64; 2]], labels: &[String], title: &str) -> Result<String> {
    if points.len() != labels.len() {
        return Err(Error::invalid(format!("{} points but {} labels", points.len(), labels.len())));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("scatter points must be finite"));
    }
    let legend: Vec<&String> = labels.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let (px, py, pw, ph) = PLOT;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = |k: usize| if points.is_empty() || hi[k] <= lo[k] { 1.0 } else { hi[k] - lo[k] };
    let (sx, sy) = (span(0), span(1));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{px}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        svg,
        r##"<g class="axes"><line x1="{px}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333"/><line x1="{px}" y1="{py}" x2="{px}" y2="{y0}" stroke="#333"/></g>"##,
        y0 = py + ph,
        x1 = px + pw
    );
    let _ = writeln!(svg, r#"<g class="points">"#);
    for (p, l) in points.iter().zip(labels) {
        let k = legend.binary_search(&l).expect("label is in legend");
        let x = px + 5.0 + (pw - 10.0) * if points.is_empty() { 0.5 } else { (p[0] - lo[0]) / sx };
        let y = py + ph - 5.0 - (ph - 10.0) * (p[1] - lo[1]) / sy;
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}" fill-opacity="0.8"/>"#, color(k));
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g class="legend" font-family="sans-serif" font-size="11">"#);
    for (k, l) in legend.iter().enumerate() {
        let y = py + 14.0 * k as f64;
        let x = px + pw + 20.0;
        let _ = writeln!(svg, r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{}"/>"#, color(k));
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 14.0, y + 9.0, escape(l));
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_scatter(points: &[[f64; 2]], labels: &[String], path: &Path, title: &str) -> Result<()> {
    std::fs::write(path, render_scatter(points, labels, title)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_plot_is_valid_svg() {
        let svg = render_scatter(&[], &[], "empty").unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 0);
    }

    #[test]
    fn one_circle_per_point_and_deterministic() {
        let pts = [[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]];
        let labels: Vec<String> = ["a", "b", "a"].iter().map(|s| s.to_string()).collect();
        let a = render_scatter(&pts, &labels, "t").unwrap();
        assert_eq!(a.matches("<circle").count(), 3);
        assert_eq!(a.matches(r#"width="10""#).count(), 2);
        assert_eq!(a, render_scatter(&pts, &labels, "t").unwrap());
    }

    #[test]
    fn label_text_is_escaped() {
        let svg = render_scatter(&[[0.0, 0.0]], &["<x>".into()], "a & b").unwrap();
        assert!(svg.contains("&lt;x&gt;") && svg.contains("a &amp; b"));
    }
}
