//! Standalone SVG rendering. Coordinates are printed with fixed precision
//! so output is byte-stable.

use std::fmt::Write as _;
use std::path::Path;

use super::Projection2D;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::train::read_metrics_csv;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const SOURCE_COLOR: &str = "#d62728";
const TARGET_COLOR: &str = "#1f77b4";
const RUN_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn domain_color(d: Domain) -> &'static str {
    match d {
        Domain::Source => SOURCE_COLOR,
        Domain::Target => TARGET_COLOR,
    }
}

/// One marker element per point; shape cycles with the class.
fn marker(out: &mut String, x: f64, y: f64, class: Option<usize>, color: &str, attr: &str) {
    let r = 4.0;
    let _ = match class.map(|c| c % 5) {
        None | Some(0) => writeln!(
            out,
            r#"<circle {attr} cx="{x:.3}" cy="{y:.3}" r="{r}" fill="{color}"/>"#
        ),
        Some(1) => writeln!(
            out,
            r#"<rect {attr} x="{:.3}" y="{:.3}" width="{}" height="{}" fill="{color}"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        Some(2) => writeln!(
            out,
            r#"<polygon {attr} points="{x:.3},{:.3} {:.3},{:.3} {:.3},{:.3}" fill="{color}"/>"#,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        Some(3) => writeln!(
            out,
            r#"<polygon {attr} points="{x:.3},{:.3} {:.3},{y:.3} {x:.3},{:.3} {:.3},{y:.3}" fill="{color}"/>"#,
            y - r,
            x + r,
            y + r,
            x - r
        ),
        Some(_) => writeln!(
            out,
            r#"<path {attr} d="M{:.3},{:.3}L{:.3},{:.3}M{:.3},{:.3}L{:.3},{:.3}" stroke="{color}" stroke-width="2"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
    };
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#
    );
    s
}

fn legend_entry(s: &mut String, index: usize, color: &str, text: &str) {
    let y = MARGIN + 16.0 + 18.0 * index as f64;
    let x = WIDTH - MARGIN - 110.0;
    let _ = writeln!(
        s,
        r#"<g class="legend-entry"><rect x="{x}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{y:.1}" font-family="sans-serif" font-size="12">{text}</text></g>"#,
        y - 9.0,
        x + 16.0
    );
}

/// Scatter plot: source red, target blue, marker shape by class. The legend
/// lists only the domains present.
pub fn scatter_svg_string(
    points: &[(f64, f64)],
    domains: &[Domain],
    labels: &[Option<usize>],
    title: &str,
) -> Result<String> {
    if domains.len() != points.len() || labels.len() != points.len() {
        return Err(Error::Contract(format!(
            "{} points but {} tags",
            points.len(),
            domains.len()
        )));
    }
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1));
    let pad = 10.0;
    let sx = |x: f64| MARGIN + pad + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * (MARGIN + pad));
    let sy = |y: f64| HEIGHT - MARGIN - pad - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * (MARGIN + pad));
    let mut s = header(title);
    for ((&(x, y), &d), &l) in points.iter().zip(domains).zip(labels) {
        marker(
            &mut s,
            sx(x),
            sy(y),
            l,
            domain_color(d),
            &format!(r#"class="marker {d}""#),
        );
    }
    let mut entry = 0;
    for d in [Domain::Source, Domain::Target] {
        if domains.contains(&d) {
            legend_entry(&mut s, entry, domain_color(d), d.as_str());
            entry += 1;
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn scatter_svg(proj: &Projection2D, domains: &[Domain], labels: &[Option<usize>], out: &Path) -> Result<()> {
    let points: Vec<(f64, f64)> = (0..proj.len()).map(|i| proj.xy(i)).collect();
    let text = scatter_svg_string(&points, domains, labels, proj.method.name())?;
    std::fs::write(out, text).map_err(|e| Error::io(out, e))
}

/// Target accuracy against epoch, one polyline per run. NaN accuracies
/// (unlabeled target) are skipped.
pub fn convergence_svg(runs: &[(String, Vec<(usize, f64)>)]) -> String {
    let max_epoch = runs
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let sx = |e: f64| MARGIN + e / max_epoch * (WIDTH - 2.0 * MARGIN);
    let sy = |a: f64| HEIGHT - MARGIN - a * (HEIGHT - 2.0 * MARGIN);
    let mut s = header("target accuracy vs epoch");
    for (k, (name, pts)) in runs.iter().enumerate() {
        let color = RUN_COLORS[k % RUN_COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(e, a)| format!("{:.3},{:.3}", sx(e as f64), sy(a)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="run" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        legend_entry(&mut s, k, color, name);
    }
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.3}" font-family="sans-serif" font-size="10" text-anchor="end">{tick}</text>"#,
            MARGIN - 4.0,
            sy(tick) + 3.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads each metrics CSV and overlays their `tgt_acc` curves.
pub fn convergence_report(metrics: &[&Path], out: &Path) -> Result<()> {
    if metrics.is_empty() {
        return Err(Error::Config("report needs at least one metrics file".into()));
    }
    let mut runs = Vec::with_capacity(metrics.len());
    for path in metrics {
        let records = read_metrics_csv(path)?;
        let name = path
            .parent()
            .and_then(|p| p.file_name())
            .or_else(|| path.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        runs.push((name, records.iter().map(|r| (r.epoch, r.tgt_acc)).collect()));
    }
    std::fs::write(out, convergence_svg(&runs)).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_marker_per_point() {
        let s = scatter_svg_string(
            &[(0.0, 0.0), (1.0, 2.0)],
            &[Domain::Source, Domain::Target],
            &[Some(0), Some(3)],
            "t",
        )
        .unwrap();
        assert_eq!(s.matches(r#"class="marker"#).count(), 2);
        assert_eq!(s.matches("legend-entry").count(), 2);
        assert!(s.contains(SOURCE_COLOR) && s.contains(TARGET_COLOR));
    }

    #[test]
    fn all_source_has_one_legend_entry() {
        let s = scatter_svg_string(
            &[(0.0, 0.0), (1.0, 2.0), (3.0, 1.0)],
            &[Domain::Source; 3],
            &[None; 3],
            "t",
        )
        .unwrap();
        assert_eq!(s.matches("legend-entry").count(), 1);
        assert!(!s.contains(TARGET_COLOR));
    }

    #[test]
    fn polyline_has_one_vertex_per_epoch() {
        let pts: Vec<(usize, f64)> = (1..=7).map(|e| (e, e as f64 / 10.0)).collect();
        let s = convergence_svg(&[("a".into(), pts.clone()), ("b".into(), pts)]);
        let lines: Vec<&str> = s.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(lines.len(), 2);
        let verts = |l: &str| {
            l.split("points=\"")
                .nth(1)
                .unwrap()
                .split('"')
                .next()
                .unwrap()
                .split(' ')
                .count()
        };
        assert_eq!(verts(lines[0]), 7);
        let pts_attr = |l: &str| l.split('"').nth(3).unwrap().to_string();
        assert_eq!(pts_attr(lines[0]), pts_attr(lines[1]));
    }
}
