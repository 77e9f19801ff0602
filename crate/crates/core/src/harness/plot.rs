use std::fmt::Write as _;
use std::path::Path;

use super::run::{read_curve_csv, CSV_COLUMNS};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Line chart of `column` against iteration, one polyline per file.
pub fn render_svg(csv_paths: &[&Path], column: &str) -> Result<String> {
    if csv_paths.is_empty() {
        return Err(Error::invalid("plot needs at least one csv file"));
    }
    let col = CSV_COLUMNS
        .iter()
        .position(|c| *c == column && *c != "iteration")
        .ok_or_else(|| Error::invalid(format!("cannot plot column `{column}`")))?;
    let mut series = Vec::new();
    for p in csv_paths {
        let curve = read_curve_csv(p)?;
        let pts: Vec<(f64, f64)> = curve
            .records
            .iter()
            .map(|r| {
                let y = match col {
                    1 => r.true_env_return,
                    2 => r.model_estimated_return,
                    3 => r.kl_to_behavior,
                    _ => r.mean_sar,
                };
                (r.iteration as f64, y)
            })
            .collect();
        let label = p
            .file_stem()
            .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        series.push((label, pts));
    }

    let all = series.iter().flat_map(|(_, pts)| pts.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        if y.is_finite() {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">iteration</text>"#,
        (l + r) / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {:.1})">{column}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0
    );
    for (v, y) in [(y0, b), (y1, t)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{v:.3}</text>"#,
            l - 4.0,
            y + 3.0
        );
    }
    for (v, x) in [(x0, l), (x1, r)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{v:.0}</text>"#,
            b + 14.0
        );
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{color}">{}</text>"#,
            r - 150.0,
            t + 12.0 * (i as f64 + 1.0),
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn plot(csv_paths: &[&Path], out_svg: &Path, column: &str) -> Result<()> {
    let svg = render_svg(csv_paths, column)?;
    std::fs::write(out_svg, svg).map_err(|e| Error::io(out_svg, e))
}
