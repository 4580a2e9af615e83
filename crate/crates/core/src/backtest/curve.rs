use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BacktestError, EquityCurve};

/// `date,equity,cumulative_return` with cumulative return as `equity − 1`.
pub fn write_curve_csv(curve: &EquityCurve, path: &Path) -> Result<(), BacktestError> {
    let mut out = String::from("date,equity,cumulative_return\n");
    for (d, e) in curve.dates.iter().zip(&curve.equity) {
        let _ = writeln!(out, "{d},{e:.10},{:.10}", e - 1.0);
    }
    fs::write(path, out)?;
    Ok(())
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Plots labelled equity curves on a shared date axis as a standalone SVG.
pub fn write_overlay_svg(
    curves: &[(String, &EquityCurve)],
    title: &str,
    path: &Path,
) -> Result<(), BacktestError> {
    let points = || curves.iter().flat_map(|(_, c)| c.dates.iter().zip(&c.equity));
    let (Some(d0), Some(d1)) = (
        points().map(|(d, _)| *d).min(),
        points().map(|(d, _)| *d).max(),
    ) else {
        return Err(BacktestError::EmptyOverlay);
    };
    let lo = points().map(|(_, e)| *e).fold(f64::INFINITY, f64::min);
    let hi = points().map(|(_, e)| *e).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.05, hi + 0.05) } else { (lo, hi) };
    let span_days = (d1 - d0).num_days().max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |d: chrono::NaiveDate| LEFT + (d - d0).num_days() as f64 / span_days * plot_w;
    let y = |e: f64| TOP + (hi - e) / (hi - lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let e = lo + (hi - lo) * i as f64 / 4.0;
        let yy = y(e);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:+.1}%</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            yy + 4.0,
            (e - 1.0) * 100.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{LEFT}" y="{:.2}">{d0}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{d1}</text>"#,
        HEIGHT - BOTTOM + 18.0,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM + 18.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .dates
            .iter()
            .zip(&curve.equity)
            .map(|(d, e)| format!("{:.2},{:.2}", x(*d), y(*e)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + 10.0,
            ly - 4.0,
            LEFT + 28.0,
            ly - 4.0,
            LEFT + 34.0,
            ly,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_overlay_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_overlay_svg(&[], "x", &dir.path().join("a.svg")).unwrap_err();
        assert!(matches!(err, BacktestError::EmptyOverlay));
    }

    #[test]
    fn writes_csv_and_svg() {
        let dir = tempfile::tempdir().unwrap();
        let a = EquityCurve::from_values(vec![1.0, 1.1, 0.99]);
        let b = EquityCurve::from_values(vec![1.0, 1.0, 1.0]);
        let csv = dir.path().join("c.csv");
        write_curve_csv(&a, &csv).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().starts_with("2000-01-04,1.1000000000,0.1000000000"));
        let svg = dir.path().join("o.svg");
        write_overlay_svg(&[("model <a>".into(), &a), ("buy & hold".into(), &b)], "ACME", &svg).unwrap();
        let text = fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
        assert!(text.contains("model &lt;a&gt;"));
        assert!(text.contains("buy &amp; hold"));
    }
}
