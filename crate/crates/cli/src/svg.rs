//! Bare-bones line plots: one polyline, axis ticks and an optional
//! horizontal control-limit rule.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const TICKS: usize = 5;

pub fn line_plot(title: &str, points: &[(f64, f64)], limit: Option<f64>) -> String {
    let x_max = points.iter().map(|p| p.0).fold(0.0, f64::max).max(1.0);
    let y_max = points
        .iter()
        .map(|p| p.1)
        .chain(limit)
        .fold(0.0, f64::max)
        .max(1.0)
        * 1.05;
    let sx = |x: f64| MARGIN + x / x_max * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - y / y_max * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(x_max), sy(y_max));
    let _ = writeln!(s, r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#);
    for k in 0..=TICKS {
        let fx = x_max * k as f64 / TICKS as f64;
        let fy = y_max * k as f64 / TICKS as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"#,
            sx(fx),
            y0,
            y0 + 4.0,
            y0 + 16.0,
            tick_label(fx)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5}</text>"#,
            x0 - 4.0,
            sy(fy),
            x0,
            x0 - 6.0,
            sy(fy) + 4.0,
            tick_label(fy)
        );
    }
    if let Some(h) = limit {
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.1}" y1="{0:.1}" x2="{x1:.1}" y2="{0:.1}" stroke="red" stroke-dasharray="6,4"/>"#,
            sy(h)
        );
    }
    let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#, coords.join(" "));
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
