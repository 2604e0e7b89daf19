//! Minimal line charts on a fixed 800×500 viewBox. Plots are conveniences;
//! no verdict reads them.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `series` against shared axes. On a log axis nonpositive values
/// are dropped.
pub fn line_chart(title: &str, x_label: &str, series: &[Series<'_>], log_y: bool) -> String {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let usable = |y: f64| y.is_finite() && (!log_y || y > 0.0);
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (&x, &y) in s.x.iter().zip(s.y) {
            if x.is_finite() && usable(y) {
                xs = (xs.0.min(x), xs.1.max(x));
                ys = (ys.0.min(tf(y)), ys.1.max(tf(y)));
            }
        }
    }
    if !(xs.0 <= xs.1) {
        xs = (0.0, 1.0);
        ys = (0.0, 1.0);
    }
    if xs.1 == xs.0 {
        xs.1 = xs.0 + 1.0;
    }
    if ys.1 == ys.0 {
        ys = (ys.0 - 0.5, ys.1 + 0.5);
    }
    let pad = 0.05 * (ys.1 - ys.0);
    ys = (ys.0 - pad, ys.1 + pad);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - xs.0) / (xs.1 - xs.0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - ys.0) / (ys.1 - ys.0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = xs.0 + f * (xs.1 - xs.0);
        let y = ys.0 + f * (ys.1 - ys.0);
        let ylab = if log_y { format!("{:.3e}", 10f64.powf(y)) } else { format!("{y:.4}") };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.3}</text>"#,
            px(x),
            TOP + ph + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{ylab}</text>"#,
            LEFT - 6.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        for (&x, &y) in s.x.iter().zip(s.y) {
            if x.is_finite() && usable(y) {
                let _ = write!(pts, "{:.2},{:.2} ", px(x), py(tf(y)));
            }
        }
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            pts.trim_end()
        );
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            WIDTH - RIGHT - 180.0,
            WIDTH - RIGHT - 150.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            WIDTH - RIGHT - 144.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_fixed_viewbox_and_dashed_envelope() {
        let x = [0.0, 1.0, 2.0];
        let svg = line_chart(
            "m2 <curve>",
            "t",
            &[
                Series { label: "estimate", x: &x, y: &[1.0, 0.5, 0.25], dashed: false },
                Series { label: "envelope", x: &x, y: &[2.0, 1.0, 0.5], dashed: true },
            ],
            true,
        );
        assert!(svg.contains(r#"viewBox="0 0 800 500""#));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        assert!(svg.contains("m2 &lt;curve&gt;"));
    }

    #[test]
    fn log_axis_drops_nonpositive_values_and_flat_data_renders() {
        let x = [0.0, 1.0];
        let svg = line_chart("", "t", &[Series { label: "a", x: &x, y: &[0.0, 1.0], dashed: false }], true);
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(poly.matches(',').count(), 1);
        let flat = line_chart("", "t", &[Series { label: "a", x: &x, y: &[3.0, 3.0], dashed: false }], false);
        assert!(!flat.contains("NaN"));
    }
}
