//! Static SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const MAX_POINTS: usize = 2000;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub label: String,
    pub xs: &'a [f64],
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axes {
    Linear,
    LogLog,
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        Some((lo - pad, hi + pad))
    } else {
        Some((lo, hi))
    }
}

fn tick_label(v: f64, axes: Axes) -> String {
    match axes {
        Axes::LogLog => format!("1e{:.1}", v),
        Axes::Linear if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) => format!("{v:.2e}"),
        Axes::Linear => format!("{v:.3}"),
    }
}

/// Renders series sharing one x axis; on log–log axes non-positive points are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], axes: Axes) -> String {
    let map = |v: f64| match axes {
        Axes::Linear => v,
        Axes::LogLog if v > 0.0 => v.log10(),
        Axes::LogLog => f64::NAN,
    };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            let stride = s.xs.len().div_ceil(MAX_POINTS).max(1);
            s.xs.iter()
                .zip(&s.ys)
                .enumerate()
                .filter(|(i, _)| i % stride == 0 || *i + 1 == s.xs.len())
                .map(|(_, (&x, &y))| (map(x), map(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let xb = bounds(pts.iter().flatten().map(|p| p.0)).unwrap_or((0.0, 1.0));
    let yb = bounds(pts.iter().flatten().map(|p| p.1)).unwrap_or((0.0, 1.0));
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - xb.0) / (xb.1 - xb.0) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - yb.0) / (yb.1 - yb.0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = xb.0 + f * (xb.1 - xb.0);
        let yv = yb.0 + f * (yb.1 - yb.0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{MARGIN_T}" x2="{px:.2}" y2="{:.2}" stroke="#ddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 16.0,
            tick_label(xv, axes)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_L + plot_w,
            MARGIN_L - 6.0,
            py + 4.0,
            tick_label(yv, axes)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    );
    for (i, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !p.is_empty() {
            let path: Vec<String> = p
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        let lx = MARGIN_L + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_one_polyline_per_series() {
        let xs = [0.0, 1.0, 2.0];
        let svg = line_chart(
            "t < 1",
            "t",
            "y",
            &[
                Series { label: "a".into(), xs: &xs, ys: vec![1.0, 2.0, 3.0] },
                Series { label: "b".into(), xs: &xs, ys: vec![0.0, 0.0, 0.0] },
            ],
            Axes::Linear,
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &lt; 1"));
    }

    #[test]
    fn log_axes_drop_non_positive_points() {
        let xs = [0.0, 10.0, 100.0];
        let svg = line_chart(
            "d",
            "t",
            "d",
            &[Series { label: "d".into(), xs: &xs, ys: vec![1.0, 0.1, 0.01] }],
            Axes::LogLog,
        );
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }
}
