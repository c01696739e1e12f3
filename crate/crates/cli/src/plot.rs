//! Minimal static SVG rendering for `run --plot`. Everything is inlined into
//! one self-contained file so reports can be archived without assets.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

#[derive(Debug)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    /// Horizontal guide lines at `+band` and `-band`, e.g. a z acceptance band.
    pub band: Option<f64>,
}

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

pub fn render(spec: &PlotSpec) -> String {
    let finite: Vec<(f64, f64)> = spec
        .points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();

    let (x_lo, x_hi) = axis_range(finite.iter().map(|p| p.0));
    let mut y_values: Vec<f64> = finite.iter().map(|p| p.1).collect();
    if let Some(b) = spec.band {
        y_values.push(b);
        y_values.push(-b);
    }
    let (y_lo, y_hi) = axis_range(y_values.into_iter());

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##
    );
    let _ = write!(svg, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = write!(
        svg,
        r##"<text x="{}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"##,
        WIDTH / 2.0,
        escape(&spec.title)
    );

    // axes box
    let _ = write!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );

    // axis extent labels
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"##,
        MARGIN_LEFT,
        HEIGHT - MARGIN_BOTTOM + 16.0,
        fmt_tick(x_lo)
    );
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"##,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM + 16.0,
        fmt_tick(x_hi)
    );
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"##,
        MARGIN_LEFT - 6.0,
        HEIGHT - MARGIN_BOTTOM,
        fmt_tick(y_lo)
    );
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"##,
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + 10.0,
        fmt_tick(y_hi)
    );

    // axis titles
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&spec.x_label)
    );
    let _ = write!(
        svg,
        r##"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"##,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(&spec.y_label)
    );

    if let Some(b) = spec.band {
        for line_y in [b, -b] {
            if line_y >= y_lo && line_y <= y_hi {
                let _ = write!(
                    svg,
                    r##"<line x1="{MARGIN_LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="#c44" stroke-dasharray="5 4"/>"##,
                    sy(line_y),
                    WIDTH - MARGIN_RIGHT
                );
            }
        }
    }

    if finite.len() > 1 {
        let path: Vec<String> = finite
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = write!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#26c" stroke-width="1.5"/>"##,
            path.join(" ")
        );
    }
    for &(x, y) in &finite {
        let _ = write!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#26c"/>"##,
            sx(x),
            sy(y)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_self_contained_svg_with_band_lines() {
        let spec = PlotSpec {
            title: "z by cell".to_string(),
            x_label: "cell".to_string(),
            y_label: "z".to_string(),
            points: vec![(0.0, 0.4), (1.0, -1.2), (2.0, 2.1)],
            band: Some(3.0),
        };
        let svg = render(&spec);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(!svg.contains("http://") || svg.matches("http://").count() == 1);
    }

    #[test]
    fn skips_non_finite_points_without_panicking() {
        let spec = PlotSpec {
            title: "gap".to_string(),
            x_label: "i".to_string(),
            y_label: "gap".to_string(),
            points: vec![(0.0, f64::INFINITY), (1.0, f64::NAN)],
            band: None,
        };
        let svg = render(&spec);
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn degenerate_single_point_gets_padded_axes() {
        let spec = PlotSpec {
            title: "one".to_string(),
            x_label: "x".to_string(),
            y_label: "y".to_string(),
            points: vec![(1.0, 1.0)],
            band: None,
        };
        let svg = render(&spec);
        assert!(svg.contains("<circle"));
    }
}
