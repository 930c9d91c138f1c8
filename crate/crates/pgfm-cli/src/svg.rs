//! Minimal SVG scatter plots for 2-D runs: real pool, prototypes, and
//! synthetic samples on shared axes, with a fixed legend order.

use std::fmt::Write;

/// Marker style for one scatter series.
#[derive(Debug, Clone, Copy)]
pub enum Marker {
    /// Small hollow circle (real pool points).
    HollowCircle,
    /// Bold cross (prototypes).
    Cross,
    /// Filled circle (synthetic samples).
    FilledCircle,
}

/// One named group of 2-D points.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub color: String,
    pub marker: Marker,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 40.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render a scatter plot. Series are drawn and listed in the legend in the
/// order given; callers pass real, prototypes, synthetic in that fixed order.
pub fn scatter(title: &str, series: &[Series]) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (-1.0f64, 1.0f64, -1.0f64, 1.0f64);
    if !all.is_empty() {
        x0 = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        x1 = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        y0 = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        y1 = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    }
    // Symmetric margin; degenerate extents get a unit span so the transform
    // stays finite.
    let span_x = (x1 - x0).max(1e-9);
    let span_y = (y1 - y0).max(1e-9);
    let (x0, x1) = (x0 - 0.05 * span_x, x1 + 0.05 * span_x);
    let (y0, y1) = (y0 - 0.05 * span_y, y1 + 0.05 * span_y);
    let sx = (WIDTH - 2.0 * PAD) / (x1 - x0);
    let sy = (HEIGHT - 2.0 * PAD) / (y1 - y0);
    let px = |x: f64| PAD + (x - x0) * sx;
    // SVG y grows downward; flip so plots read math-style.
    let py = |y: f64| HEIGHT - PAD - (y - y0) * sy;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "  <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#cccccc\"/>",
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    let _ = writeln!(
        out,
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
        WIDTH / 2.0,
        xml_escape(title)
    );
    for s in series {
        let _ = writeln!(out, "  <g fill=\"{0}\" stroke=\"{0}\">", s.color);
        for &(x, y) in &s.points {
            let (cx, cy) = (px(x), py(y));
            match s.marker {
                Marker::HollowCircle => {
                    let _ = writeln!(
                        out,
                        "    <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2.2\" fill=\"none\"/>"
                    );
                }
                Marker::FilledCircle => {
                    let _ = writeln!(out, "    <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3.5\"/>");
                }
                Marker::Cross => {
                    let _ = writeln!(
                        out,
                        "    <path d=\"M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}\" stroke-width=\"2.5\"/>",
                        cx - 5.0, cy - 5.0, cx + 5.0, cy + 5.0, cx - 5.0, cy + 5.0, cx + 5.0, cy - 5.0
                    );
                }
            }
        }
        let _ = writeln!(out, "  </g>");
    }
    // Legend, fixed order = series order.
    for (i, s) in series.iter().enumerate() {
        let ly = PAD + 18.0 * (i as f64 + 1.0);
        let _ = writeln!(
            out,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/>",
            WIDTH - PAD - 130.0,
            ly - 4.0,
            s.color
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            WIDTH - PAD - 120.0,
            ly,
            xml_escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_series() -> Vec<Series> {
        vec![
            Series {
                name: "real".into(),
                color: "#9e9e9e".into(),
                marker: Marker::HollowCircle,
                points: vec![(0.0, 0.0), (1.0, 2.0)],
            },
            Series {
                name: "prototypes".into(),
                color: "#d32f2f".into(),
                marker: Marker::Cross,
                points: vec![(0.5, 1.0)],
            },
            Series {
                name: "synthetic".into(),
                color: "#1976d2".into(),
                marker: Marker::FilledCircle,
                points: vec![(0.2, 0.4)],
            },
        ]
    }

    #[test]
    fn output_is_balanced_xml() {
        let svg = scatter("demo", &demo_series());
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        let opens = svg.matches("<g ").count();
        let closes = svg.matches("</g>").count();
        assert_eq!(opens, closes);
    }

    #[test]
    fn legend_preserves_series_order() {
        let svg = scatter("demo", &demo_series());
        let real = svg.find(">real<").unwrap();
        let proto = svg.find(">prototypes<").unwrap();
        let synth = svg.find(">synthetic<").unwrap();
        assert!(real < proto && proto < synth);
    }

    #[test]
    fn title_is_escaped() {
        let svg = scatter("a<b&c", &demo_series());
        assert!(svg.contains("a&lt;b&amp;c"));
    }

    #[test]
    fn empty_series_still_renders() {
        let svg = scatter("empty", &[]);
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("NaN"));
    }
}
