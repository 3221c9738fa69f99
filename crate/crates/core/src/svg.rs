//! SVG rendering of scanpaths and model ROIs.
//!
//! Fixations are drawn as black dots joined by a blue polyline in time
//! order. Model states are drawn as 2σ covariance ellipses with a cross at
//! each mean. Coordinates are screen pixels with three decimals, so output
//! is byte-stable for a given input.

use std::fmt::Write;

use crate::fixation::Fixation;
use crate::gaze_io::Screen;
use crate::hmm::GaussianHmm;

/// What to draw.
#[derive(Debug, Clone, Copy)]
pub enum Plot<'a> {
    Fixations(&'a [Fixation]),
    Model(&'a GaussianHmm),
}

const STATE_COLORS: [&str; 6] = ["#d62728", "#2ca02c", "#000000", "#1f77b4", "#9467bd", "#ff7f0e"];
const FIXATION_RADIUS: f64 = 4.0;
const MARKER_HALF: f64 = 5.0;

fn num(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" { "0.000".to_string() } else { s }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Semi-axes `(major, minor)` of the 2σ contour and the rotation of the
/// major axis in degrees.
pub fn two_sigma_ellipse(cov: &nalgebra::Matrix2<f64>) -> (f64, f64, f64) {
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    (2.0 * (mid + rad).sqrt(), 2.0 * (mid - rad).max(0.0).sqrt(), angle.to_degrees())
}

/// Renders a standalone SVG document sized to the screen. `metadata` is
/// embedded verbatim (escaped) in a `<metadata>` element.
pub fn render_scanpath_svg(plot: Plot<'_>, screen: &Screen, title: Option<&str>, metadata: Option<&str>) -> String {
    let (w, h) = (screen.width_px, screen.height_px);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = num(w),
        h = num(h)
    );
    if let Some(t) = title {
        let _ = writeln!(s, "  <title>{}</title>", escape(t));
    }
    if let Some(m) = metadata {
        let _ = writeln!(s, "  <metadata>{}</metadata>", escape(m));
    }
    let _ = writeln!(s, r#"  <rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, num(w), num(h));
    match plot {
        Plot::Fixations(fx) => {
            if fx.len() > 1 {
                let pts: Vec<String> = fx.iter().map(|f| format!("{},{}", num(f.x_px), num(f.y_px))).collect();
                let _ = writeln!(
                    s,
                    r##"  <polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
                    pts.join(" ")
                );
            }
            for f in fx {
                let _ = writeln!(
                    s,
                    r#"  <circle cx="{}" cy="{}" r="{}" fill="black"/>"#,
                    num(f.x_px),
                    num(f.y_px),
                    num(FIXATION_RADIUS)
                );
            }
        }
        Plot::Model(m) => {
            for (i, e) in m.emissions().iter().enumerate() {
                let color = STATE_COLORS[i % STATE_COLORS.len()];
                let (rx, ry, deg) = two_sigma_ellipse(e.cov());
                let (cx, cy) = (e.mean().x, e.mean().y);
                let _ = writeln!(
                    s,
                    r#"  <ellipse cx="{}" cy="{}" rx="{}" ry="{}" transform="rotate({} {} {})" fill="{color}" fill-opacity="0.25" stroke="{color}" stroke-width="1.5"/>"#,
                    num(cx),
                    num(cy),
                    num(rx),
                    num(ry),
                    num(deg),
                    num(cx),
                    num(cy)
                );
                let _ = writeln!(
                    s,
                    r#"  <path d="M {} {} L {} {} M {} {} L {} {}" stroke="{color}" stroke-width="2"/>"#,
                    num(cx - MARKER_HALF),
                    num(cy),
                    num(cx + MARKER_HALF),
                    num(cy),
                    num(cx),
                    num(cy - MARKER_HALF),
                    num(cx),
                    num(cy + MARKER_HALF)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
