//! Minimal SVG scatter plots for 2-D results; no dependencies, diffable
//! output.

use std::fmt::Write as _;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 24.0;

/// One scatter series: points plus a CSS color.
pub struct Series<'a> {
    pub points: &'a [Vec<f64>],
    pub color: &'a str,
    pub radius: f64,
}

/// Renders series into a standalone SVG document. Coordinates are fit to
/// the joint bounding box of all series; a degenerate box is padded.
pub fn scatter_svg(series: &[Series]) -> String {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for s in series {
        for p in s.points {
            for j in 0..2 {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
    }
    for j in 0..2 {
        if !lo[j].is_finite() || hi[j] - lo[j] < 1e-9 {
            lo[j] = if lo[j].is_finite() { lo[j] - 1.0 } else { -1.0 };
            hi[j] = if hi[j].is_finite() { hi[j] + 1.0 } else { 1.0 };
        }
    }
    let sx = (WIDTH - 2.0 * PAD) / (hi[0] - lo[0]);
    let sy = (HEIGHT - 2.0 * PAD) / (hi[1] - lo[1]);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white" stroke="#ccc"/>"##
    );
    for s in series {
        for p in s.points {
            let x = PAD + (p[0] - lo[0]) * sx;
            // y axis flipped so larger values plot higher
            let y = HEIGHT - PAD - (p[1] - lo[1]) * sy;
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="{}" fill="{}" fill-opacity="0.7"/>"#,
                s.radius, s.color
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Side-by-side panels (interpolation figures): each panel is a scatter of
/// its own series list, sharing one global bounding box.
pub fn panel_svg(panels: &[Vec<Series>]) -> String {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for panel in panels {
        for s in panel {
            for p in s.points {
                for j in 0..2 {
                    lo[j] = lo[j].min(p[j]);
                    hi[j] = hi[j].max(p[j]);
                }
            }
        }
    }
    for j in 0..2 {
        if !lo[j].is_finite() || hi[j] - lo[j] < 1e-9 {
            lo[j] = if lo[j].is_finite() { lo[j] - 1.0 } else { -1.0 };
            hi[j] = if hi[j].is_finite() { hi[j] + 1.0 } else { 1.0 };
        }
    }
    let pw = 220.0;
    let ph = 220.0;
    let pad = 12.0;
    let total_w = pw * panels.len() as f64;
    let sx = (pw - 2.0 * pad) / (hi[0] - lo[0]);
    let sy = (ph - 2.0 * pad) / (hi[1] - lo[1]);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{ph}" viewBox="0 0 {total_w} {ph}">"#
    );
    for (pi, panel) in panels.iter().enumerate() {
        let ox = pi as f64 * pw;
        let _ = writeln!(
            out,
            r##"<rect x="{ox}" width="{pw}" height="{ph}" fill="white" stroke="#ccc"/>"##
        );
        for s in panel {
            for p in s.points {
                let x = ox + pad + (p[0] - lo[0]) * sx;
                let y = ph - pad - (p[1] - lo[1]) * sy;
                let _ = writeln!(
                    out,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="{}" fill="{}" fill-opacity="0.7"/>"#,
                    s.radius, s.color
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
