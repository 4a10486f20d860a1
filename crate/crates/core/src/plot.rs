//! Phase-plane SVG rendering of planar trajectories.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::safety::{BarrierShape, BarrierSpec};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 48.0;
const COLORS: &[&str] = &["#1f77b4", "#e6a700", "#2ca02c", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads the `x1`, `x2` columns of a trajectory CSV.
pub fn read_trajectory_csv(label: &str, text: &str) -> Result<Series> {
    let err = |line: usize, message: String| Error::Config { line, message: format!("{label}: {message}") };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        columns.iter().position(|c| *c == name).ok_or_else(|| err(1, format!("missing column `{name}`")))
    };
    let (i1, i2) = (find("x1")?, find("x2")?);
    let mut points = Vec::new();
    for (idx, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(err(idx + 1, format!("expected {} fields, found {}", columns.len(), cells.len())));
        }
        let parse = |i: usize| {
            cells[i].trim().parse::<f64>().map_err(|_| err(idx + 1, format!("bad number `{}`", cells[i].trim())))
        };
        points.push((parse(i1)?, parse(i2)?));
    }
    if points.is_empty() {
        return Err(err(0, "no samples".into()));
    }
    Ok(Series { label: label.to_string(), points })
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn scale(&self) -> f64 {
        (WIDTH - 2.0 * MARGIN) / (self.x1 - self.x0)
    }
}

fn frame(series: &[Series], barrier: Option<&BarrierSpec>) -> Frame {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let mut ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    xs.push(0.0);
    ys.push(0.0);
    if let Some(BarrierShape::Circle(c)) = barrier.map(|b| b.shape()) {
        xs.extend([c.center[0] - c.radius, c.center[0] + c.radius]);
        ys.extend([c.center[1] - c.radius, c.center[1] + c.radius]);
    }
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Square frame with equal axis scaling.
    let (cx, cy) = ((lo(&xs) + hi(&xs)) / 2.0, (lo(&ys) + hi(&ys)) / 2.0);
    let half = ((hi(&xs) - lo(&xs)).max(hi(&ys) - lo(&ys)) / 2.0).max(1e-3) * 1.1;
    Frame { x0: cx - half, x1: cx + half, y0: cy - half, y1: cy + half }
}

/// Phase-plane SVG with the unsafe region, one polyline per series and a legend.
pub fn phase_plane_svg(series: &[Series], barrier: Option<&BarrierSpec>) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Invalid("nothing to plot".into()));
    }
    let f = frame(series, barrier);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{MARGIN}" x2="{:.2}" y2="{}" stroke="#ccc"/><line x1="{MARGIN}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#ccc"/>"##,
        f.px(0.0),
        f.px(0.0),
        HEIGHT - MARGIN,
        f.py(0.0),
        WIDTH - MARGIN,
        f.py(0.0)
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">x1</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(svg, r#"<text x="14" y="{}" text-anchor="middle">x2</text>"#, HEIGHT / 2.0);
    for (x, anchor) in [(f.x0, "start"), (f.x1, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="{anchor}">{x:.2}</text>"#,
            f.px(x),
            HEIGHT - MARGIN + 16.0
        );
    }
    for y in [f.y0, f.y1] {
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{y:.2}</text>"#, MARGIN - 4.0, f.py(y) + 4.0);
    }

    match barrier.map(|b| b.shape()) {
        Some(BarrierShape::Circle(c)) if c.center.len() == 2 => {
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#d62728" fill-opacity="0.35" stroke="#d62728"/>"##,
                f.px(c.center[0]),
                f.py(c.center[1]),
                c.radius * f.scale()
            );
        }
        Some(BarrierShape::HalfSpace(h)) if h.normal.len() == 2 && h.normal.norm() > 0.0 => {
            // Boundary n.x = offset, drawn across the frame.
            let (n, d) = (&h.normal, h.offset);
            let p = n * (d / n.norm_squared());
            let dir = (-n[1], n[0]);
            let span = 4.0 * (f.x1 - f.x0);
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/>"##,
                f.px(p[0] - span * dir.0),
                f.py(p[1] - span * dir.1),
                f.px(p[0] + span * dir.0),
                f.py(p[1] + span * dir.1)
            );
        }
        _ => {}
    }

    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, f.px(x), f.py(y));
        } else {
            let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
        }
        let ly = MARGIN + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 28.0,
            MARGIN + 34.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
