//! Minimal SVG output: region snapshots and time curves.

use std::fmt::Write;

use crate::linalg::Vec2;
use crate::polytope::ConvexPolygon;
use crate::sim::BoxBounds;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;

struct Frame {
    min: Vec2,
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(bx: &BoxBounds) -> Self {
        let span = bx.max - bx.min;
        let scale = (SIZE - 2.0 * MARGIN) / span[0].max(span[1]);
        Self { min: bx.min, scale, height: span[1] * scale + 2.0 * MARGIN }
    }

    fn map(&self, p: &Vec2) -> (f64, f64) {
        let x = MARGIN + (p[0] - self.min[0]) * self.scale;
        let y = self.height - MARGIN - (p[1] - self.min[1]) * self.scale;
        (x, y)
    }
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// `Θ₀` box, current region and true goal at one instant.
pub fn region_snapshot(bx: &BoxBounds, poly: &ConvexPolygon, goal: &Vec2, title: &str) -> String {
    let f = Frame::new(bx);
    let mut out = String::new();
    header(&mut out, SIZE, f.height);
    let (x0, y1) = f.map(&bx.min);
    let (x1, y0) = f.map(&bx.max);
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    if !poly.is_empty() {
        let pts: Vec<String> = poly
            .vertices()
            .iter()
            .map(|v| {
                let (x, y) = f.map(v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#6fa8dc" fill-opacity="0.5" stroke="#1c4587"/>"##,
            pts.join(" ")
        );
    }
    let (gx, gy) = f.map(goal);
    let _ = writeln!(out, r#"<circle cx="{gx:.2}" cy="{gy:.2}" r="4" fill="red"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#);
    out.push_str("</svg>\n");
    out
}

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line plot of several series sharing the time axis; `y` is clamped to
/// `[0, y_max]`.
pub fn curves(series: &[Series], y_max: f64, title: &str) -> String {
    let width = SIZE * 1.5;
    let height = SIZE;
    let t_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let px = |t: f64| MARGIN + t / t_max * (width - 2.0 * MARGIN);
    let py = |y: f64| height - MARGIN - (y.clamp(0.0, y_max) / y_max) * (height - 2.0 * MARGIN);

    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b:.2}" stroke="black"/>"#,
        b = height - MARGIN,
        r = width - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">t = {t_max:.2} s</text>"#,
        width - MARGIN - 60.0,
        height - MARGIN + 16.0
    );
    let _ = writeln!(out, r#"<text x="4" y="{:.2}" font-family="sans-serif" font-size="12">{y_max}</text>"#, MARGIN + 4.0);
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(t, y)| format!("{:.2},{:.2}", px(t), py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            s.color
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            width - MARGIN - 160.0,
            MARGIN + 16.0 * (k as f64 + 1.0),
            s.color,
            s.label
        );
    }
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#);
    out.push_str("</svg>\n");
    out
}
