//! Static plot files: SVG line charts and PNG heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
    /// Draw markers instead of a line.
    pub markers: bool,
    pub dashed: bool,
}

impl<'a> Series<'a> {
    pub fn line(label: &'a str, color: &'a str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label,
            color,
            points,
            markers: false,
            dashed: false,
        }
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= n as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    (0..)
        .map(|i| first + i as f64 * step)
        .take_while(|v| *v <= hi + 1e-9 * step)
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Line chart with axes, ticks and a legend.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 440.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for t in nice_ticks(x0, x1, 8) {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/>"#,
            h - mb,
            h - mb + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            h - mb + 18.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(y0, y1, 6) {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.1}" x2="{ml}" y2="{y:.1}" stroke="black"/>"#,
            ml - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (ml + w - mr) / 2.0,
        h - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        escape(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        if ser.markers {
            for &(x, y) in ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}"/>"#,
                    px(x),
                    py(y),
                    ser.color
                );
            }
        } else {
            let d: Vec<String> = ser
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                ser.color,
                d.join(" ")
            );
        }
        let ly = mt + 16.0 + 16.0 * i as f64;
        let lx = w - mr - 150.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="14" height="4" fill="{}"/>"#,
            ly - 6.0,
            ser.color
        );
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 20.0, escape(ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn colormap(v: f64) -> [u8; 3] {
    // dark blue -> teal -> yellow
    const STOPS: [[f64; 3]; 4] = [[0.07, 0.04, 0.2], [0.1, 0.35, 0.55], [0.2, 0.7, 0.5], [0.99, 0.9, 0.15]];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| ((STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f) * 255.0).round() as u8;
    [c(0), c(1), c(2)]
}

/// Heatmap of `values[row * cols + col]` with time along x (rows) and the axis
/// along y (cols, first at the bottom). Columns whose maximum is below
/// `1e-4` of the global peak at either end are cropped; at most `max_height`
/// pixels tall, by max-pooling.
pub fn heatmap_png(path: &Path, rows: usize, cols: usize, values: &[f64], max_height: usize) -> Result<()> {
    if rows == 0 || cols == 0 || values.len() != rows * cols {
        return Err(Error::Artifact("heatmap dimensions do not match the data".into()));
    }
    let peak = values.iter().copied().fold(0.0, f64::max);
    let col_max: Vec<f64> = (0..cols)
        .map(|c| (0..rows).map(|r| values[r * cols + c]).fold(0.0, f64::max))
        .collect();
    let keep = |c: &usize| col_max[*c] > 1e-4 * peak;
    let lo = (0..cols).find(keep).unwrap_or(0);
    let hi = (0..cols).rev().find(keep).unwrap_or(cols - 1).max(lo);
    let span = hi - lo + 1;
    let height = span.min(max_height.max(1));
    let mut img = image::RgbImage::new(rows as u32, height as u32);
    for r in 0..rows {
        for y in 0..height {
            let a = lo + y * span / height;
            let b = (lo + (y + 1) * span / height).max(a + 1);
            let v = (a..b).map(|c| values[r * cols + c]).fold(0.0, f64::max);
            let norm = if peak > 0.0 { (v / peak).sqrt() } else { 0.0 };
            img.put_pixel(r as u32, (height - 1 - y) as u32, image::Rgb(colormap(norm)));
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}
