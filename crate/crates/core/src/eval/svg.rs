//! Minimal SVG 1.1 line charts of a sweep.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{sig6, Method, RdRecord};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Mean `(bpp, metric)` per knob for each method, ordered by bpp.
fn series(records: &[RdRecord], metric: fn(&RdRecord) -> f64) -> BTreeMap<Method, Vec<(f64, f64)>> {
    let mut acc: BTreeMap<(Method, u32), (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.method, r.knob)).or_insert((0.0, 0.0, 0));
        e.0 += r.bpp;
        e.1 += metric(r);
        e.2 += 1;
    }
    let mut out: BTreeMap<Method, Vec<(f64, f64)>> = BTreeMap::new();
    for ((m, _), (b, v, n)) in acc {
        out.entry(m).or_default().push((b / n as f64, v / n as f64));
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn panel(svg: &mut String, x0: f64, title: &str, data: &BTreeMap<Method, Vec<(f64, f64)>>) {
    let pts: Vec<(f64, f64)> = data.values().flatten().copied().collect();
    let (mut bx0, mut bx1, mut by0, mut by1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        bx0 = bx0.min(x);
        bx1 = bx1.max(x);
        by0 = by0.min(y);
        by1 = by1.max(y);
    }
    if pts.is_empty() {
        (bx0, bx1, by0, by1) = (0.0, 1.0, 0.0, 1.0);
    }
    if bx1 - bx0 < 1e-9 {
        bx1 = bx0 + 1.0;
    }
    if by1 - by0 < 1e-9 {
        by1 = by0 + 1.0;
    }
    let (pw, ph) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let sx = |x: f64| x0 + MARGIN + (x - bx0) / (bx1 - bx0) * pw;
    let sy = |y: f64| MARGIN + ph - (y - by0) / (by1 - by0) * ph;
    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x0 + MARGIN,
        MARGIN,
        pw,
        ph
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN - 15.0,
        title
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">bpp</text>"#,
        x0 + PANEL_W / 2.0,
        PANEL_H - 10.0
    );
    for (v, anchor, x, y) in [
        (bx0, "start", sx(bx0), MARGIN + ph + 15.0),
        (bx1, "end", sx(bx1), MARGIN + ph + 15.0),
        (by0, "end", x0 + MARGIN - 4.0, sy(by0)),
        (by1, "end", x0 + MARGIN - 4.0, sy(by1) + 10.0),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="{}">{}</text>"#,
            x,
            y,
            anchor,
            sig6(v)
        );
    }
    for (i, (m, line)) in data.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = line.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            path.join(" "),
            color
        );
        for &(x, y) in line {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                sx(x),
                sy(y),
                color
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
            x0 + MARGIN + 8.0,
            MARGIN + 14.0 + 13.0 * i as f64,
            color,
            m
        );
    }
}

/// Two side-by-side panels: PSNR vs bpp and SSIM vs bpp, averaged over
/// images, one line per method.
pub fn rd_svg(records: &[RdRecord]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" font-family="sans-serif" font-size="12">"#,
        2.0 * PANEL_W,
        PANEL_H
    );
    panel(&mut svg, 0.0, "PSNR (dB)", &series(records, |r| r.psnr));
    panel(&mut svg, PANEL_W, "SSIM", &series(records, |r| r.ssim));
    svg.push_str("</svg>\n");
    svg
}
