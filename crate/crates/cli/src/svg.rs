// SPDX-License-Identifier: Apache-2.0

//! Minimal static SVG plots.

use std::fmt::Write;

use bss_core::{Layout, RoadNetwork};

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Step plot of best objective against the elapsed column, one series per trace.
pub fn convergence(series: &[(String, Vec<(f64, f64)>)], x_label: &str) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{:.4}</text>"#,
            PAD - 4.0,
            sy(y) + 4.0,
            y
        );
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{:.1}</text>"#,
            sx(x),
            H - PAD + 16.0,
            x
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">best objective</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let mut d = String::new();
        let mut last: Option<f64> = None;
        for &(x, y) in pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            match last {
                None => {
                    let _ = write!(d, "M{:.2},{:.2}", sx(x), sy(y));
                }
                Some(_) => {
                    let _ = write!(d, " H{:.2} V{:.2}", sx(x), sy(y));
                }
            }
            last = Some(y);
        }
        let _ = writeln!(
            s,
            r#"<path d="{d}" fill="none" stroke="{c}" stroke-width="1.5"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{c}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * (i as f64 + 1.0),
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Network edges, candidate sites and built stations.
pub fn layout(net: &RoadNetwork, layout: &Layout) -> String {
    let (bx0, by0, bx1, by1) = net.bounding_box();
    let span = (bx1 - bx0).max(by1 - by0).max(1e-9);
    let scale = (W.min(H) - 2.0 * 24.0) / span;
    let px = |x: f64| 24.0 + (x - bx0) * scale;
    let py = |y: f64| H - 24.0 - (y - by0) * scale;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for e in net.edges() {
        let (a, b) = (net.node(e.u).unwrap(), net.node(e.v).unwrap());
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-width="1"/>"##,
            px(a.x_m),
            py(a.y_m),
            px(b.x_m),
            py(b.y_m)
        );
    }
    for n in net.nodes() {
        let (x, y) = (px(n.x_m), py(n.y_m));
        if layout.contains(n.id) {
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="#ff7f0e" stroke="black"/>"##,
                x - 5.0,
                y - 5.0
            );
        } else if n.is_candidate {
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="white" stroke="#333"/>"##,
                x - 4.0,
                y - 4.0
            );
        } else {
            let _ = writeln!(
                s,
                r##"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="#333"/>"##
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
