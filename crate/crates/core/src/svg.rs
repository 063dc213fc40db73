//! Minimal deterministic SVG line charts.
//!
//! Output depends only on the input data: coordinates are printed with a
//! fixed number of decimals and elements are emitted in input order.

use std::fmt::Write;

const PANEL_WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Vertical markers at an x position with a hover label.
    pub markers: Vec<(f64, String)>,
    /// Tick labels along x; numeric ticks are generated when empty.
    pub x_ticks: Vec<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        let pad = hi.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn render_panel(out: &mut String, panel: &Panel, x0: f64) {
    let plot_w = PANEL_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let all = || panel.series.iter().flat_map(|s| s.points.iter());
    let (xmin, xmax) = extent(all().map(|p| p.0).chain(panel.markers.iter().map(|m| m.0)));
    let (ymin, ymax) = extent(all().map(|p| p.1));
    let sx = |x: f64| x0 + MARGIN_LEFT + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (ymax - y) / (ymax - ymin) * plot_h;

    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
        x0 + PANEL_WIDTH / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        x0 + MARGIN_LEFT,
        MARGIN_TOP,
        plot_w,
        plot_h
    );

    for i in 0..=4 {
        let y = ymin + (ymax - ymin) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"##,
            x0 + MARGIN_LEFT - 6.0,
            sy(y) + 4.0,
            fmt_tick(y)
        );
    }
    let ticks: Vec<(f64, String)> = if panel.x_ticks.is_empty() {
        (0..=4)
            .map(|i| {
                let x = xmin + (xmax - xmin) * i as f64 / 4.0;
                (x, fmt_tick(x))
            })
            .collect()
    } else {
        panel.x_ticks.clone()
    };
    for (x, label) in &ticks {
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"##,
            sx(*x),
            MARGIN_TOP + plot_h + 16.0,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"##,
        x0 + MARGIN_LEFT + plot_w / 2.0,
        PANEL_HEIGHT - 12.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.2} {:.2})">{}</text>"##,
        x0 + 16.0,
        MARGIN_TOP + plot_h / 2.0,
        x0 + 16.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(&panel.y_label)
    );

    for (x, label) in &panel.markers {
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"><title>{}</title></line>"##,
            sx(*x),
            MARGIN_TOP,
            sx(*x),
            MARGIN_TOP + plot_h,
            escape(label)
        );
    }

    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##,
            pts.join(" ")
        );
        let ly = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        let lx = x0 + MARGIN_LEFT + 10.0;
        let _ = writeln!(
            out,
            r##"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"##,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{ly:.2}" font-size="11">{}</text>"##,
            lx + 24.0,
            escape(&s.name)
        );
    }
}

/// Render panels side by side.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_WIDTH * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_HEIGHT:.0}" viewBox="0 0 {width:.0} {PANEL_HEIGHT:.0}" font-family="sans-serif">"##
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_WIDTH * i as f64);
    }
    out.push_str("</svg>\n");
    out
}
