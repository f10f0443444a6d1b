//! Static SVG chart of mean pooled beta against the log hazard ratio, one
//! panel per indicator mode and one line per formula.

use std::fmt::Write;

use condmean_core::sim::CellSummary;
use condmean_core::{Formula, Indicator};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#000000", "#d95f02", "#1b9e77", "#7570b3"];

pub fn beta_chart(summaries: &[CellSummary], true_beta: f64) -> String {
    let indicators: Vec<Indicator> =
        Indicator::ALL.into_iter().filter(|i| summaries.iter().any(|s| s.spec.indicator == *i)).collect();
    let (x_lo, x_hi) = bounds(summaries.iter().map(|s| s.log_hr));
    let (y_lo, y_hi) = bounds(summaries.iter().map(|s| s.mean_beta).chain([true_beta]));
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

    let width = indicators.len().max(1) as f64 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + 24.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (k, &ind) in indicators.iter().enumerate() {
        let left = MARGIN + k as f64 * (PANEL_W + MARGIN);
        let top = MARGIN;
        let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * PANEL_W;
        let sy = |y: f64| top + PANEL_H - (y - y_lo) / (y_hi - y_lo) * PANEL_H;

        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{ind}</text>"#, left + PANEL_W / 2.0, top - 8.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#aaa" stroke-dasharray="4 3"/>"##,
            left + PANEL_W,
            y = sy(true_beta)
        );
        for tick in ticks(x_lo, x_hi) {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                sx(tick),
                top + PANEL_H + 14.0,
                label(tick)
            );
        }
        for tick in ticks(y_lo, y_hi) {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                left - 4.0,
                sy(tick) + 4.0,
                label(tick)
            );
        }

        for (formula, color) in Formula::ALL.into_iter().zip(COLORS) {
            let mut pts: Vec<(f64, f64)> = summaries
                .iter()
                .filter(|s| s.spec.formula == formula && s.spec.indicator == ind)
                .map(|s| (s.log_hr, s.mean_beta))
                .collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
            for (x, y) in &pts {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(*x), sy(*y));
            }
        }
    }

    let legend_y = height - 12.0;
    for (i, (formula, color)) in Formula::ALL.into_iter().zip(COLORS).enumerate() {
        let x = MARGIN + i as f64 * 110.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" x2="{}" y1="{y}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{formula}</text>"#,
            x + 18.0,
            x + 22.0,
            legend_y + 4.0,
            y = legend_y
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}
