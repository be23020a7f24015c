//! SVG line charts of aggregated series with a shaded 95% CI band.

use std::fmt::Write as _;

use crate::aggregate::AggregateSeries;
use crate::corpus::{FIRST_DAY, LAST_DAY};

#[derive(Debug, Clone, PartialEq)]
pub struct ChartStyle {
    pub width: f64,
    pub height: f64,
    pub margin_left: f64,
    pub margin_right: f64,
    pub margin_top: f64,
    pub margin_bottom: f64,
    pub line_color: String,
    pub band_color: String,
    pub band_opacity: f64,
}

impl Default for ChartStyle {
    fn default() -> Self {
        ChartStyle {
            width: 640.0,
            height: 400.0,
            margin_left: 70.0,
            margin_right: 20.0,
            margin_top: 40.0,
            margin_bottom: 50.0,
            line_color: "#1f77b4".into(),
            band_color: "#1f77b4".into(),
            band_opacity: 0.25,
        }
    }
}

const X_TICKS: [i64; 8] = [-7, 0, 5, 10, 15, 20, 25, 30];
const Y_TICKS: usize = 5;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, day: i64) -> f64 {
        self.x0 + (day - FIRST_DAY) as f64 / (LAST_DAY - FIRST_DAY) as f64 * (self.x1 - self.x0)
    }

    fn y(&self, v: f64) -> f64 {
        self.y1 - (v - self.lo) / (self.hi - self.lo) * (self.y1 - self.y0)
    }
}

fn value_range(series: &AggregateSeries) -> (f64, f64) {
    let values = series
        .days
        .iter()
        .flat_map(|d| [d.mean, d.ci_low, d.ci_high])
        .flatten()
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo >= 0.0 {
        lo = 0.0;
    }
    if hi - lo < 1e-12 {
        let pad = if hi.abs() > 0.0 { hi.abs() * 0.1 } else { 1.0 };
        hi += pad;
        lo -= if lo == 0.0 { 0.0 } else { pad };
    }
    let pad = (hi - lo) * 0.05;
    (lo, hi + pad)
}

/// Runs of consecutive days that have a mean value.
fn segments(series: &AggregateSeries) -> Vec<Vec<(i64, f64, f64, f64)>> {
    let mut out: Vec<Vec<(i64, f64, f64, f64)>> = Vec::new();
    let mut current = Vec::new();
    for d in &series.days {
        match d.mean {
            Some(m) => current.push((d.day, m, d.ci_low.unwrap_or(m), d.ci_high.unwrap_or(m))),
            None if !current.is_empty() => out.push(std::mem::take(&mut current)),
            None => {}
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Tick label with enough decimals to tell ticks `step` apart.
fn label(v: f64, step: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e6) {
        return format!("{v:.2e}");
    }
    let decimals = if step > 0.0 { (-step.log10().floor() as i64 + 1).clamp(0, 8) as usize } else { 4 };
    let s = format!("{v:.decimals$}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Renders one chart: mean line, CI band polygon, labeled axes, and a
/// dashed onset marker. Output bytes depend only on the inputs.
pub fn render_chart(series: &AggregateSeries, style: &ChartStyle) -> Vec<u8> {
    let (lo, hi) = value_range(series);
    let f = Frame {
        x0: style.margin_left,
        x1: style.width - style.margin_right,
        y0: style.margin_top,
        y1: style.height - style.margin_bottom,
        lo,
        hi,
    };
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif" font-size="12">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{} {}</text>"#,
        style.width / 2.0,
        style.margin_top / 2.0 + 5.0,
        series.category,
        series.signal
    );

    // Axes and ticks.
    let _ = writeln!(
        w,
        r#"<g stroke="black" stroke-width="1"><line x1="{x0:.2}" y1="{y1:.2}" x2="{x1:.2}" y2="{y1:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"#,
        x0 = f.x0,
        x1 = f.x1,
        y0 = f.y0,
        y1 = f.y1
    );
    for day in X_TICKS {
        let x = f.x(day);
        let _ = writeln!(
            w,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{day}</text>"#,
            f.y1,
            f.y1 + 5.0,
            f.y1 + 18.0
        );
    }
    for i in 0..Y_TICKS {
        let v = lo + (hi - lo) * i as f64 / (Y_TICKS - 1) as f64;
        let y = f.y(v);
        let _ = writeln!(
            w,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.x0 - 5.0,
            f.x0,
            f.x0 - 8.0,
            y + 4.0,
            label(v, (hi - lo) / (Y_TICKS - 1) as f64)
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">day offset</text>"#,
        (f.x0 + f.x1) / 2.0,
        style.height - 10.0
    );
    let _ = writeln!(
        w,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
        (f.y0 + f.y1) / 2.0,
        (f.y0 + f.y1) / 2.0,
        series.signal
    );
    let onset = f.x(0);
    let _ = writeln!(
        w,
        r##"<line x1="{onset:.2}" y1="{:.2}" x2="{onset:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        f.y0, f.y1
    );

    for seg in segments(series) {
        let upper = seg.iter().map(|&(d, _, _, h)| format!("{:.2},{:.2}", f.x(d), f.y(h)));
        let lower = seg.iter().rev().map(|&(d, _, l, _)| format!("{:.2},{:.2}", f.x(d), f.y(l)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            w,
            r#"<polygon class="ci-band" points="{}" fill="{}" fill-opacity="{}" stroke="none"/>"#,
            band.join(" "),
            style.band_color,
            style.band_opacity
        );
        let line: Vec<String> = seg.iter().map(|&(d, m, _, _)| format!("{:.2},{:.2}", f.x(d), f.y(m))).collect();
        if seg.len() == 1 {
            let (d, m, _, _) = seg[0];
            let _ = writeln!(
                w,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                f.x(d),
                f.y(m),
                style.line_color
            );
        } else {
            let _ = writeln!(
                w,
                r#"<polyline class="mean" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                line.join(" "),
                style.line_color
            );
        }
    }
    s.push_str("</svg>\n");
    s.into_bytes()
}
