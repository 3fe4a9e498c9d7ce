//! Plain SVG charts.

use std::fmt::Write;

use qsens_core::growth::{linear_fit, GrowthReport, TraceSeries, DELTA_FLOOR};
use qsens_core::spectral::KernelProfile;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: [f64; 4] = [60.0, 20.0, 30.0, 50.0]; // left, right, top, bottom

struct Frame {
    x: [f64; 2],
    y: [f64; 2],
}

impl Frame {
    fn new(x: [f64; 2], y: [f64; 2]) -> Self {
        let pad = |r: [f64; 2]| {
            if r[1] - r[0] < 1e-12 {
                [r[0] - 1.0, r[1] + 1.0]
            } else {
                let d = 0.05 * (r[1] - r[0]);
                [r[0] - d, r[1] + d]
            }
        };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN[0] + (x - self.x[0]) / (self.x[1] - self.x[0]) * (WIDTH - MARGIN[0] - MARGIN[1])
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN[3] - (y - self.y[0]) / (self.y[1] - self.y[0]) * (HEIGHT - MARGIN[2] - MARGIN[3])
    }

    fn polyline(&self, out: &mut String, pts: &[(f64, f64)], style: &str) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, coords.join(" "));
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (x0, x1) = (MARGIN[0], WIDTH - MARGIN[1]);
        let (y0, y1) = (HEIGHT - MARGIN[3], MARGIN[2]);
        let _ = writeln!(out, r#"<path d="M{x0},{y1} V{y0} H{x1}" stroke="black" fill="none"/>"#);
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = self.x[0] + t * (self.x[1] - self.x[0]);
            let yv = self.y[0] + t * (self.y[1] - self.y[0]);
            let (px, py) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                out,
                r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                y0 + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                py + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{xlabel}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {:.2})">{ylabel}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" font-size="14" text-anchor="middle">{title}</text>"#, WIDTH / 2.0);
    s
}

/// `ln Delta(n)` against `n`, with the exponential fit over the window and the
/// power-law fit drawn on the same axes.
pub fn growth_chart(title: &str, series: &TraceSeries, report: &GrowthReport) -> String {
    let pts: Vec<(f64, f64)> = series
        .steps
        .iter()
        .zip(&series.delta)
        .filter(|(_, d)| **d >= DELTA_FLOOR)
        .map(|(n, d)| (*n as f64, d.ln()))
        .collect();
    let [lo, hi] = report.window;
    let win: Vec<(f64, f64)> = pts.iter().copied().filter(|(n, _)| *n >= lo as f64 && *n <= hi as f64).collect();
    let mut lines: Vec<(Vec<(f64, f64)>, &str)> = Vec::new();
    if win.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = win.iter().copied().unzip();
        let (slope, _) = linear_fit(&xs, &ys);
        let b = mean(&ys) - slope * mean(&xs);
        lines.push((vec![(xs[0], b + slope * xs[0]), (*xs.last().unwrap(), b + slope * xs.last().unwrap())], "exp"));
        let pos: Vec<(f64, f64)> = win.iter().copied().filter(|(n, _)| *n >= 1.0).collect();
        if pos.len() >= 2 {
            let (ln_n, ys): (Vec<f64>, Vec<f64>) = pos.iter().map(|(n, y)| (n.ln(), *y)).unzip();
            let (d, _) = linear_fit(&ln_n, &ys);
            let c = mean(&ys) - d * mean(&ln_n);
            lines.push((pos.iter().map(|(n, _)| (*n, c + d * n.ln())).collect(), "pow"));
        }
    }
    let all = pts.iter().chain(lines.iter().flat_map(|l| l.0.iter()));
    let (mut xr, mut yr) = ([f64::INFINITY, f64::NEG_INFINITY], [f64::INFINITY, f64::NEG_INFINITY]);
    for (x, y) in all {
        xr = [xr[0].min(*x), xr[1].max(*x)];
        yr = [yr[0].min(*y), yr[1].max(*y)];
    }
    if pts.is_empty() {
        xr = [0.0, 1.0];
        yr = [0.0, 1.0];
    }
    let f = Frame::new(xr, yr);
    let mut out = header(title);
    f.axes(&mut out, "n (kicks)", "ln Delta(n)");
    f.polyline(&mut out, &pts, r##"stroke="#1f4e9c" stroke-width="2""##);
    for (x, y) in &pts {
        let _ = writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f4e9c"/>"##, f.px(*x), f.py(*y));
    }
    for (line, kind) in &lines {
        let style = match *kind {
            "exp" => r##"stroke="#c0392b" stroke-width="1.5""##,
            _ => r##"stroke="#27ae60" stroke-width="1.5" stroke-dasharray="6 4""##,
        };
        f.polyline(&mut out, line, style);
    }
    let legend = [
        ("#1f4e9c", "ln Delta(n)".to_string()),
        ("#c0392b", format!("exp fit, lambda = {:.4}/kick", report.lambda_hat)),
        ("#27ae60", format!("power fit, degree = {:.3}", report.degree_hat)),
    ];
    for (i, (color, text)) in legend.iter().enumerate() {
        let y = MARGIN[2] + 16.0 + 16.0 * i as f64;
        let x = MARGIN[0] + 12.0;
        let _ = writeln!(out, r#"<rect x="{x}" y="{:.1}" width="12" height="3" fill="{color}"/>"#, y - 4.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{y:.1}" font-size="11">{text}</text>"#, x + 18.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">verdict: {}; window n in [{lo}, {hi}]</text>"#,
        WIDTH - MARGIN[1],
        MARGIN[2] + 16.0,
        report.verdict
    );
    out.push_str("</svg>\n");
    out
}

/// Bar chart of the kernel-mass fractions.
pub fn profile_chart(title: &str, profile: &KernelProfile) -> String {
    let bins = profile.fraction.len();
    let hi = profile.bin_edges.last().copied().unwrap_or(1.0);
    let f = Frame { x: [0.0, hi], y: [0.0, 1.0] };
    let mut out = header(title);
    f.axes(&mut out, "|theta_mu - theta_nu|", "kernel mass fraction");
    for (i, frac) in profile.fraction.iter().enumerate() {
        let (a, b) = (profile.bin_edges[i], profile.bin_edges[(i + 1).min(bins)]);
        let (x0, x1) = (f.px(a), f.px(b));
        let (y0, y1) = (f.py(0.0), f.py(*frac));
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="#1f4e9c" stroke="white"/>"##,
            x0,
            (x1 - x0).max(0.0),
            (y0 - y1).max(0.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
        WIDTH - MARGIN[1],
        MARGIN[2] + 16.0,
        profile.label
    );
    out.push_str("</svg>\n");
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use qsens_core::growth::{fit_growth, FitOptions};

    #[test]
    fn growth_chart_is_well_formed() {
        let s = TraceSeries::from_delta((0..=10).map(|n| (0.5 * n as f64).exp()).collect(), None, 1.0).unwrap();
        let r = fit_growth(&s, FitOptions::default()).unwrap();
        let svg = growth_chart("t", &s, &r);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("<circle").count(), 11);
        assert!(svg.contains("verdict: exponential"));
    }
}
