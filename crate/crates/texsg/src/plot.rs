//! Minimal SVG line and scatter plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Horizontal reference lines.
    pub guides: Vec<(String, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Self::default() }
    }

    pub fn series(mut self, label: &str, style: Style, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points, style });
        self
    }

    pub fn render(&self) -> String {
        let ty = |y: f64| if self.log_y { y.max(1e-300).log10() } else { y };
        let pts = || self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let mut x0 = pts().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let mut x1 = pts().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let ys = pts().map(|p| ty(p.1)).chain(self.guides.iter().map(|g| ty(g.1)));
        let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let sy = |y: f64| H - BOTTOM - (ty(y) - y0) / (y1 - y0) * (H - TOP - BOTTOM);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let px = LEFT + f * (W - LEFT - RIGHT);
            let py = H - BOTTOM - f * (H - TOP - BOTTOM);
            let ylab = if self.log_y { nice(10f64.powf(yv)) } else { nice(yv) };
            let _ = writeln!(s, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, nice(xv));
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{ylab}</text>"#, LEFT - 6.0, py + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for (label, y) in &self.guides {
            let py = sy(*y);
            let _ = writeln!(s, r##"<line x1="{LEFT}" x2="{}" y1="{py:.2}" y2="{py:.2}" stroke="#888" stroke-dasharray="4 3"/>"##, W - RIGHT);
            let _ = writeln!(s, r##"<text x="{}" y="{:.1}" text-anchor="end" fill="#555">{}</text>"##, W - RIGHT - 4.0, py - 4.0, esc(label));
        }
        for (i, ser) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            let valid: Vec<_> = ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            match ser.style {
                Style::Line => {
                    let d: Vec<String> = valid.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                    let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, d.join(" "));
                }
                Style::Points => {
                    for p in valid {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, sx(p.0), sy(p.1));
                    }
                }
            }
            let ly = TOP + 16.0 + 16.0 * i as f64;
            let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, LEFT + 10.0, ly - 9.0);
            let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, LEFT + 26.0, esc(&ser.label));
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).with_context(|| format!("cannot write {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_and_escaped() {
        let mut p = Plot::new("a < b", "x", "y").series("s&t", Style::Line, vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)]);
        p.guides.push(("limit".into(), 1.5));
        let svg = p.render();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b") && svg.contains("s&amp;t"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_and_log_plots_render() {
        assert!(Plot::new("", "", "").render().contains("</svg>"));
        let mut p = Plot::new("t", "x", "y").series("a", Style::Points, vec![(1.0, 1e-3), (2.0, 1e2)]);
        p.log_y = true;
        assert!(!p.render().contains("inf"));
    }
}
