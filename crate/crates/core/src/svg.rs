//! Minimal deterministic SVG line/scatter plots. Coordinates are printed
//! with fixed precision so identical inputs give identical bytes.

use std::fmt::Write;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Line {
    pub label: String,
    pub color: String,
    pub width: f64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Scatter {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct HLine {
    pub y: f64,
    pub color: String,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub lines: Vec<Line>,
    pub scatters: Vec<Scatter>,
    pub hlines: Vec<HLine>,
    /// Shaded vertical band `[lo, hi]` in data coordinates.
    pub vband: Option<(f64, f64)>,
    pub x_range: Option<(f64, f64)>,
    pub log_y: bool,
}

const PANEL_W: f64 = 440.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;
const LEGEND_H: f64 = 16.0;

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let d = lo.abs().max(1.0) * 0.05;
        return (lo - d, hi + d);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    let s = format!("{:.*}", decimals, v);
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

impl Panel {
    fn data_bounds(&self) -> ((f64, f64), (f64, f64)) {
        let ty = |y: f64| if self.log_y { y.max(1e-12).log10() } else { y };
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        let mut take = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                xs = (xs.0.min(x), xs.1.max(x));
                let y = ty(y);
                ys = (ys.0.min(y), ys.1.max(y));
            }
        };
        for l in &self.lines {
            for &(x, y) in &l.points {
                if self.x_range.is_none_or(|(a, b)| x >= a && x <= b) {
                    take(x, y);
                }
            }
        }
        for s in &self.scatters {
            for &(x, y) in &s.points {
                take(x, y);
            }
        }
        for h in &self.hlines {
            if h.y.is_finite() {
                let y = ty(h.y);
                ys = (ys.0.min(y), ys.1.max(y));
            }
        }
        let xr = self.x_range.unwrap_or_else(|| padded(xs.0, xs.1));
        (xr, padded(ys.0, ys.1))
    }

    fn render(&self, out: &mut String, ox: f64, oy: f64) {
        let ((x0, x1), (y0, y1)) = self.data_bounds();
        let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
        let (left, top) = (ox + MARGIN_L, oy + MARGIN_T);
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| {
            let y = if self.log_y { y.max(1e-12).log10() } else { y };
            top + ph - (y - y0) / (y1 - y0) * ph
        };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            oy + 20.0,
            esc(&self.title)
        );
        if let Some((a, b)) = self.vband {
            let (a, b) = (a.max(x0), b.min(x1));
            if b > a {
                let _ = writeln!(
                    out,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#dddddd" opacity="0.6"/>"##,
                    sx(a),
                    top,
                    sx(b) - sx(a),
                    ph
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        );
        // x ticks
        let step = nice_step(x1 - x0);
        let mut t = (x0 / step).ceil() * step;
        while t <= x1 + 1e-9 * step {
            let x = sx(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                top + ph,
                top + ph + 4.0,
                top + ph + 16.0,
                fmt_tick(t, step)
            );
            t += step;
        }
        let step = nice_step(y1 - y0);
        let mut t = (y0 / step).ceil() * step;
        while t <= y1 + 1e-9 * step {
            let y = top + ph - (t - y0) / (y1 - y0) * ph;
            let label = if self.log_y {
                format!("1e{}", fmt_tick(t, step))
            } else {
                fmt_tick(t, step)
            };
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                left - 4.0,
                left - 6.0,
                y + 3.5,
                label
            );
            t += step;
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            top + ph + 34.0,
            esc(&self.xlabel)
        );
        let (lx, ly) = (ox + 14.0, top + ph / 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            esc(&self.ylabel)
        );
        let _ = writeln!(
            out,
            r#"<clipPath id="c{ox:.0}_{oy:.0}"><rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}"/></clipPath><g clip-path="url(#c{ox:.0}_{oy:.0})">"#
        );
        for h in &self.hlines {
            let y = sy(h.y);
            let dash = if h.dashed { r#" stroke-dasharray="5,4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<line x1="{left:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}"{dash}/>"#,
                left + pw,
                h.color
            );
        }
        for s in &self.scatters {
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.6"/>"#,
                        sx(x),
                        sy(y),
                        s.color
                    );
                }
            }
        }
        for l in &self.lines {
            let pts: Vec<String> = l
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && self.x_range.is_none_or(|(a, b)| *x >= a && *x <= b))
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if pts.len() > 1 {
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="{:.2}" points="{}"/>"#,
                    l.color,
                    l.width,
                    pts.join(" ")
                );
            }
        }
        out.push_str("</g>\n");
        let labelled: Vec<(&str, &str)> = self
            .lines
            .iter()
            .map(|l| (l.label.as_str(), l.color.as_str()))
            .chain(self.scatters.iter().map(|s| (s.label.as_str(), s.color.as_str())))
            .filter(|(l, _)| !l.is_empty())
            .collect();
        for (i, (label, color)) in labelled.iter().enumerate() {
            let y = top + 12.0 + LEGEND_H * i as f64;
            let x = left + pw - 120.0;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{y:.2}" font-size="10">{}</text>"#,
                y - 9.0,
                x + 14.0,
                esc(label)
            );
        }
    }
}

/// Renders panels side by side.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif">"#
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, PANEL_W * i as f64, 0.0);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> Panel {
        Panel {
            title: "t <1>".into(),
            xlabel: "x".into(),
            ylabel: "y".into(),
            lines: vec![Line {
                label: "a".into(),
                color: PALETTE[0].into(),
                width: 1.0,
                points: vec![(0.0, 1.0), (1.0, 3.0), (2.0, f64::NAN)],
            }],
            hlines: vec![HLine {
                y: 2.0,
                color: "black".into(),
                dashed: true,
            }],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = render(&[panel(), panel()]);
        assert_eq!(a, render(&[panel(), panel()]));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("t &lt;1&gt;"));
        assert!(!a.contains("NaN"));
        assert_eq!(a.matches("<polyline").count(), 2);
    }

    #[test]
    fn degenerate_ranges_do_not_panic() {
        let mut p = panel();
        p.lines[0].points = vec![(1.0, 1.0), (1.0, 1.0)];
        p.hlines.clear();
        assert!(!render(&[p]).contains("NaN"));
        assert!(!render(&[Panel::default()]).contains("NaN"));
    }

    #[test]
    fn ticks() {
        assert_eq!(nice_step(10.0), 2.0);
        assert_eq!(nice_step(1.0), 0.2);
        assert_eq!(fmt_tick(-0.0, 0.5), "0.0");
        assert_eq!(fmt_tick(2.5, 0.5), "2.5");
    }
}
