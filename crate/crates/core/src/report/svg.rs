//! Minimal fixed-layout SVG line and bar charts.

use std::fmt::Write;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 44.0;
const LEGEND_H: f64 = 22.0;
const TITLE_H: f64 = 30.0;
const COLUMNS: usize = 2;

const PALETTE: [&str; 8] = [
    "#4c4c4c", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Lines,
    /// Grouped bars; each series' x values are category indices.
    Bars,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    /// Category labels at x = 0, 1, ...; `None` means numeric x.
    pub categories: Option<Vec<String>>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub kind: Kind,
    pub panels: Vec<Panel>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round-number tick step covering `span` in about five intervals.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }
}

fn bounds(panel: &Panel, kind: Kind) -> (f64, f64, f64, f64) {
    let pts = || panel.series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax) = match &panel.categories {
        Some(c) => (-0.5, c.len() as f64 - 0.5),
        None => pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0))),
    };
    let (mut ymin, mut ymax) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if kind == Kind::Bars {
        ymin = ymin.min(0.0);
        ymax = ymax.max(0.0);
    }
    if !xmin.is_finite() || !xmax.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    if !ymin.is_finite() || !ymax.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    if ymax <= ymin {
        (ymin, ymax) = (ymin - 0.5, ymax + 0.5);
    }
    let pad = 0.05 * (ymax - ymin);
    (xmin, xmax, ymin - pad, ymax + pad)
}

fn panel_svg(out: &mut String, panel: &Panel, kind: Kind, left: f64, top: f64, x_label: &str, y_label: &str) {
    let (xmin, xmax, ymin, ymax) = bounds(panel, kind);
    let f = Frame {
        x0: left + MARGIN_L,
        y0: top + MARGIN_T,
        w: PANEL_W - MARGIN_L - MARGIN_R,
        h: PANEL_H - MARGIN_T - MARGIN_B,
        xmin,
        xmax,
        ymin,
        ymax,
    };
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"##,
        f.x0 + f.w / 2.0,
        top + 18.0,
        esc(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
        f.x0, f.y0, f.w, f.h
    );

    let step = tick_step(ymax - ymin);
    let mut t = (ymin / step).ceil() * step;
    while t <= ymax + 1e-12 {
        let y = f.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e5e5e5"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"##,
            f.x0,
            f.x0 + f.w,
            f.x0 - 4.0,
            y + 3.5,
            tick_label(t, step)
        );
        t += step;
    }
    match &panel.categories {
        Some(cats) => {
            for (i, c) in cats.iter().enumerate() {
                let _ = writeln!(
                    out,
                    r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
                    f.px(i as f64),
                    f.y0 + f.h + 14.0,
                    esc(c)
                );
            }
        }
        None => {
            let step = tick_step(xmax - xmin);
            let mut t = (xmin / step).ceil() * step;
            while t <= xmax + 1e-12 {
                let _ = writeln!(
                    out,
                    r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
                    f.px(t),
                    f.y0 + f.h + 14.0,
                    tick_label(t, step)
                );
                t += step;
            }
        }
    }
    if ymin < 0.0 && ymax > 0.0 {
        let y = f.py(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#666"/>"##,
            f.x0,
            f.x0 + f.w
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
        f.x0 + f.w / 2.0,
        f.y0 + f.h + 32.0,
        esc(x_label)
    );
    let (lx, ly) = (left + 14.0, f.y0 + f.h / 2.0);
    let _ = writeln!(
        out,
        r##"<text x="{lx:.1}" y="{ly:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.1} {ly:.1})">{}</text>"##,
        esc(y_label)
    );

    let n = panel.series.len().max(1) as f64;
    for (si, s) in panel.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        match kind {
            Kind::Lines => {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
                    .collect();
                if pts.len() > 1 {
                    let _ = writeln!(
                        out,
                        r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"##,
                        pts.join(" ")
                    );
                }
                if s.points.len() <= 12 {
                    for &(x, y) in &s.points {
                        let _ = writeln!(
                            out,
                            r##"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"##,
                            f.px(x),
                            f.py(y)
                        );
                    }
                }
            }
            Kind::Bars => {
                let slot = 0.8 / n;
                for &(x, y) in &s.points {
                    let xa = f.px(x - 0.4 + slot * si as f64);
                    let xb = f.px(x - 0.4 + slot * (si as f64 + 1.0));
                    let (ya, yb) = (f.py(y.max(0.0)), f.py(y.min(0.0)));
                    let _ = writeln!(
                        out,
                        r##"<rect x="{xa:.1}" y="{ya:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"##,
                        xb - xa,
                        yb - ya
                    );
                }
            }
        }
    }
}

impl Chart {
    pub fn render(&self) -> String {
        let cols = self.panels.len().clamp(1, COLUMNS);
        let rows = self.panels.len().div_ceil(cols).max(1);
        let labels: Vec<&str> = {
            let mut l: Vec<&str> = Vec::new();
            for p in &self.panels {
                for s in &p.series {
                    if !l.contains(&s.label.as_str()) {
                        l.push(&s.label);
                    }
                }
            }
            l
        };
        let width = PANEL_W * cols as f64;
        let height = TITLE_H + LEGEND_H + PANEL_H * rows as f64;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"##
        );
        let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="20" font-size="15" text-anchor="middle">{}</text>"##,
            width / 2.0,
            esc(&self.title)
        );
        let mut x = 12.0;
        for (i, l) in labels.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                out,
                r##"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"##,
                TITLE_H,
                x + 14.0,
                TITLE_H + 9.0,
                esc(l)
            );
            x += 22.0 + 6.5 * l.chars().count() as f64;
        }
        // Series colors follow legend order across panels.
        for (i, p) in self.panels.iter().enumerate() {
            let mut panel = p.clone();
            let mut ordered = Vec::new();
            for l in &labels {
                ordered.push(
                    panel
                        .series
                        .iter()
                        .find(|s| s.label == *l)
                        .cloned()
                        .unwrap_or(Series { label: l.to_string(), points: Vec::new() }),
                );
            }
            panel.series = ordered;
            let left = PANEL_W * (i % cols) as f64;
            let top = TITLE_H + LEGEND_H + PANEL_H * (i / cols) as f64;
            panel_svg(&mut out, &panel, self.kind, left, top, &self.x_label, &self.y_label);
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks() {
        assert_eq!(tick_step(1.0), 0.2);
        assert_eq!(tick_step(100.0), 20.0);
        assert_eq!(tick_step(3.0), 1.0);
        assert_eq!(tick_label(-0.0, 0.2), "0.0");
        assert_eq!(tick_label(0.4, 0.2), "0.4");
        assert_eq!(tick_label(40.0, 20.0), "40");
    }

    #[test]
    fn renders_well_formed_and_stable() {
        let chart = Chart {
            title: "t <1>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            kind: Kind::Bars,
            panels: vec![Panel {
                title: "p".into(),
                categories: Some(vec!["a".into(), "b".into()]),
                series: vec![Series { label: "s".into(), points: vec![(0.0, -1.0), (1.0, 2.0)] }],
            }],
        };
        let a = chart.render();
        assert_eq!(a, chart.render());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("t &lt;1&gt;"));
        assert!(!a.contains("NaN"));
    }
}
