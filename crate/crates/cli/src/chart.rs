//! Minimal static SVG charts: a grid of facets holding lines, points and bands.

use std::path::Path;

use anyhow::{Context, Result};
use svg::node::element::path::Data;
use svg::node::element::{Circle, Group, Line, Path as SvgPath, Rectangle, Text};
use svg::Document;

const FACET_W: f64 = 260.0;
const FACET_H: f64 = 180.0;
const MARGIN: f64 = 36.0;
const PALETTE: [&str; 8] = ["#1b4f72", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e", "#2e4053", "#148f77", "#a04000"];

#[derive(Debug, Clone)]
pub enum Mark {
    Line(Vec<(f64, f64)>),
    Points(Vec<(f64, f64)>),
    /// (x, lower, upper)
    Band(Vec<(f64, f64, f64)>),
}

#[derive(Debug, Clone)]
pub struct Facet {
    pub title: String,
    pub marks: Vec<Mark>,
}

impl Facet {
    pub fn new(title: impl Into<String>) -> Self {
        Self { title: title.into(), marks: Vec::new() }
    }

    pub fn with(mut self, mark: Mark) -> Self {
        self.marks.push(mark);
        self
    }

    fn extent(&self) -> Option<(f64, f64, f64, f64)> {
        let mut pts = Vec::new();
        for m in &self.marks {
            match m {
                Mark::Line(p) | Mark::Points(p) => pts.extend(p.iter().copied()),
                Mark::Band(b) => pts.extend(b.iter().flat_map(|&(x, lo, hi)| [(x, lo), (x, hi)])),
            }
        }
        let pts: Vec<_> = pts.into_iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        if pts.is_empty() {
            return None;
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| pts.iter().map(sel).fold(init, f);
        let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
        let (y0, y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Some((x0, x1, y0, y1))
    }
}

fn label(x: f64, y: f64, size: f64, anchor: &str, text: &str) -> Text {
    Text::new(text).set("x", x).set("y", y).set("font-size", size).set("font-family", "sans-serif").set("text-anchor", anchor)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn render_facet(f: &Facet, ox: f64, oy: f64) -> Group {
    let mut g = Group::new().set("transform", format!("translate({ox},{oy})"));
    let (pw, ph) = (FACET_W - 2.0 * MARGIN, FACET_H - 2.0 * MARGIN);
    g = g.add(label(FACET_W / 2.0, 16.0, 12.0, "middle", &f.title));
    g = g.add(
        Rectangle::new().set("x", MARGIN).set("y", MARGIN).set("width", pw).set("height", ph).set("fill", "none").set("stroke", "#999"),
    );
    let Some((x0, x1, y0, y1)) = f.extent() else {
        return g.add(label(FACET_W / 2.0, FACET_H / 2.0, 10.0, "middle", "no data"));
    };
    let sx = move |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = move |y: f64| MARGIN + ph - (y - y0) / (y1 - y0) * ph;
    g = g
        .add(label(MARGIN, FACET_H - MARGIN + 14.0, 9.0, "start", &fmt_tick(x0)))
        .add(label(FACET_W - MARGIN, FACET_H - MARGIN + 14.0, 9.0, "end", &fmt_tick(x1)))
        .add(label(MARGIN - 3.0, FACET_H - MARGIN, 9.0, "end", &fmt_tick(y0)))
        .add(label(MARGIN - 3.0, MARGIN + 8.0, 9.0, "end", &fmt_tick(y1)));
    for (k, m) in f.marks.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        match m {
            Mark::Line(p) => {
                for w in p.windows(2) {
                    g = g.add(
                        Line::new()
                            .set("x1", sx(w[0].0))
                            .set("y1", sy(w[0].1))
                            .set("x2", sx(w[1].0))
                            .set("y2", sy(w[1].1))
                            .set("stroke", color)
                            .set("stroke-width", 1.2),
                    );
                }
            }
            Mark::Points(p) => {
                for &(x, y) in p {
                    g = g.add(Circle::new().set("cx", sx(x)).set("cy", sy(y)).set("r", 2.0).set("fill", color));
                }
            }
            Mark::Band(b) if !b.is_empty() => {
                let mut d = Data::new().move_to((sx(b[0].0), sy(b[0].2)));
                for &(x, _, hi) in &b[1..] {
                    d = d.line_to((sx(x), sy(hi)));
                }
                for &(x, lo, _) in b.iter().rev() {
                    d = d.line_to((sx(x), sy(lo)));
                }
                g = g.add(SvgPath::new().set("d", d.close()).set("fill", "#bbbbbb").set("fill-opacity", 0.6));
            }
            Mark::Band(_) => {}
        }
    }
    g
}

/// Writes `facets` as a grid with `title` on top.
pub fn save(path: &Path, title: &str, facets: &[Facet]) -> Result<()> {
    let n = facets.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (w, h) = (cols as f64 * FACET_W, rows as f64 * FACET_H + 28.0);
    let mut doc = Document::new().set("viewBox", (0, 0, w, h)).set("width", w).set("height", h);
    doc = doc.add(Rectangle::new().set("width", w).set("height", h).set("fill", "white"));
    doc = doc.add(label(w / 2.0, 20.0, 15.0, "middle", title));
    for (i, f) in facets.iter().enumerate() {
        doc = doc.add(render_facet(f, (i % cols) as f64 * FACET_W, 28.0 + (i / cols) as f64 * FACET_H));
    }
    svg::save(path, &doc).with_context(|| format!("writing {}", path.display()))
}
