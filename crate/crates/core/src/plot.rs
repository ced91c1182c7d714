//! Minimal plotting: one panel of points, segments, arrows, rectangles and
//! labels in data coordinates, rendered to SVG and to PNG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::survey::Group;

pub type Color = [u8; 3];

pub const BLACK: Color = [0, 0, 0];
pub const GREY: Color = [170, 170, 170];

pub fn group_color(g: Group) -> Color {
    match g {
        Group::Left => [31, 119, 180],
        Group::Center => [194, 24, 91],
        Group::Right => [214, 39, 40],
    }
}

/// Linear blend from white to `c` at `t` in [0, 1].
pub fn shade(c: Color, t: f64) -> Color {
    let t = t.clamp(0.0, 1.0);
    let mix = |v: u8| (255.0 - (255.0 - f64::from(v)) * t).round() as u8;
    [mix(c[0]), mix(c[1]), mix(c[2])]
}

#[derive(Debug, Clone, PartialEq)]
enum Mark {
    Point { x: f64, y: f64, r: f64, color: Color },
    Line { a: (f64, f64), b: (f64, f64), color: Color, width: f64 },
    Arrow { a: (f64, f64), b: (f64, f64), color: Color },
    Rect { x: f64, y: f64, w: f64, h: f64, color: Color },
    Text { x: f64, y: f64, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
    marks: Vec<Mark>,
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
}

const MARGIN: f64 = 50.0;

impl Figure {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Figure {
        Figure {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            width: 640,
            height: 480,
            marks: Vec::new(),
            x_range: None,
            y_range: None,
        }
    }

    pub fn x_range(mut self, lo: f64, hi: f64) -> Self {
        self.x_range = Some((lo, hi));
        self
    }

    pub fn y_range(mut self, lo: f64, hi: f64) -> Self {
        self.y_range = Some((lo, hi));
        self
    }

    pub fn point(&mut self, x: f64, y: f64, r: f64, color: Color) {
        self.marks.push(Mark::Point { x, y, r, color });
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), color: Color, width: f64) {
        self.marks.push(Mark::Line { a, b, color, width });
    }

    pub fn arrow(&mut self, a: (f64, f64), b: (f64, f64), color: Color) {
        self.marks.push(Mark::Arrow { a, b, color });
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, color: Color) {
        self.marks.push(Mark::Rect { x, y, w, h, color });
    }

    pub fn text(&mut self, x: f64, y: f64, text: impl Into<String>) {
        self.marks.push(Mark::Text { x, y, text: text.into() });
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for m in &self.marks {
            match m {
                Mark::Point { x, y, .. } | Mark::Text { x, y, .. } => {
                    xs.push(*x);
                    ys.push(*y);
                }
                Mark::Line { a, b, .. } | Mark::Arrow { a, b, .. } => {
                    xs.extend([a.0, b.0]);
                    ys.extend([a.1, b.1]);
                }
                Mark::Rect { x, y, w, h, .. } => {
                    xs.extend([*x, x + w]);
                    ys.extend([*y, y + h]);
                }
            }
        }
        let span = |v: &[f64]| {
            let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        (self.x_range.unwrap_or_else(|| span(&xs)), self.y_range.unwrap_or_else(|| span(&ys)))
    }

    fn mapper(&self) -> impl Fn(f64, f64) -> (f64, f64) {
        let ((x0, x1), (y0, y1)) = self.bounds();
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        move |x, y| {
            (
                MARGIN + (x - x0) / (x1 - x0) * (w - 2.0 * MARGIN),
                h - MARGIN - (y - y0) / (y1 - y0) * (h - 2.0 * MARGIN),
            )
        }
    }

    pub fn to_svg(&self) -> String {
        let map = self.mapper();
        let (w, h) = (self.width, self.height);
        let hex = |c: Color| format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r##"<defs><marker id="head" markerWidth="8" markerHeight="8" refX="6" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="context-stroke"/></marker></defs>"##
        );
        let (l, r, t, b) = (MARGIN, f64::from(w) - MARGIN, MARGIN, f64::from(h) - MARGIN);
        let _ = writeln!(
            s,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        let ((x0, x1), (y0, y1)) = self.bounds();
        let _ = writeln!(s, r#"<text x="{l}" y="{}">{x0:.3}</text>"#, b + 14.0);
        let _ = writeln!(s, r#"<text x="{r}" y="{}" text-anchor="end">{x1:.3}</text>"#, b + 14.0);
        let _ = writeln!(s, r#"<text x="{}" y="{b}" text-anchor="end">{y0:.3}</text>"#, l - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, l - 4.0, t + 10.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
            f64::from(w) / 2.0,
            t - 18.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            f64::from(w) / 2.0,
            b + 32.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            f64::from(h) / 2.0,
            f64::from(h) / 2.0,
            escape(&self.y_label)
        );
        for m in &self.marks {
            match m {
                Mark::Point { x, y, r, color } => {
                    let (px, py) = map(*x, *y);
                    let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="{r}" fill="{}"/>"#, hex(*color));
                }
                Mark::Line { a, b, color, width } => {
                    let (p, q) = (map(a.0, a.1), map(b.0, b.1));
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="{width}"/>"#,
                        p.0,
                        p.1,
                        q.0,
                        q.1,
                        hex(*color)
                    );
                }
                Mark::Arrow { a, b, color } => {
                    let (p, q) = (map(a.0, a.1), map(b.0, b.1));
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2" marker-end="url(#head)"/>"#,
                        p.0,
                        p.1,
                        q.0,
                        q.1,
                        hex(*color)
                    );
                }
                Mark::Rect { x, y, w, h, color } => {
                    let (p, q) = (map(*x, *y), map(x + w, y + h));
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                        p.0.min(q.0),
                        p.1.min(q.1),
                        (q.0 - p.0).abs(),
                        (q.1 - p.1).abs(),
                        hex(*color)
                    );
                }
                Mark::Text { x, y, text } => {
                    let (px, py) = map(*x, *y);
                    let _ = writeln!(
                        s,
                        r#"<text x="{px:.2}" y="{py:.2}" text-anchor="middle">{}</text>"#,
                        escape(text)
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }

    /// Raster rendering of the geometry; labels are left to the SVG.
    pub fn to_png(&self) -> RgbImage {
        let map = self.mapper();
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb([255, 255, 255]));
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let frame = [
            ((MARGIN, MARGIN), (w - MARGIN, MARGIN)),
            ((w - MARGIN, MARGIN), (w - MARGIN, h - MARGIN)),
            ((w - MARGIN, h - MARGIN), (MARGIN, h - MARGIN)),
            ((MARGIN, h - MARGIN), (MARGIN, MARGIN)),
        ];
        for (a, b) in frame {
            draw_line(&mut img, a, b, BLACK, 1.0);
        }
        for m in &self.marks {
            match m {
                Mark::Point { x, y, r, color } => fill_circle(&mut img, map(*x, *y), *r, *color),
                Mark::Line { a, b, color, width } => draw_line(&mut img, map(a.0, a.1), map(b.0, b.1), *color, *width),
                Mark::Arrow { a, b, color } => {
                    let (p, q) = (map(a.0, a.1), map(b.0, b.1));
                    draw_line(&mut img, p, q, *color, 2.0);
                    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
                    let n = (dx * dx + dy * dy).sqrt();
                    if n > 0.0 {
                        let (ux, uy) = (dx / n, dy / n);
                        for side in [-1.0, 1.0] {
                            let tip = (q.0 - 8.0 * ux + side * 4.0 * uy, q.1 - 8.0 * uy - side * 4.0 * ux);
                            draw_line(&mut img, q, tip, *color, 2.0);
                        }
                    }
                }
                Mark::Rect { x, y, w, h, color } => {
                    let (p, q) = (map(*x, *y), map(x + w, y + h));
                    fill_rect(&mut img, p, q, *color);
                }
                Mark::Text { .. } => {}
            }
        }
        img
    }

    /// Writes `{stem}.svg` and `{stem}.png`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        let svg = dir.join(format!("{stem}.svg"));
        let png = dir.join(format!("{stem}.png"));
        fs::write(&svg, self.to_svg())?;
        self.to_png()
            .save(&png)
            .map_err(|e| Error::Report(format!("{}: {e}", png.display())))?;
        Ok(vec![svg, png])
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Color) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn fill_circle(img: &mut RgbImage, c: (f64, f64), r: f64, color: Color) {
    let r = r.max(0.5);
    let (x0, x1) = ((c.0 - r).floor() as i64, (c.0 + r).ceil() as i64);
    let (y0, y1) = ((c.1 - r).floor() as i64, (c.1 + r).ceil() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - c.0, y as f64 - c.1);
            if dx * dx + dy * dy <= r * r {
                put(img, x, y, color);
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Color, width: f64) {
    let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs())).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let p = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if width <= 1.0 {
            put(img, p.0.round() as i64, p.1.round() as i64, color);
        } else {
            fill_circle(img, p, width / 2.0, color);
        }
    }
}

fn fill_rect(img: &mut RgbImage, p: (f64, f64), q: (f64, f64), color: Color) {
    let (x0, x1) = (p.0.min(q.0).round() as i64, p.0.max(q.0).round() as i64);
    let (y0, y1) = (p.1.min(q.1).round() as i64, p.1.max(q.1).round() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            put(img, x, y, color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_marks() {
        let mut f = Figure::new("t", "x", "y");
        f.point(0.0, 0.0, 3.0, BLACK);
        f.arrow((0.0, 0.0), (1.0, 1.0), GREY);
        f.text(0.5, 0.5, "a<b");
        let s = f.to_svg();
        assert!(s.contains("<circle"));
        assert!(s.contains("marker-end"));
        assert!(s.contains("a&lt;b"));
        let png = f.to_png();
        assert_eq!((png.width(), png.height()), (640, 480));
    }

    #[test]
    fn degenerate_bounds_are_padded() {
        let mut f = Figure::new("", "", "");
        f.point(1.0, 1.0, 2.0, BLACK);
        let ((a, b), (c, d)) = f.bounds();
        assert!(a < 1.0 && b > 1.0 && c < 1.0 && d > 1.0);
    }
}
