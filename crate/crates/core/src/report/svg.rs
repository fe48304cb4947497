//! Minimal standalone SVG charts: lines with optional bands, scatter plots
//! and labelled heatmaps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 64.0;
const MR: f64 = 24.0;
const MT: f64 = 40.0;
const MB: f64 = 52.0;

/// Diverging blue/white/red map, sampled at three anchors.
pub const COOL: (u8, u8, u8) = (59, 76, 192);
pub const MID: (u8, u8, u8) = (221, 221, 221);
pub const WARM: (u8, u8, u8) = (180, 4, 38);

const PALETTE: [&str; 6] = ["#b40426", "#3b4cc0", "#2ca02c", "#ff7f0e", "#9467bd", "#555555"];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

/// Colour of `t` in `[-1, 1]`; values outside are clamped.
pub fn diverging(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let (from, to, u) = if t < 0.0 { (MID, COOL, -t) } else { (MID, WARM, t) };
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(from.0, to.0, u),
        lerp(from.1, to.1, u),
        lerp(from.2, to.2, u)
    )
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        width / 2.0,
        escape(title)
    );
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (bx, by) = (ML, H - MB);
        let _ = writeln!(
            out,
            "<line x1=\"{bx}\" y1=\"{by}\" x2=\"{:.1}\" y2=\"{by}\" stroke=\"black\"/>\n<line x1=\"{bx}\" y1=\"{MT}\" x2=\"{bx}\" y2=\"{by}\" stroke=\"black\"/>",
            W - MR
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                self.px(xv),
                by + 16.0,
                tick(xv),
                bx - 6.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
            (ML + W - MR) / 2.0,
            H - 12.0,
            escape(xlabel),
            (MT + H - MB) / 2.0,
            (MT + H - MB) / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a >= 1e5 || a < 1e-2) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

pub struct LineSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, lower, upper)` drawn as a shaded band under the line.
    pub band: Option<Vec<(f64, f64, f64)>>,
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[LineSeries]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| {
        s.points
            .iter()
            .map(|p| p.1)
            .chain(s.band.iter().flatten().flat_map(|b| [b.1, b.2]))
    });
    let f = Frame::fit(xs, ys);
    let mut out = String::new();
    header(&mut out, W, H, title);
    f.axes(&mut out, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            if !band.is_empty() {
                let mut pts: Vec<String> = band.iter().map(|b| format!("{:.2},{:.2}", f.px(b.0), f.py(b.2))).collect();
                pts.extend(band.iter().rev().map(|b| format!("{:.2},{:.2}", f.px(b.0), f.py(b.1))));
                let _ = writeln!(
                    out,
                    "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
                    pts.join(" ")
                );
            }
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>",
            ML + 10.0,
            MT + 14.0 + 14.0 * i as f64,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Points `(x, y, value)`; colour encodes value over its range.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, f64)]) -> String {
    let f = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.2), b.max(p.2)));
    let mut out = String::new();
    header(&mut out, W, H, title);
    f.axes(&mut out, xlabel, ylabel);
    for p in points {
        let t = if hi > lo { 2.0 * (p.2 - lo) / (hi - lo) - 1.0 } else { 0.0 };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
            f.px(p.0),
            f.py(p.1),
            diverging(t)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grid of cells coloured on a symmetric scale `[-m, m]`, `m` the largest
/// `|value|`, each labelled with its text.
pub fn heatmap(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<f64>],
    labels: &[Vec<String>],
) -> String {
    let cell = 56.0;
    let left = 110.0;
    let top = 90.0;
    let width = left + cell * col_labels.len() as f64 + 20.0;
    let height = top + cell * row_labels.len() as f64 + 20.0;
    let m = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if m > 0.0 { m } else { 1.0 };
    let mut out = String::new();
    header(&mut out, width, height, title);
    for (j, c) in col_labels.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"start\" transform=\"rotate(-45 {x:.1} {:.1})\">{}</text>",
            top - 8.0,
            top - 8.0,
            escape(c)
        );
    }
    for (i, r) in row_labels.iter().enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            y + cell / 2.0 + 4.0,
            escape(r)
        );
        for j in 0..col_labels.len() {
            let v = values[i][j];
            let x = left + cell * j as f64;
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"white\" data-value=\"{v}\"/>\n<text class=\"cell-label\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                diverging(v / scale),
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                escape(&labels[i][j])
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(diverging(1.0), "#b40426");
        assert_eq!(diverging(-1.0), "#3b4cc0");
        assert_eq!(diverging(0.0), "#dddddd");
        assert_eq!(diverging(7.0), diverging(1.0));
    }

    #[test]
    fn single_series_has_one_polyline() {
        let s = line_chart(
            "t",
            "x",
            "y",
            &[LineSeries {
                name: "a<b".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
                band: Some(vec![(0.0, 0.5, 1.5), (1.0, 1.5, 2.5)]),
            }],
        );
        let doc = roxmltree::Document::parse(&s).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 1);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polygon")).count(), 1);
    }

    #[test]
    fn heatmap_cells_and_max_colour() {
        let values: Vec<Vec<f64>> = (0..9)
            .map(|i| (0..9).map(|j| if i == j { 1.0 } else { (i as f64 - j as f64) / 20.0 }).collect())
            .collect();
        let labels: Vec<Vec<String>> = values.iter().map(|r| r.iter().map(|v| format!("{v:.2}")).collect()).collect();
        let names: Vec<String> = (0..9).map(|i| format!("p{i}")).collect();
        let s = heatmap("m", &names, &names, &values, &labels);
        let doc = roxmltree::Document::parse(&s).unwrap();
        let cells: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).collect();
        assert_eq!(cells.len(), 81);
        assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("cell-label")).count(), 81);
        let max = cells
            .iter()
            .max_by(|a, b| {
                let v = |n: &roxmltree::Node| n.attribute("data-value").unwrap().parse::<f64>().unwrap();
                v(a).total_cmp(&v(b))
            })
            .unwrap();
        assert_eq!(max.attribute("fill"), Some("#b40426"));
    }

    #[test]
    fn scatter_is_well_formed() {
        let s = scatter("p", "t1", "t2", &[(0.0, 0.0, 1.0), (1.0, 2.0, 3.0)]);
        let doc = roxmltree::Document::parse(&s).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 2);
    }
}
