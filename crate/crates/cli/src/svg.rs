//! Static SVG figures: annotated heatmaps and signed-marker scatter plots.

use std::fmt::Write;

use o2b_core::io::Provenance;

use crate::provenance::svg_comment;

const CELL_H: f64 = 26.0;
const FONT: &str = "font-family=\"sans-serif\"";
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Colour ramp for heatmap cells.
#[derive(Debug, Clone, Copy)]
pub enum Scale {
    /// Blue below zero, red above, white at zero; saturates at `limit`.
    Diverging { limit: f64 },
    /// White at zero to red at `max`.
    Sequential { max: f64 },
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c: Vec<u8> = (0..3).map(|i| (a[i] + (b[i] - a[i]) * t).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

impl Scale {
    fn colour(self, v: f64) -> String {
        const WHITE: [f64; 3] = [255.0, 255.0, 255.0];
        const RED: [f64; 3] = [202.0, 0.0, 32.0];
        const BLUE: [f64; 3] = [5.0, 113.0, 176.0];
        match self {
            Scale::Diverging { limit } if v < 0.0 => mix(WHITE, BLUE, -v / limit),
            Scale::Diverging { limit } => mix(WHITE, RED, v / limit),
            Scale::Sequential { max } => mix(WHITE, RED, if max > 0.0 { v / max } else { 0.0 }),
        }
    }
}

pub struct Heatmap<'a> {
    pub title: &'a str,
    pub rows: &'a [String],
    pub cols: &'a [String],
    /// Row-major; `None` cells are drawn grey.
    pub values: &'a [Vec<Option<f64>>],
    pub labels: &'a [Vec<String>],
    pub scale: Scale,
}

pub fn heatmap(h: &Heatmap<'_>, provenance: &Provenance) -> String {
    let left = 12.0 + 7.0 * h.rows.iter().map(|r| r.chars().count()).max().unwrap_or(0) as f64;
    let top = 40.0 + 6.0 * h.cols.iter().map(|c| c.chars().count()).max().unwrap_or(0) as f64;
    let widest = h.labels.iter().flatten().map(|l| l.chars().count()).max().unwrap_or(0);
    let cell_w = (5.5 * widest as f64 + 10.0).max(36.0);
    let width = left + cell_w * h.cols.len() as f64 + 20.0;
    let height = top + CELL_H * h.rows.len() as f64 + 20.0;
    let mut s = String::new();
    writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">").unwrap();
    s.push_str(&svg_comment(provenance));
    writeln!(s, "<text x=\"{left:.1}\" y=\"20\" {FONT} font-size=\"14\">{}</text>", escape(h.title)).unwrap();
    for (c, label) in h.cols.iter().enumerate() {
        let x = left + cell_w * (c as f64 + 0.5);
        writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" transform=\"rotate(-60 {x:.1} {:.1})\">{}</text>",
            top - 4.0,
            top - 4.0,
            escape(label)
        )
        .unwrap();
    }
    for (r, label) in h.rows.iter().enumerate() {
        let y = top + CELL_H * r as f64;
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" text-anchor=\"end\">{}</text>",
            left - 4.0,
            y + CELL_H * 0.65,
            escape(label)
        )
        .unwrap();
        for c in 0..h.cols.len() {
            let x = left + cell_w * c as f64;
            let fill = h.values[r][c].map_or("#d9d9d9".to_string(), |v| h.scale.colour(v));
            writeln!(s, "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell_w:.1}\" height=\"{CELL_H}\" fill=\"{fill}\" stroke=\"#ffffff\"/>").unwrap();
            writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"9\" text-anchor=\"middle\">{}</text>",
                x + cell_w / 2.0,
                y + CELL_H * 0.65,
                escape(&h.labels[r][c])
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One category's positive and negative value per column.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Upward triangles mark positive values and downward triangles negative ones;
/// marker size grows with magnitude. Zero values are not drawn.
pub fn scatter(title: &str, columns: &[String], series: &[Series], provenance: &Provenance) -> String {
    let (left, top, plot_w, plot_h) = (70.0, 40.0, 90.0 * columns.len().max(1) as f64, 320.0);
    let width = left + plot_w + 180.0;
    let height = top + plot_h + 90.0;
    let max_abs = series.iter().flat_map(|s| s.points.iter().flat_map(|(p, n)| [p.abs(), n.abs()])).fold(0.0, f64::max);
    let lim = if max_abs > 0.0 { max_abs * 1.1 } else { 1.0 };
    let y_of = |v: f64| top + plot_h / 2.0 - v / lim * plot_h / 2.0;
    let step = plot_w / columns.len().max(1) as f64;

    let mut s = String::new();
    writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">").unwrap();
    s.push_str(&svg_comment(provenance));
    writeln!(s, "<text x=\"{left:.1}\" y=\"20\" {FONT} font-size=\"14\">{}</text>", escape(title)).unwrap();
    writeln!(s, "<rect x=\"{left:.1}\" y=\"{top:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#444444\"/>").unwrap();
    let zero = y_of(0.0);
    writeln!(s, "<line x1=\"{left:.1}\" y1=\"{zero:.1}\" x2=\"{:.1}\" y2=\"{zero:.1}\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>", left + plot_w).unwrap();
    for v in [-lim / 1.1, 0.0, lim / 1.1] {
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"9\" text-anchor=\"end\">{v:.3e}</text>",
            left - 4.0,
            y_of(v) + 3.0
        )
        .unwrap();
    }
    for (c, label) in columns.iter().enumerate() {
        let x = left + step * (c as f64 + 0.5);
        writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" text-anchor=\"middle\">{}</text>",
            top + plot_h + 16.0,
            escape(label)
        )
        .unwrap();
    }
    let lanes = series.len().max(1) as f64;
    for (i, ser) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let offset = (i as f64 + 0.5) / lanes - 0.5;
        for (c, &(pos, neg)) in ser.points.iter().enumerate() {
            let x = left + step * (c as f64 + 0.5 + 0.6 * offset);
            for v in [pos, neg] {
                if v == 0.0 {
                    continue;
                }
                let r = 3.0 + 9.0 * v.abs() / max_abs;
                let y = y_of(v);
                let pts = if v > 0.0 {
                    [(x, y - r), (x - r, y + r * 0.8), (x + r, y + r * 0.8)]
                } else {
                    [(x, y + r), (x - r, y - r * 0.8), (x + r, y - r * 0.8)]
                };
                let pts: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
                writeln!(s, "<polygon points=\"{}\" fill=\"{colour}\" fill-opacity=\"0.8\"/>", pts.join(" ")).unwrap();
            }
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + plot_w + 16.0;
        writeln!(s, "<rect x=\"{lx:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{colour}\"/>", ly - 9.0)
            .unwrap();
        writeln!(s, "<text x=\"{:.1}\" y=\"{ly:.1}\" {FONT} font-size=\"11\">{}</text>", lx + 14.0, escape(&ser.name))
            .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
