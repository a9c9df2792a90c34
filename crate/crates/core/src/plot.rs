//! Minimal SVG output: line plots, confusion matrices and heatmaps.
//!
//! Every document opens (after the XML declaration) with a provenance
//! comment so a plot can be traced back to the run that produced it. Heatmaps embed a PNG as a data URI.

use std::fmt::Write as _;
use std::io::Cursor;

use base64::Engine as _;

use crate::error::{Error, Result};
use crate::grid::Grid;

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: [f64; 4] = [40.0, 20.0, 50.0, 70.0]; // top, right, bottom, left
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Symmetric band drawn as `y ± band`.
    pub band: Option<Vec<f64>>,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y, band: None }
    }

    /// Series over `0..y.len()` scaled by `step`.
    pub fn indexed(label: impl Into<String>, y: Vec<f64>, step: f64) -> Self {
        let x = (0..y.len()).map(|i| i as f64 * step).collect();
        Self::new(label, x, y)
    }

    pub fn with_band(mut self, band: Vec<f64>) -> Self {
        self.band = Some(band);
        self
    }

    fn check(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::shape(self.x.len(), self.y.len()));
        }
        if let Some(b) = &self.band {
            if b.len() != self.y.len() {
                return Err(Error::shape(self.y.len(), b.len()));
            }
        }
        Ok(())
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64, provenance: &str) {
    // "--" is not allowed inside XML comments
    let prov = provenance.replace("--", "- -");
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(out, "<!-- provenance: {prov} -->");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line plot of one or more series sharing axes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], provenance: &str) -> Result<String> {
    if series.is_empty() {
        return Err(Error::invalid("line plot needs at least one series"));
    }
    for s in series {
        s.check()?;
    }
    let (x0, x1) = extent(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = extent(series.iter().flat_map(|s| {
        let band = s.band.clone().unwrap_or_else(|| vec![0.0; s.y.len()]);
        s.y.iter().zip(band).flat_map(|(&y, b)| [y - b, y + b]).collect::<Vec<_>>()
    }));
    let [top, right, bottom, left] = MARGIN;
    let pw = W - left - right;
    let ph = H - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    header(&mut out, W, H, provenance);
    let _ = writeln!(out, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, escape(title));
    let _ = writeln!(
        out,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>"
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", sx(fx), top + ph + 16.0, tick(fx));
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", left - 6.0, sy(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", left + pw / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        "<text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut pts: Vec<String> = s.x.iter().zip(&s.y).zip(band).map(|((&x, &y), &b)| format!("{:.2},{:.2}", sx(x), sy(y + b))).collect();
            pts.extend(s.x.iter().zip(&s.y).zip(band).rev().map(|((&x, &y), &b)| format!("{:.2},{:.2}", sx(x), sy(y - b))));
            let _ = writeln!(out, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.25\" stroke=\"none\"/>", pts.join(" "));
        }
        let pts: Vec<String> = s.x.iter().zip(&s.y).map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", pts.join(" "));
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(out, "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", left + pw - 150.0, left + pw - 130.0);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", left + pw - 125.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// `confusion[truth][predicted]` as a shaded table.
pub fn confusion_svg(confusion: &[Vec<u64>], provenance: &str) -> Result<String> {
    let k = confusion.len();
    if k == 0 || confusion.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("confusion matrix must be square and non-empty"));
    }
    let cell = 36.0;
    let (left, top) = (90.0, 60.0);
    let size_w = left + cell * k as f64 + 20.0;
    let size_h = top + cell * k as f64 + 40.0;
    let mut out = String::new();
    header(&mut out, size_w, size_h, provenance);
    let _ = writeln!(out, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">Confusion matrix</text>", size_w / 2.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"44\" text-anchor=\"middle\">predicted</text>", left + cell * k as f64 / 2.0);
    let _ = writeln!(out, "<text transform=\"translate(20 {}) rotate(-90)\" text-anchor=\"middle\">true</text>", top + cell * k as f64 / 2.0);
    for (t, row) in confusion.iter().enumerate() {
        let total = row.iter().sum::<u64>().max(1) as f64;
        let y = top + cell * t as f64;
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{t}</text>", left - 6.0, y + cell / 2.0 + 4.0);
        for (p, &n) in row.iter().enumerate() {
            let x = left + cell * p as f64;
            let shade = 255.0 - 200.0 * n as f64 / total;
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({0:.0},{0:.0},255)\" stroke=\"#ccc\"/>",
                shade
            );
            let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{n}</text>", x + cell / 2.0, y + cell / 2.0 + 4.0);
        }
    }
    for p in 0..k {
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{p}</text>", left + cell * p as f64 + cell / 2.0, top + cell * k as f64 + 16.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Encodes a grid as an 8-bit grayscale PNG, min-max scaled, row 0 at the
/// bottom (low frequencies down, as spectrograms are usually drawn).
pub fn grid_png(grid: &Grid) -> Result<Vec<u8>> {
    if grid.is_empty() {
        return Err(Error::invalid("cannot render an empty grid"));
    }
    let (lo, hi) = (grid.min(), grid.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (rows, cols) = grid.shape();
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        pixels.extend(grid.row(r).iter().map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let img = image::GrayImage::from_raw(cols as u32, rows as u32, pixels).expect("buffer sized to grid");
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageOutputFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Heatmap of `grid` with time on the x axis and frequency bins on the y axis.
pub fn heatmap_svg(grid: &Grid, title: &str, provenance: &str) -> Result<String> {
    let png = grid_png(grid)?;
    let (rows, cols) = grid.shape();
    let scale = (448.0 / rows.max(cols) as f64).max(1.0);
    let (iw, ih) = (cols as f64 * scale, rows as f64 * scale);
    let (left, top) = (60.0, 40.0);
    let mut out = String::new();
    header(&mut out, iw + left + 20.0, ih + top + 40.0, provenance);
    let _ = writeln!(out, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", left + iw / 2.0, escape(title));
    let _ = writeln!(
        out,
        "<image x=\"{left}\" y=\"{top}\" width=\"{iw}\" height=\"{ih}\" preserveAspectRatio=\"none\" \
         style=\"image-rendering:pixelated\" href=\"data:image/png;base64,{}\"/>",
        base64::engine::general_purpose::STANDARD.encode(png)
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">time frame</text>", left + iw / 2.0, top + ih + 24.0);
    let _ = writeln!(out, "<text transform=\"translate(20 {}) rotate(-90)\" text-anchor=\"middle\">frequency bin</text>", top + ih / 2.0);
    out.push_str("</svg>\n");
    Ok(out)
}
