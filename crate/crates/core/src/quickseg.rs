//! Quickshift superpixel segmentation.
//!
//! Each pixel becomes a point `(row, col, color_multiplier * value)`. A
//! Gaussian Parzen density is estimated over a square spatial window of
//! radius `ceil(3 * kernel_size)`, then every pixel links to the nearest
//! strictly denser pixel (in the joint space) closer than `max_dist`.
//! Pixels with no such neighbour are tree roots; each tree is a segment.
//! Segments that come out spatially disconnected are split along
//! 4-connectivity, and ids are assigned in row-major order of each
//! segment's first pixel.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuickshiftParams {
    /// Standard deviation of the Parzen kernel, in pixels.
    pub kernel_size: f64,
    /// Link cutoff in the joint (row, col, scaled value) space.
    pub max_dist: f64,
    /// Scale applied to pixel values before any distance is taken. Canvases
    /// lie in [0, 1]; the default of 20 puts a desk-scale golden spectrogram
    /// at roughly 230 segments.
    pub color_multiplier: f64,
}

impl Default for QuickshiftParams {
    fn default() -> Self {
        Self {
            kernel_size: 4.0,
            max_dist: 8.0,
            color_multiplier: 20.0,
        }
    }
}

impl QuickshiftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kernel_size > 0.0) || !(self.max_dist > 0.0) {
            return Err(Error::invalid("kernel_size and max_dist must be > 0"));
        }
        if !self.color_multiplier.is_finite() || self.color_multiplier < 0.0 {
            return Err(Error::invalid("color_multiplier must be finite and >= 0"));
        }
        Ok(())
    }
}

/// A partition of a grid into segments `0..n_segments`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperpixelMap {
    rows: usize,
    cols: usize,
    labels: Vec<u32>,
    n_segments: usize,
}

impl SuperpixelMap {
    /// Builds a map from raw labels, checking the partition invariants:
    /// ids run over `0..n_segments` and every id is used.
    pub fn new(rows: usize, cols: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape(rows * cols, labels.len()));
        }
        let n_segments = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut used = vec![false; n_segments];
        for &l in &labels {
            used[l as usize] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::invalid("segment ids are not contiguous"));
        }
        Ok(Self { rows, cols, labels, n_segments })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, r: usize, c: usize) -> u32 {
        self.labels[r * self.cols + c]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Flat pixel indices of every segment.
    pub fn segment_pixels(&self) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self.segment_sizes().into_iter().map(Vec::with_capacity).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i as u32);
        }
        out
    }

    /// Whether every segment is a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        relabel_components(self.rows, self.cols, &self.labels).1 == self.n_segments
    }
}

/// Splits `labels` into 4-connected components of equal label, numbering
/// them by first pixel in row-major order. Returns the new labels and count.
fn relabel_components(rows: usize, cols: usize, labels: &[u32]) -> (Vec<u32>, usize) {
    const UNSET: u32 = u32::MAX;
    let mut out = vec![UNSET; labels.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if out[start] != UNSET {
            continue;
        }
        let label = labels[start];
        out[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / cols, p % cols);
            let mut visit = |q: usize| {
                if out[q] == UNSET && labels[q] == label {
                    out[q] = next;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - cols);
            }
            if r + 1 < rows {
                visit(p + cols);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < cols {
                visit(p + 1);
            }
        }
        next += 1;
    }
    (out, next as usize)
}

/// Parzen density of every pixel.
fn densities(image: &Grid, params: &QuickshiftParams) -> Vec<f64> {
    let (rows, cols) = image.shape();
    let sigma = params.kernel_size;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let radius = (3.0 * sigma).ceil() as isize;
    let side = (2 * radius + 1) as usize;
    let spatial: Vec<f64> = (0..side * side)
        .map(|i| {
            let dr = (i / side) as isize - radius;
            let dc = (i % side) as isize - radius;
            (-((dr * dr + dc * dc) as f64) * inv).exp()
        })
        .collect();
    let cm = params.color_multiplier;
    let vals: Vec<f64> = image.as_slice().iter().map(|&v| v as f64 * cm).collect();

    let mut density = vec![0.0; rows * cols];
    par::for_each_mut(&mut density, |p, out| {
        let (r, c) = ((p / cols) as isize, (p % cols) as isize);
        let vp = vals[p];
        let r0 = (r - radius).max(0);
        let r1 = (r + radius).min(rows as isize - 1);
        let c0 = (c - radius).max(0);
        let c1 = (c + radius).min(cols as isize - 1);
        let mut acc = 0.0;
        for qr in r0..=r1 {
            let wrow = &spatial[((qr - r + radius) as usize) * side..];
            let vrow = &vals[qr as usize * cols..];
            for qc in c0..=c1 {
                let dv = vrow[qc as usize] - vp;
                acc += wrow[(qc - c + radius) as usize] * (-dv * dv * inv).exp();
            }
        }
        *out = acc;
    });
    density
}

/// Segments `image` with quickshift.
pub fn quickshift(image: &Grid, params: &QuickshiftParams) -> Result<SuperpixelMap> {
    params.validate()?;
    if image.is_empty() {
        return Err(Error::invalid("cannot segment an empty image"));
    }
    if !image.all_finite() {
        return Err(Error::invalid("image contains non-finite values"));
    }
    let (rows, cols) = image.shape();
    let density = densities(image, params);
    let cm = params.color_multiplier;
    let vals: Vec<f64> = image.as_slice().iter().map(|&v| v as f64 * cm).collect();
    let max_d2 = params.max_dist * params.max_dist;
    let reach = params.max_dist.ceil() as isize;

    // q outranks p when strictly denser, ties going to the earlier pixel
    let outranks = |q: usize, p: usize| density[q] > density[p] || (density[q] == density[p] && q < p);

    let mut parent: Vec<usize> = (0..rows * cols).collect();
    par::for_each_mut(&mut parent, |p, out| {
        let (r, c) = ((p / cols) as isize, (p % cols) as isize);
        let mut best = p;
        let mut best_d2 = max_d2;
        for qr in (r - reach).max(0)..=(r + reach).min(rows as isize - 1) {
            for qc in (c - reach).max(0)..=(c + reach).min(cols as isize - 1) {
                let q = qr as usize * cols + qc as usize;
                if q == p || !outranks(q, p) {
                    continue;
                }
                let dv = vals[q] - vals[p];
                let d2 = ((qr - r) * (qr - r) + (qc - c) * (qc - c)) as f64 + dv * dv;
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = q;
                }
            }
        }
        *out = best;
    });

    let mut root = vec![usize::MAX; rows * cols];
    for p in 0..rows * cols {
        let mut q = p;
        let mut path = Vec::new();
        while root[q] == usize::MAX && parent[q] != q {
            path.push(q);
            q = parent[q];
        }
        let r = if root[q] == usize::MAX { q } else { root[q] };
        root[q] = r;
        for i in path {
            root[i] = r;
        }
    }
    let tree: Vec<u32> = root.iter().map(|&r| r as u32).collect();
    let (labels, _) = relabel_components(rows, cols, &tree);
    SuperpixelMap::new(rows, cols, labels)
}
