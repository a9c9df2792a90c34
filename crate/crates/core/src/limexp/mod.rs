//! LIME for spectrogram canvases.
//!
//! Superpixels are switched on and off at random, the black-box classifier
//! scores every perturbed canvas, and a locally weighted ridge model of the
//! target-class probability on the on/off bits ranks the superpixels. The
//! explanation keeps the top-N segments with positive coefficients.

pub mod ridge;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::Classifier;
use crate::quickseg::SuperpixelMap;

pub use ridge::{weighted_ridge, RidgeFit};

/// Coefficients at or below this fraction of the observed target-probability
/// range are not treated as supporting. Relative, because a confident model
/// moves its probability by far less than any fixed threshold.
pub const POSITIVE_EPS: f64 = 1e-6;

/// Value written into hidden superpixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum MaskFill {
    /// Mean of the superpixel's own pixels.
    SegmentMean,
    /// Mean of the whole canvas.
    ImageMean,
    Constant(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMode {
    /// Top-N superpixels supporting the target class.
    Supporting,
    /// Top-N superpixels arguing against the target class.
    Opposing,
    /// Top-N superpixels by absolute influence.
    Influential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeParams {
    pub n_samples: usize,
    /// Bandwidth of the proximity kernel over the hidden fraction.
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub top_n: usize,
    pub mask_fill: MaskFill,
    pub mode: ExplainMode,
    /// Perturbed canvases sent to the classifier per call.
    pub batch_size: usize,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            kernel_width: 0.25,
            ridge_lambda: 1.0,
            top_n: 3,
            mask_fill: MaskFill::SegmentMean,
            mode: ExplainMode::Supporting,
            batch_size: 64,
        }
    }
}

impl LimeParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::invalid("n_samples must be >= 2"));
        }
        if self.top_n == 0 || self.batch_size == 0 {
            return Err(Error::invalid("top_n and batch_size must be >= 1"));
        }
        if !(self.kernel_width > 0.0) || !(self.ridge_lambda >= 0.0) {
            return Err(Error::invalid("kernel_width must be > 0 and ridge_lambda >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; true where one of `top_segments` covers the pixel.
    pub mask: Vec<bool>,
    pub target_class: u32,
    /// One local-model coefficient per superpixel.
    pub superpixel_weights: Vec<f64>,
    pub intercept: f64,
    /// Reported segments, strongest first.
    pub top_segments: Vec<usize>,
    /// Leave-one-out R² of the surrogate over the perturbation samples.
    pub local_r2: f64,
    /// Fewer than `top_n` segments had a positive coefficient.
    pub short_of_positive: bool,
}

impl Explanation {
    pub fn selected_pixels(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Precomputed fill values for one canvas/segmentation pair.
pub struct Perturber<'a> {
    image: &'a Grid,
    segments: Vec<Vec<u32>>,
    fills: Vec<f32>,
}

impl<'a> Perturber<'a> {
    pub fn new(image: &'a Grid, segmap: &SuperpixelMap, fill: MaskFill) -> Result<Self> {
        image.ensure_shape(segmap.rows(), segmap.cols())?;
        let segments = segmap.segment_pixels();
        let fills = match fill {
            MaskFill::SegmentMean => segments
                .iter()
                .map(|px| {
                    let sum: f64 = px.iter().map(|&i| image.as_slice()[i as usize] as f64).sum();
                    (sum / px.len() as f64) as f32
                })
                .collect(),
            MaskFill::ImageMean => {
                let mean = image.as_slice().iter().map(|&v| v as f64).sum::<f64>() / image.len() as f64;
                vec![mean as f32; segments.len()]
            }
            MaskFill::Constant(v) => vec![v; segments.len()],
        };
        Ok(Self { image, segments, fills })
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn apply(&self, bits: &[bool]) -> Result<Grid> {
        if bits.len() != self.segments.len() {
            return Err(Error::shape(
                format!("{} mask bits", self.segments.len()),
                bits.len(),
            ));
        }
        let mut out = self.image.clone();
        let data = out.as_mut_slice();
        for ((px, &keep), &fill) in self.segments.iter().zip(bits).zip(&self.fills) {
            if !keep {
                for &i in px {
                    data[i as usize] = fill;
                }
            }
        }
        Ok(out)
    }
}

/// Replaces every superpixel whose bit is 0 by its fill value.
pub fn perturb(image: &Grid, segmap: &SuperpixelMap, mask_bits: &[bool], fill: MaskFill) -> Result<Grid> {
    Perturber::new(image, segmap, fill)?.apply(mask_bits)
}

/// Random on/off patterns: row 0 keeps everything, every other bit is an
/// independent fair coin.
pub fn sample_masks<R: Rng + ?Sized>(n_segments: usize, n_samples: usize, rng: &mut R) -> Vec<Vec<bool>> {
    let mut masks = Vec::with_capacity(n_samples);
    masks.push(vec![true; n_segments]);
    for _ in 1..n_samples {
        masks.push((0..n_segments).map(|_| rng.gen::<bool>()).collect());
    }
    masks
}

/// Proximity weight of a mask: `exp(-d^2 / width^2)` with `d` the hidden
/// fraction.
pub fn proximity_weight(bits: &[bool], kernel_width: f64) -> f64 {
    let hidden = bits.iter().filter(|&&b| !b).count() as f64 / bits.len() as f64;
    (-(hidden * hidden) / (kernel_width * kernel_width)).exp()
}

/// Segment indices ordered by descending coefficient (ties by index).
pub fn rank_segments(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

/// Explains `classifier`'s belief that `image` belongs to `target_class`.
pub fn explain<C, R>(
    image: &Grid,
    segmap: &SuperpixelMap,
    classifier: &C,
    target_class: u32,
    params: &LimeParams,
    rng: &mut R,
) -> Result<Explanation>
where
    C: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    params.validate()?;
    if params.mode != ExplainMode::Supporting {
        return Err(Error::Unsupported("only the supporting explanation mode is implemented"));
    }
    if target_class as usize >= classifier.n_classes() {
        return Err(Error::invalid(format!(
            "target class {target_class} outside {} classes",
            classifier.n_classes()
        )));
    }
    let perturber = Perturber::new(image, segmap, params.mask_fill)?;
    let p = perturber.n_segments();
    let masks = sample_masks(p, params.n_samples, rng);

    let mut target_prob = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(params.batch_size) {
        let batch = chunk.iter().map(|m| perturber.apply(m)).collect::<Result<Vec<_>>>()?;
        for probs in classifier.predict_proba(&batch)? {
            target_prob.push(probs[target_class as usize]);
        }
    }

    let design: Vec<f64> = masks
        .iter()
        .flat_map(|m| m.iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    let weights: Vec<f64> = masks.iter().map(|m| proximity_weight(m, params.kernel_width)).collect();
    let fit = weighted_ridge(&design, masks.len(), p, &target_prob, &weights, params.ridge_lambda)?;

    let spread = target_prob.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - target_prob.iter().copied().fold(f64::INFINITY, f64::min);
    let top_segments: Vec<usize> = rank_segments(&fit.coefficients)
        .into_iter()
        .take(params.top_n)
        .filter(|&s| spread > 0.0 && fit.coefficients[s] > POSITIVE_EPS * spread)
        .collect();
    let mut selected = vec![false; p];
    for &s in &top_segments {
        selected[s] = true;
    }
    let mask = segmap.labels().iter().map(|&l| selected[l as usize]).collect();

    Ok(Explanation {
        rows: segmap.rows(),
        cols: segmap.cols(),
        mask,
        target_class,
        short_of_positive: top_segments.len() < params.top_n,
        superpixel_weights: fit.coefficients,
        intercept: fit.intercept,
        top_segments,
        local_r2: fit.loo_r2,
    })
}
