//! Class-level aggregation of explanations and the frequency profiles
//! derived from it.
//!
//! Masks of many explanations are summed per pixel and scaled by the
//! largest count into `[0, 1]`; summing over time gives a frequency
//! projection whose absolute first difference marks the band edges the
//! classifier relies on. Profiles from independently trained models are
//! combined into a per-bin mean and standard deviation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::limexp::Explanation;
use crate::spectro::{FrequencyProfile, ProfileKind};

/// Temporality scores above this flag time-structured aggregates.
pub const TEMPORALITY_FLAG: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedExplanation {
    /// Per-pixel selection frequency scaled so the maximum is 1.
    pub values: Grid,
    pub class_id: u32,
    pub n_explanations: usize,
}

/// Unnormalised per-pixel selection counts. Partial sums over disjoint
/// explanation sets merge by addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionCounts {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    class_id: u32,
    n_explanations: usize,
}

impl SelectionCounts {
    pub fn new(rows: usize, cols: usize, class_id: u32) -> Self {
        Self {
            rows,
            cols,
            counts: vec![0; rows * cols],
            class_id,
            n_explanations: 0,
        }
    }

    pub fn add(&mut self, e: &Explanation) -> Result<()> {
        if e.target_class != self.class_id {
            return Err(Error::invalid(format!(
                "explanation for class {} in class {} aggregate",
                e.target_class, self.class_id
            )));
        }
        if (e.rows, e.cols) != (self.rows, self.cols) || e.mask.len() != self.counts.len() {
            return Err(Error::shape(
                format!("{}x{} mask", self.rows, self.cols),
                format!("{}x{}", e.rows, e.cols),
            ));
        }
        for (c, &m) in self.counts.iter_mut().zip(&e.mask) {
            *c += m as u64;
        }
        self.n_explanations += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &SelectionCounts) -> Result<()> {
        if other.class_id != self.class_id || other.counts.len() != self.counts.len() {
            return Err(Error::invalid("cannot merge counts of different classes or shapes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_explanations += other.n_explanations;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_explanations(&self) -> usize {
        self.n_explanations
    }

    pub fn normalize(&self) -> AggregatedExplanation {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let scale = if max == 0 { 0.0 } else { 1.0 / max as f64 };
        let data = self.counts.iter().map(|&c| (c as f64 * scale) as f32).collect();
        AggregatedExplanation {
            values: Grid::from_vec(self.rows, self.cols, data).expect("shape preserved"),
            class_id: self.class_id,
            n_explanations: self.n_explanations,
        }
    }
}

/// Sums the explanation masks of one class and scales the counts into
/// `[0, 1]` by the largest pixel count.
pub fn aggregate(explanations: &[Explanation]) -> Result<AggregatedExplanation> {
    let first = explanations
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty explanation list"))?;
    let mut counts = SelectionCounts::new(first.rows, first.cols, first.target_class);
    for e in explanations {
        counts.add(e)?;
    }
    Ok(counts.normalize())
}

/// Integrates the aggregate over time: `W(row) = sum_col E(row, col)`.
pub fn project(agg: &AggregatedExplanation, bin_hz: f64) -> FrequencyProfile {
    let g = &agg.values;
    let values = (0..g.rows())
        .map(|r| g.row(r).iter().map(|&v| v as f64).sum())
        .collect();
    FrequencyProfile::new(values, ProfileKind::LimeProjection, bin_hz)
}

/// `W_d(w) = |W(w + 1) - W(w)|`.
pub fn derivative_profile(profile: &FrequencyProfile) -> Result<FrequencyProfile> {
    if profile.bins() < 2 {
        return Err(Error::invalid("derivative needs at least two bins"));
    }
    let values = profile.values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(FrequencyProfile::new(values, ProfileKind::LimeDerivative, profile.bin_hz))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleProfile {
    pub mean: FrequencyProfile,
    pub std: FrequencyProfile,
    pub n_models: usize,
}

/// Per-bin mean and population standard deviation across models.
pub fn ensemble_stats(profiles: &[FrequencyProfile]) -> Result<EnsembleProfile> {
    if profiles.len() < 2 {
        return Err(Error::invalid("ensemble needs at least two profiles"));
    }
    let first = &profiles[0];
    if profiles.iter().any(|p| p.kind != first.kind) {
        return Err(Error::invalid("ensemble profiles have mixed kinds"));
    }
    if profiles.iter().any(|p| p.bins() != first.bins()) {
        return Err(Error::invalid("ensemble profiles have mixed lengths"));
    }
    let n = profiles.len() as f64;
    let mean: Vec<f64> = (0..first.bins())
        .map(|b| profiles.iter().map(|p| p.values[b]).sum::<f64>() / n)
        .collect();
    let std = (0..first.bins())
        .map(|b| {
            let var = profiles.iter().map(|p| (p.values[b] - mean[b]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    Ok(EnsembleProfile {
        mean: FrequencyProfile::new(mean, ProfileKind::EnsembleMean, first.bin_hz),
        std: FrequencyProfile::new(std, ProfileKind::EnsembleStd, first.bin_hz),
        n_models: profiles.len(),
    })
}

/// Share of the aggregate's variance explained by differences between time
/// columns. Near 0 for horizontally banded maps; large when the map has
/// structure along time.
pub fn temporality_score(agg: &AggregatedExplanation) -> f64 {
    let g = &agg.values;
    let (rows, cols) = g.shape();
    let n = (rows * cols) as f64;
    let mean = g.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
    let total: f64 = g.as_slice().iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let between: f64 = (0..cols)
        .map(|c| {
            let col_mean = (0..rows).map(|r| g.get(r, c) as f64).sum::<f64>() / rows as f64;
            rows as f64 * (col_mean - mean).powi(2)
        })
        .sum();
    between / total
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Median absolute deviation (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    median(&values.iter().map(|v| (v - m).abs()).collect::<Vec<_>>())
}

/// Local maxima strictly above `median + 3 * MAD`.
///
/// A bin is a local maximum when it exceeds its left neighbour and is not
/// exceeded by its right one, so a flat-topped peak reports its first bin.
pub fn detect_peaks(values: &[f64]) -> Vec<usize> {
    let threshold = median(values) + 3.0 * mad(values);
    let n = values.len();
    (0..n)
        .filter(|&i| {
            let v = values[i];
            let left_ok = i == 0 || v > values[i - 1];
            let right_ok = i + 1 == n || v >= values[i + 1];
            v > threshold && left_ok && right_ok
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRecall {
    pub recalled: usize,
    pub total: usize,
    pub peaks: Vec<usize>,
}

impl PeakRecall {
    /// `None` when there are no features to recall.
    pub fn recall(&self) -> Option<f64> {
        (self.total > 0).then(|| self.recalled as f64 / self.total as f64)
    }
}

/// Fraction of `feature_bins` with a detected peak within `tolerance` bins.
pub fn peak_recall(profile: &FrequencyProfile, feature_bins: &[usize], tolerance: usize) -> PeakRecall {
    let peaks = detect_peaks(&profile.values);
    let recalled = feature_bins
        .iter()
        .filter(|&&f| peaks.iter().any(|&p| p.abs_diff(f) <= tolerance))
        .count();
    PeakRecall {
        recalled,
        total: feature_bins.len(),
        peaks,
    }
}

/// Median of the profile over bins at least `exclusion` bins from every
/// feature.
pub fn noise_floor(profile: &FrequencyProfile, feature_bins: &[usize], exclusion: usize) -> f64 {
    let off: Vec<f64> = profile
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| feature_bins.iter().all(|&f| i.abs_diff(f) >= exclusion))
        .map(|(_, &v)| v)
        .collect();
    median(&off)
}
