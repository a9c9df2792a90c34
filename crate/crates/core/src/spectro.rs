//! STFT spectrograms and Welch power spectra.
//!
//! The reference parameterisation (`n_fft = 446`, `hop = 893`, periodic
//! Hann window) turns a 2x10^5-sample window into exactly 224 one-sided
//! frequency bins by 224 frames, the classifier's input shape.

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const SPEC_SIZE: usize = 224;
pub const REFERENCE_N_FFT: usize = 446;
pub const REFERENCE_HOP: usize = 893;
/// Log floor relative to the spectrogram's peak magnitude.
pub const LOG_FLOOR_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    /// Periodic Hann: `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl WindowFn {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos())
                .collect(),
            WindowFn::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
    pub one_sided: bool,
    pub log_scale: bool,
    pub sample_rate: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            n_fft: REFERENCE_N_FFT,
            hop: REFERENCE_HOP,
            window_fn: WindowFn::Hann,
            one_sided: true,
            log_scale: true,
            sample_rate: crate::synthgen::DEFAULT_SAMPLE_RATE,
        }
    }
}

impl StftParams {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced from a window of `len` samples (no padding).
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.n_fft || self.hop == 0 {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate / self.n_fft as f64
    }

    /// Nearest frequency bin to `freq_hz`.
    pub fn bin_of(&self, freq_hz: f64) -> usize {
        (freq_hz / self.bin_hz()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.one_sided {
            return Err(Error::Unsupported("two-sided spectrograms"));
        }
        if self.n_fft < 2 || self.hop == 0 || !(self.sample_rate > 0.0) {
            return Err(Error::invalid("n_fft >= 2, hop > 0 and sample_rate > 0 required"));
        }
        if self.n_bins() != SPEC_SIZE {
            return Err(Error::shape(
                format!("{SPEC_SIZE} frequency bins"),
                format!("{} bins from n_fft = {}", self.n_bins(), self.n_fft),
            ));
        }
        Ok(())
    }

    /// Checks that a window of `len` samples yields exactly the 224-frame
    /// output shape.
    pub fn check_window(&self, len: usize) -> Result<()> {
        self.validate()?;
        let frames = self.n_frames(len);
        if frames != SPEC_SIZE {
            return Err(Error::shape(
                format!("{SPEC_SIZE} frames"),
                format!("{frames} frames from {len} samples (n_fft {}, hop {})", self.n_fft, self.hop),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    /// Rows are frequency bins (row 0 = DC), columns are time frames.
    pub values: Grid,
    pub freq_axis: Vec<f64>,
    pub time_axis: Vec<f64>,
    pub class_id: u32,
    pub log_scaled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Welch,
    LimeProjection,
    LimeDerivative,
    EnsembleMean,
    EnsembleStd,
}

impl ProfileKind {
    pub fn tag(self) -> u8 {
        match self {
            ProfileKind::Welch => 2,
            ProfileKind::LimeProjection => 3,
            ProfileKind::LimeDerivative => 4,
            ProfileKind::EnsembleMean => 5,
            ProfileKind::EnsembleStd => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            2 => ProfileKind::Welch,
            3 => ProfileKind::LimeProjection,
            4 => ProfileKind::LimeDerivative,
            5 => ProfileKind::EnsembleMean,
            6 => ProfileKind::EnsembleStd,
            _ => return None,
        })
    }
}

/// A 1-D vector over frequency bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub values: Vec<f64>,
    pub kind: ProfileKind,
    /// Width of one frequency bin in Hz; bin `k` sits at `k * bin_hz`.
    pub bin_hz: f64,
}

impl FrequencyProfile {
    pub fn new(values: Vec<f64>, kind: ProfileKind, bin_hz: f64) -> Self {
        Self { values, kind, bin_hz }
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn freq_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }
}

/// Reusable STFT plan for one parameter set.
#[derive(Clone)]
pub struct StftEngine {
    params: StftParams,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine").field("params", &self.params).finish()
    }
}

impl StftEngine {
    pub fn new(params: StftParams) -> Result<Self> {
        params.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(params.n_fft);
        Ok(Self {
            params,
            window: params.window_fn.coefficients(params.n_fft),
            fft,
        })
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    /// Squared one-sided magnitudes, `[bin][frame]` flattened row-major.
    fn power(&self, window: &[f32]) -> Result<Vec<f64>> {
        self.params.check_window(window.len())?;
        let n_fft = self.params.n_fft;
        let (bins, frames) = (SPEC_SIZE, SPEC_SIZE);
        let mut power = vec![0.0; bins * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for frame in 0..frames {
            let seg = &window[frame * self.params.hop..frame * self.params.hop + n_fft];
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(x as f64 * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (bin, c) in buf[..bins].iter().enumerate() {
                power[bin * frames + frame] = c.norm_sqr();
            }
        }
        Ok(power)
    }

    pub fn stft(&self, window: &[f32], class_id: u32) -> Result<Spectrogram> {
        let power = self.power(window)?;
        let mut mags: Vec<f64> = power.iter().map(|p| p.sqrt()).collect();
        if self.params.log_scale {
            let peak = mags.iter().copied().fold(0.0, f64::max);
            let eps = if peak > 0.0 { LOG_FLOOR_REL * peak } else { LOG_FLOOR_REL };
            for m in &mut mags {
                *m = (*m + eps).ln();
            }
        }
        let values = Grid::from_vec(
            SPEC_SIZE,
            SPEC_SIZE,
            mags.into_iter().map(|m| m as f32).collect(),
        )?;
        let p = &self.params;
        Ok(Spectrogram {
            values,
            freq_axis: (0..SPEC_SIZE).map(|k| k as f64 * p.bin_hz()).collect(),
            time_axis: (0..SPEC_SIZE)
                .map(|j| (j * p.hop) as f64 / p.sample_rate + p.n_fft as f64 / (2.0 * p.sample_rate))
                .collect(),
            class_id,
            log_scaled: p.log_scale,
        })
    }

    pub fn welch(&self, window: &[f32]) -> Result<FrequencyProfile> {
        let power = self.power(window)?;
        let values = power
            .chunks_exact(SPEC_SIZE)
            .map(|row| row.iter().sum::<f64>() / SPEC_SIZE as f64)
            .collect();
        Ok(FrequencyProfile::new(values, ProfileKind::Welch, self.params.bin_hz()))
    }

    /// Expected ratio of the summed Welch profile to the input's mean square
    /// for white input: `(n_fft + 2) / 2 * sum(w^2)`.
    pub fn white_noise_gain(&self) -> f64 {
        (self.params.n_fft as f64 + 2.0) / 2.0 * self.window.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Magnitude spectrogram of a window (log-scaled when `params.log_scale`).
pub fn stft(window: &[f32], params: &StftParams) -> Result<Spectrogram> {
    StftEngine::new(*params)?.stft(window, 0)
}

/// Welch power spectrum: the per-bin mean over frames of squared STFT
/// magnitudes.
pub fn welch(window: &[f32], params: &StftParams) -> Result<FrequencyProfile> {
    StftEngine::new(*params)?.welch(window)
}

/// Min-max normalisation to `[0, 1]`; a constant grid maps to zeros.
pub fn normalize_unit(grid: &Grid) -> Grid {
    let (lo, hi) = (grid.min(), grid.max());
    let span = hi - lo;
    if !(span > 0.0) {
        return Grid::zeros(grid.rows(), grid.cols());
    }
    grid.map(|v| (v - lo) / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Vec<f32> {
        (0..n).map(|i| (TAU * freq * i as f64 / 2e6).sin() as f32).collect()
    }

    #[test]
    fn reference_shape_arithmetic() {
        let p = StftParams::default();
        assert_eq!((200_000 - 446) / 893 + 1, 224);
        assert_eq!(p.n_bins(), 224);
        assert_eq!(p.n_frames(200_000), 224);
        p.check_window(200_000).unwrap();
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let p = StftParams::default();
        assert!(matches!(stft(&vec![0.0; 199_000], &p), Err(Error::Shape { .. })));
        assert!(welch(&vec![0.0; 210_000], &p).is_err());
        let bad = StftParams { n_fft: 512, ..p };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_window_gives_zero_spectrogram() {
        let p = StftParams { log_scale: false, ..Default::default() };
        let s = stft(&vec![0.0; 200_000], &p).unwrap();
        assert_eq!(s.values.shape(), (224, 224));
        assert!(s.values.as_slice().iter().all(|&v| v == 0.0));
        let w = welch(&vec![0.0; 200_000], &p).unwrap();
        assert!(w.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_lands_in_bin_22() {
        let p = StftParams { log_scale: false, ..Default::default() };
        assert_eq!(p.bin_of(100_000.0), 22);
        let s = stft(&tone(100_000.0, 200_000), &p).unwrap();
        for col in 0..224 {
            let argmax = (0..224)
                .max_by(|&a, &b| s.values.get(a, col).total_cmp(&s.values.get(b, col)))
                .unwrap();
            assert_eq!(argmax, 22, "frame {col}");
        }
    }

    #[test]
    fn axes_span_dc_to_nyquist() {
        let s = stft(&tone(50_000.0, 200_000), &StftParams::default()).unwrap();
        assert_eq!(s.freq_axis[0], 0.0);
        assert!((s.freq_axis[223] - 1e6).abs() < 1e-6);
        assert!(s.time_axis.windows(2).all(|w| w[1] > w[0]));
        assert!(s.log_scaled);
    }

    #[test]
    fn normalize_maps_to_unit_interval() {
        let g = Grid::from_vec(1, 4, vec![-2.0, 0.0, 2.0, 6.0]).unwrap();
        assert_eq!(normalize_unit(&g).as_slice(), &[0.0, 0.25, 0.5, 1.0]);
        assert!(normalize_unit(&Grid::filled(2, 2, 3.0)).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_frame_matches_direct_dft() {
        // O(n^2) DFT with an independently written periodic Hann window
        let p = StftParams { log_scale: false, ..Default::default() };
        let x = tone(100_000.0, 200_000);
        let s = stft(&x, &p).unwrap();
        let n = 446;
        let peak = s.values.max() as f64;
        for k in 0..224 {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in x[..n].iter().enumerate() {
                let w = 0.5 - 0.5 * (TAU * t as f64 / n as f64).cos();
                let ang = -TAU * (k * t) as f64 / n as f64;
                re += v as f64 * w * ang.cos();
                im += v as f64 * w * ang.sin();
            }
            let direct = (re * re + im * im).sqrt();
            assert!((s.values.get(k, 0) as f64 - direct).abs() <= 1e-5 * peak, "bin {k}");
        }
    }

    #[test]
    fn welch_is_mean_of_squared_stft() {
        let p = StftParams { log_scale: false, ..Default::default() };
        let mut rng = crate::synthgen::rng_from_seed(11);
        let x: Vec<f32> = (0..200_000).map(|i| rand::Rng::gen_range(&mut rng, -1.0..1.0) + (i as f32 * 0.3).sin()).collect();
        let s = stft(&x, &p).unwrap();
        let w = welch(&x, &p).unwrap();
        for k in 0..224 {
            let mean: f64 = s.values.row(k).iter().map(|&m| (m as f64).powi(2)).sum::<f64>() / 224.0;
            assert!((mean - w.values[k]).abs() <= 1e-6 * w.values[k].max(1e-12), "bin {k}");
        }
    }

    #[test]
    fn parseval_on_rademacher_noise() {
        // Unit-power +-1 noise: E|X_k|^2 = sum(w^2) in every bin, and the
        // one-sided profile has n/2 + 1 bins. For a periodic Hann window
        // sum(w^2) = 3n/8.
        let n = 446.0;
        let gain = (n / 2.0 + 1.0) * 3.0 * n / 8.0;
        let mut rng = crate::synthgen::rng_from_seed(5);
        let x: Vec<f32> = (0..200_000).map(|_| if rand::Rng::gen::<bool>(&mut rng) { 1.0 } else { -1.0 }).collect();
        let engine = StftEngine::new(StftParams::default()).unwrap();
        assert!((engine.white_noise_gain() - gain).abs() < 1e-6 * gain);
        let total: f64 = engine.welch(&x).unwrap().values.iter().sum();
        assert!((total / gain - 1.0).abs() < 1e-3, "ratio {}", total / gain);
    }

    #[test]
    fn log_scaling_keeps_per_frame_argmax() {
        let mut rng = crate::synthgen::rng_from_seed(2);
        let x: Vec<f32> = tone(300_000.0, 200_000)
            .into_iter()
            .map(|v| 0.2 * v + rand::Rng::gen_range(&mut rng, -0.5..0.5))
            .collect();
        let raw = stft(&x, &StftParams { log_scale: false, ..Default::default() }).unwrap();
        let log = stft(&x, &StftParams::default()).unwrap();
        let argmax = |g: &Grid, col: usize| (0..224).max_by(|&a, &b| g.get(a, col).total_cmp(&g.get(b, col))).unwrap();
        for col in 0..224 {
            assert_eq!(argmax(&raw.values, col), argmax(&log.values, col));
        }
    }
}
