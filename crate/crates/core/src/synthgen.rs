//! Synthetic device signals and train/validation window sampling.
//!
//! Each [`DeviceSpec`] describes a device as a sum of tones, harmonic stacks,
//! a residual 60 Hz mains component and white Gaussian noise. The tone and
//! harmonic frequencies double as the ground truth that explanations are
//! scored against.
//!
//! All randomness flows through [`SeededRng`] (ChaCha8), which produces the
//! same stream on every platform for a given seed.

use std::collections::HashSet;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Portable seedable generator used by every stochastic operation.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser over the combined value
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const DEFAULT_SAMPLE_RATE: f64 = 2_000_000.0;
pub const DEFAULT_WINDOW_LEN: usize = 200_000;
pub const DEFAULT_CLASS_SAMPLES: usize = 2_000_000;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const MAINS_HZ: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude: f64,
    /// Linear frequency wander in Hz per second.
    #[serde(default)]
    pub drift_hz_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub fundamental_hz: f64,
    pub count: u32,
    /// Amplitude factor applied per harmonic step: the k-th harmonic has
    /// amplitude `amplitude * rolloff^(k-1)`.
    pub rolloff: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub class_id: u32,
    #[serde(default)]
    pub name: String,
    /// Length of this class's raw signal (W_D(c)).
    #[serde(default = "default_class_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub tones: Vec<Tone>,
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
    #[serde(default)]
    pub noise_floor_sigma: f64,
    #[serde(default)]
    pub mains_residue_amp: f64,
}

fn default_class_samples() -> usize {
    DEFAULT_CLASS_SAMPLES
}

impl DeviceSpec {
    /// A spec with no sources at all.
    pub fn silent(class_id: u32) -> Self {
        Self {
            class_id,
            name: String::new(),
            n_samples: DEFAULT_CLASS_SAMPLES,
            tones: Vec::new(),
            harmonics: Vec::new(),
            noise_floor_sigma: 0.0,
            mains_residue_amp: 0.0,
        }
    }

    /// Every injected spectral feature frequency: tone centres plus each
    /// member of every harmonic stack, sorted ascending.
    pub fn feature_frequencies(&self) -> Vec<f64> {
        let mut freqs: Vec<f64> = self.tones.iter().map(|t| t.freq_hz).collect();
        for h in &self.harmonics {
            freqs.extend((1..=h.count).map(|k| h.fundamental_hz * k as f64));
        }
        freqs.sort_by(f64::total_cmp);
        freqs
    }

    /// Checks the spec against a sample rate, with `duration_s` bounding how
    /// far tone drift can carry a frequency.
    pub fn validate(&self, sample_rate: f64, duration_s: f64) -> Result<()> {
        let nyquist = sample_rate / 2.0;
        let in_band = |f: f64| f > 0.0 && f < nyquist;
        for t in &self.tones {
            let end = t.freq_hz + t.drift_hz_per_s * duration_s;
            if !in_band(t.freq_hz) || !in_band(end) {
                return Err(Error::invalid(format!(
                    "class {}: tone {} Hz (drifting to {end} Hz) outside (0, {nyquist})",
                    self.class_id, t.freq_hz
                )));
            }
            if !(t.amplitude >= 0.0) {
                return Err(Error::invalid(format!(
                    "class {}: negative tone amplitude",
                    self.class_id
                )));
            }
        }
        for h in &self.harmonics {
            let top = h.fundamental_hz * h.count as f64;
            if h.count == 0 || !in_band(h.fundamental_hz) || !in_band(top) {
                return Err(Error::invalid(format!(
                    "class {}: harmonic stack {} Hz x{} outside (0, {nyquist})",
                    self.class_id, h.fundamental_hz, h.count
                )));
            }
            if !(h.amplitude >= 0.0) || !(h.rolloff >= 0.0) {
                return Err(Error::invalid(format!(
                    "class {}: negative harmonic amplitude or rolloff",
                    self.class_id
                )));
            }
        }
        if !(self.noise_floor_sigma >= 0.0) || !(self.mains_residue_amp >= 0.0) {
            return Err(Error::invalid(format!(
                "class {}: noise and mains amplitudes must be >= 0",
                self.class_id
            )));
        }
        Ok(())
    }
}

/// Generates `n_samples` of a device signal.
///
/// Component phases are drawn from the seeded stream, so windows taken from
/// the result are not phase-locked to any component.
pub fn synthesize_signal(
    spec: &DeviceSpec,
    n_samples: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f32>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be > 0"));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample_rate must be > 0"));
    }
    spec.validate(sample_rate, n_samples as f64 / sample_rate)?;

    let mut rng = rng_from_seed(seed);
    // (frequency, chirp rate, amplitude, phase)
    let mut components: Vec<(f64, f64, f64, f64)> = Vec::new();
    for t in &spec.tones {
        components.push((t.freq_hz, t.drift_hz_per_s, t.amplitude, rng.gen::<f64>() * TAU));
    }
    for h in &spec.harmonics {
        let mut amp = h.amplitude;
        for k in 1..=h.count {
            components.push((h.fundamental_hz * k as f64, 0.0, amp, rng.gen::<f64>() * TAU));
            amp *= h.rolloff;
        }
    }
    if spec.mains_residue_amp > 0.0 {
        components.push((MAINS_HZ, 0.0, spec.mains_residue_amp, rng.gen::<f64>() * TAU));
    }
    components.retain(|c| c.2 > 0.0);

    let dt = 1.0 / sample_rate;
    let sigma = spec.noise_floor_sigma;
    let signal = (0..n_samples)
        .map(|i| {
            let t = i as f64 * dt;
            let mut x = 0.0;
            for &(f, drift, amp, phase) in &components {
                x += amp * (TAU * (f * t + 0.5 * drift * t * t) + phase).sin();
            }
            if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                x += sigma * z;
            }
            x as f32
        })
        .collect();
    Ok(signal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSample {
    pub class_id: u32,
    pub start: usize,
    pub length: usize,
    pub split: Split,
}

impl WindowSample {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

/// Inclusive start-index interval for a split, or `None` when empty.
///
/// Training starts lie in `[0, floor((W_D - 2 W) f) - 1]`; validation starts
/// in `[floor((W_D - 2 W) f) - 1 + W, W_D - 1 - W]`. A training window can
/// therefore never share a sample with a validation window.
pub fn split_interval(
    class_len: usize,
    window_len: usize,
    train_fraction: f64,
    split: Split,
) -> Option<(usize, usize)> {
    let usable = class_len.checked_sub(2 * window_len)?;
    let boundary = (usable as f64 * train_fraction).floor() as i64 - 1;
    let (lo, hi) = match split {
        Split::Train => (0, boundary),
        Split::Validation => (
            boundary + window_len as i64,
            class_len as i64 - 1 - window_len as i64,
        ),
    };
    (lo >= 0 && lo <= hi).then_some((lo as usize, hi as usize))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_train_fraction")]
    pub f_tr: f64,
    #[serde(default)]
    pub seed: u64,
    pub classes: Vec<DeviceSpec>,
}

fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// W_D(c).
    pub fn class_len(&self, class_id: u32) -> Option<usize> {
        self.class(class_id).map(|c| c.n_samples)
    }

    pub fn class(&self, class_id: u32) -> Option<&DeviceSpec> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    /// Seed used to synthesise the raw signal for `class_id`.
    pub fn signal_seed(&self, class_id: u32) -> u64 {
        derive_seed(self.seed, 0x5167_0000 + class_id as u64)
    }

    /// Validates the manifest for windows of `window_len` samples.
    ///
    /// Class ids must be exactly `0..n_classes` (in any order); the id is the
    /// classifier's output index.
    pub fn validate(&self, window_len: usize) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("manifest has no classes"));
        }
        if !(self.f_tr > 0.0 && self.f_tr < 1.0) {
            return Err(Error::invalid(format!("f_tr must lie in (0, 1), got {}", self.f_tr)));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate must be > 0"));
        }
        if window_len == 0 {
            return Err(Error::invalid("window length must be > 0"));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.class_id) {
                return Err(Error::invalid(format!("duplicate class_id {}", c.class_id)));
            }
            if (c.class_id as usize) >= self.classes.len() {
                return Err(Error::invalid(format!(
                    "class ids must be 0..{}, found {}",
                    self.classes.len(),
                    c.class_id
                )));
            }
            if c.n_samples < 2 * window_len + 2 {
                return Err(Error::invalid(format!(
                    "class {}: {} samples is fewer than 2*{window_len}+2",
                    c.class_id, c.n_samples
                )));
            }
            c.validate(self.sample_rate, c.n_samples as f64 / self.sample_rate)?;
        }
        Ok(())
    }

    /// Default desk-scale roster: a background class plus eight devices,
    /// one second of signal each at 2 MS/s.
    ///
    /// Features come from three pairs of frequencies; device `k` takes one
    /// member of each pair, chosen by the bits of `k - 1`. Every feature is
    /// shared with three other devices, so no single feature identifies a
    /// device and a classifier has to look at all three. Device 1 realizes
    /// its features as a harmonic stack (bins 28, 56, 84).
    pub fn desk_scale(seed: u64) -> Self {
        let bin_hz = DEFAULT_SAMPLE_RATE / crate::spectro::REFERENCE_N_FFT as f64;
        let hz = |bin: f64| (bin * bin_hz / 100.0).round() * 100.0;
        let noise = 0.1;
        let mains = 0.5;
        let mut classes = vec![DeviceSpec {
            name: "background".into(),
            noise_floor_sigma: noise,
            mains_residue_amp: mains,
            ..DeviceSpec::silent(0)
        }];
        // four tone pairs; the last pick is the parity of the first three, so
        // any two devices differ in at least two tones
        let pairs = [[24.0, 120.0], [48.0, 144.0], [72.0, 168.0], [96.0, 192.0]];
        let amps = [0.08, 0.05, 0.06, 0.07];
        let names = [
            "charger", "router", "monitor", "console", "phone", "ups", "player", "desktop",
        ];
        for k in 1..=8u32 {
            let code = k as usize - 1;
            let code = code | ((code.count_ones() as usize & 1) << 3);
            let bins: Vec<f64> = (0..4).map(|i| pairs[i][(code >> i) & 1]).collect();
            let mut spec = DeviceSpec {
                name: names[k as usize - 1].into(),
                noise_floor_sigma: noise,
                mains_residue_amp: mains,
                ..DeviceSpec::silent(k)
            };
            if code == 0 {
                // switching supply: 24, 48, 72, 96 is a harmonic stack
                spec.harmonics.push(Harmonic {
                    fundamental_hz: hz(bins[0]),
                    count: 4,
                    rolloff: 0.8,
                    amplitude: 0.08,
                });
            } else {
                for (i, &b) in bins.iter().enumerate() {
                    spec.tones.push(Tone {
                        freq_hz: hz(b),
                        amplitude: amps[(i + code) % 4],
                        drift_hz_per_s: if k % 3 == 0 && i == 1 { 500.0 } else { 0.0 },
                    });
                }
            }
            classes.push(spec);
        }
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            f_tr: DEFAULT_TRAIN_FRACTION,
            seed,
            classes,
        }
    }
}

/// Draws one training or validation window: a uniformly random class, then a uniformly
/// random start inside that class's interval for `split`.
pub fn sample_window<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    window_len: usize,
    split: Split,
    rng: &mut R,
) -> Result<WindowSample> {
    if manifest.classes.is_empty() {
        return Err(Error::invalid("manifest has no classes"));
    }
    let spec = &manifest.classes[rng.gen_range(0..manifest.classes.len())];
    sample_window_for_class(manifest, spec.class_id, window_len, split, rng)
}

/// As [`sample_window`] with the class fixed.
pub fn sample_window_for_class<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    class_id: u32,
    window_len: usize,
    split: Split,
    rng: &mut R,
) -> Result<WindowSample> {
    let class_len = manifest
        .class_len(class_id)
        .ok_or_else(|| Error::invalid(format!("unknown class {class_id}")))?;
    let (lo, hi) = split_interval(class_len, window_len, manifest.f_tr, split).ok_or(
        Error::EmptyInterval {
            class_id,
            split: split.as_str(),
        },
    )?;
    Ok(WindowSample {
        class_id,
        start: rng.gen_range(lo..=hi),
        length: window_len,
        split,
    })
}

/// Returns the exact slice `[start, start + length)` of `signal`.
pub fn extract_window<'a>(signal: &'a [f32], sample: &WindowSample) -> Result<&'a [f32]> {
    let end = sample.start.checked_add(sample.length).ok_or(Error::OutOfRange {
        start: sample.start,
        end: usize::MAX,
        len: signal.len(),
    })?;
    signal.get(sample.start..end).ok_or(Error::OutOfRange {
        start: sample.start,
        end,
        len: signal.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(start: usize, length: usize) -> WindowSample {
        WindowSample {
            class_id: 0,
            start,
            length,
            split: Split::Train,
        }
    }

    #[test]
    fn silent_spec_is_all_zero() {
        let sig = synthesize_signal(&DeviceSpec::silent(0), 1000, 2e6, 7).unwrap();
        assert!(sig.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = &DatasetManifest::desk_scale(1).classes[3];
        let a = synthesize_signal(spec, 50_000, 2e6, 99).unwrap();
        let b = synthesize_signal(spec, 50_000, 2e6, 99).unwrap();
        let c = synthesize_signal(spec, 50_000, 2e6, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_tone_at_nyquist() {
        let mut spec = DeviceSpec::silent(0);
        spec.tones.push(Tone {
            freq_hz: 1e6,
            amplitude: 1.0,
            drift_hz_per_s: 0.0,
        });
        assert!(synthesize_signal(&spec, 100, 2e6, 0).is_err());
        spec.tones[0].freq_hz = 999_000.0;
        spec.tones[0].drift_hz_per_s = 5_000.0;
        // drifts past Nyquist within 1 s
        assert!(synthesize_signal(&spec, 2_000_000, 2e6, 0).is_err());
        assert!(synthesize_signal(&spec, 100, 2e6, 0).is_ok());
    }

    #[test]
    fn rejects_empty_signal() {
        assert!(synthesize_signal(&DeviceSpec::silent(0), 0, 2e6, 0).is_err());
    }

    #[test]
    fn full_scale_intervals() {
        let train = split_interval(2_000_000, 200_000, 0.8, Split::Train);
        let val = split_interval(2_000_000, 200_000, 0.8, Split::Validation);
        assert_eq!(train, Some((0, 1_279_999)));
        assert_eq!(val, Some((1_479_999, 1_799_999)));
    }

    #[test]
    fn manifest_rejects_bad_fraction() {
        let mut m = DatasetManifest::desk_scale(0);
        m.f_tr = 1.0;
        assert!(m.validate(DEFAULT_WINDOW_LEN).is_err());
        m.f_tr = 0.0;
        assert!(m.validate(DEFAULT_WINDOW_LEN).is_err());
        m.f_tr = 0.8;
        m.validate(DEFAULT_WINDOW_LEN).unwrap();
    }

    #[test]
    fn manifest_rejects_short_class_and_duplicate_ids() {
        let mut m = DatasetManifest::desk_scale(0);
        m.classes[2].n_samples = 2 * DEFAULT_WINDOW_LEN + 1;
        assert!(m.validate(DEFAULT_WINDOW_LEN).is_err());
        let mut m = DatasetManifest::desk_scale(0);
        m.classes[2].class_id = 1;
        assert!(m.validate(DEFAULT_WINDOW_LEN).is_err());
    }

    #[test]
    fn empty_train_interval_is_reported() {
        let mut m = DatasetManifest::desk_scale(0);
        m.classes.truncate(1);
        m.classes[0].n_samples = 2 * 100 + 2;
        m.f_tr = 0.1;
        let mut rng = rng_from_seed(0);
        let err = sample_window(&m, 100, Split::Train, &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyInterval { split: "train", .. }));
        assert!(sample_window(&m, 100, Split::Validation, &mut rng).is_ok());
    }

    #[test]
    fn extract_window_slices_exactly() {
        let sig = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(extract_window(&sig, &window(0, 4)).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(extract_window(&sig, &window(1, 4)).unwrap(), &[2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(
            extract_window(&sig, &window(2, 4)),
            Err(Error::OutOfRange { start: 2, end: 6, len: 5 })
        ));
    }

    #[test]
    fn slice_and_complement_cover_signal() {
        let sig: Vec<f32> = (0..20).map(|i| i as f32).collect();
        let w = window(6, 5);
        let mut rebuilt = sig[..w.start].to_vec();
        rebuilt.extend_from_slice(extract_window(&sig, &w).unwrap());
        rebuilt.extend_from_slice(&sig[w.end()..]);
        assert_eq!(rebuilt, sig);
    }

    #[test]
    fn feature_frequencies_include_harmonics() {
        let m = DatasetManifest::desk_scale(0);
        let f = m.classes[1].feature_frequencies();
        assert_eq!(f.len(), 4);
        assert!((f[1] - 2.0 * f[0]).abs() < 1e-6);
        assert!(m.classes[0].feature_frequencies().is_empty());
        assert_eq!(m.classes[8].feature_frequencies().len(), 4);
    }

    #[test]
    fn desk_scale_devices_differ_in_two_tones() {
        let m = DatasetManifest::desk_scale(0);
        let sets: Vec<Vec<i64>> = m.classes[1..]
            .iter()
            .map(|c| c.feature_frequencies().iter().map(|f| f.round() as i64).collect())
            .collect();
        for (i, a) in sets.iter().enumerate() {
            for b in &sets[i + 1..] {
                let shared = a.iter().filter(|f| b.contains(f)).count();
                assert!(shared <= 2, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn manifest_json_roundtrip() {
        let m = DatasetManifest::desk_scale(5);
        let text = serde_json::to_string_pretty(&m).unwrap();
        let back: DatasetManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
    }
}
