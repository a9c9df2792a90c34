use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::par;
use crate::spectro::{normalize_unit, FrequencyProfile, Spectrogram, StftEngine, StftParams};
use crate::synthgen::{
    extract_window, sample_window, sample_window_for_class, synthesize_signal, DatasetManifest,
    Split, WindowSample,
};

/// Raw per-class signals plus everything needed to turn a window of one of
/// them into a classifier canvas.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    signals: Vec<Vec<f32>>,
    window_len: usize,
    engine: StftEngine,
}

impl Dataset {
    /// Synthesises every class's raw signal from the manifest.
    pub fn synthesize(manifest: DatasetManifest, window_len: usize, stft: StftParams) -> Result<Self> {
        manifest.validate(window_len)?;
        let mut specs = manifest.classes.clone();
        specs.sort_by_key(|c| c.class_id);
        let signals = par::try_map(&specs, |spec| {
            synthesize_signal(spec, spec.n_samples, manifest.sample_rate, manifest.signal_seed(spec.class_id))
        })?;
        Self::from_signals(manifest, signals, window_len, stft)
    }

    /// Wraps pre-existing signals, indexed by class id.
    pub fn from_signals(
        manifest: DatasetManifest,
        signals: Vec<Vec<f32>>,
        window_len: usize,
        stft: StftParams,
    ) -> Result<Self> {
        manifest.validate(window_len)?;
        if signals.len() != manifest.n_classes() {
            return Err(Error::shape(
                format!("{} class signals", manifest.n_classes()),
                signals.len(),
            ));
        }
        for spec in &manifest.classes {
            let got = signals[spec.class_id as usize].len();
            if got != spec.n_samples {
                return Err(Error::invalid(format!(
                    "class {}: signal has {got} samples, manifest says {}",
                    spec.class_id, spec.n_samples
                )));
            }
        }
        if (stft.sample_rate - manifest.sample_rate).abs() > 1e-9 * manifest.sample_rate {
            return Err(Error::invalid("STFT sample rate differs from manifest"));
        }
        stft.check_window(window_len)?;
        Ok(Self {
            manifest,
            signals,
            window_len,
            engine: StftEngine::new(stft)?,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn stft_params(&self) -> &StftParams {
        self.engine.params()
    }

    pub fn signal(&self, class_id: u32) -> &[f32] {
        &self.signals[class_id as usize]
    }

    pub fn signals(&self) -> &[Vec<f32>] {
        &self.signals
    }

    pub fn draw<R: Rng + ?Sized>(&self, split: Split, rng: &mut R) -> Result<WindowSample> {
        sample_window(&self.manifest, self.window_len, split, rng)
    }

    pub fn draw_for_class<R: Rng + ?Sized>(
        &self,
        class_id: u32,
        split: Split,
        rng: &mut R,
    ) -> Result<WindowSample> {
        sample_window_for_class(&self.manifest, class_id, self.window_len, split, rng)
    }

    pub fn window(&self, sample: &WindowSample) -> Result<&[f32]> {
        let signal = self
            .signals
            .get(sample.class_id as usize)
            .ok_or_else(|| Error::invalid(format!("unknown class {}", sample.class_id)))?;
        extract_window(signal, sample)
    }

    pub fn spectrogram(&self, sample: &WindowSample) -> Result<Spectrogram> {
        self.engine.stft(self.window(sample)?, sample.class_id)
    }

    /// The normalised `[0, 1]` canvas the classifier and explainer see.
    pub fn canvas(&self, sample: &WindowSample) -> Result<Grid> {
        Ok(normalize_unit(&self.spectrogram(sample)?.values))
    }

    pub fn canvases(&self, samples: &[WindowSample]) -> Result<Vec<Grid>> {
        par::try_map(samples, |s| self.canvas(s))
    }

    pub fn welch(&self, sample: &WindowSample) -> Result<FrequencyProfile> {
        self.engine.welch(self.window(sample)?)
    }
}
