//! End-to-end orchestration: synthesis, training, explanation, ensembling
//! and reporting, with every artifact written under one output directory.
//!
//! ```text
//! out/signals/manifest.json, class_{c}.sig
//! out/models/seed_{s}/model.mdl (+ .json), report.json, accuracy.svg, confusion.svg
//! out/segments/class_{c}/window_{i}.seg
//! out/explain/seed_{s}/class_{c}/expl_{i}.exp (+ .json), aggregate.spc,
//!     projection.csv, derivative.csv, welch.csv, summary.json, *.svg
//! out/ensemble/class_{c}/ensemble.csv, runs.csv, summary.json, *.svg
//! out/report/...
//! ```
//!
//! Each stage reuses artifacts that already exist, so an interrupted run
//! picks up where it stopped. Every cached directory carries a
//! `cache_key.json` describing its inputs; a mismatch clears the directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    aggregate, derivative_profile, detect_peaks, ensemble_stats, noise_floor, peak_recall, project,
    temporality_score, AggregatedExplanation, EnsembleProfile, TEMPORALITY_FLAG,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formats::{self, GridFile};
use crate::grid::Grid;
use crate::limexp::{explain, Explanation, LimeParams};
use crate::model::{train, Cnn, EvalReport, TrainConfig};
use crate::par;
use crate::plot::{self, Series};
use crate::quickseg::{quickshift, QuickshiftParams, SuperpixelMap};
use crate::spectro::{FrequencyProfile, ProfileKind, StftParams};
use crate::synthgen::{derive_seed, rng_from_seed, split_interval, DatasetManifest, Split, WindowSample, DEFAULT_WINDOW_LEN};

/// Peak-recall tolerance in frequency bins.
pub const RECALL_TOLERANCE: usize = 2;
/// Bins closer than this to a feature are excluded from the noise floor.
pub const NOISE_EXCLUSION: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset manifest; `None` uses the built-in desk-scale roster.
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub window_len: usize,
    pub stft: StftParams,
    pub quickshift: QuickshiftParams,
    pub lime: LimeParams,
    pub train: TrainConfig,
    pub n_explanations: usize,
    pub n_retrainings: usize,
    /// Seeds window selection and LIME sampling.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output_dir: PathBuf::from("out"),
            window_len: DEFAULT_WINDOW_LEN,
            stft: StftParams::default(),
            quickshift: QuickshiftParams::default(),
            lime: LimeParams::default(),
            train: TrainConfig::default(),
            n_explanations: 400,
            n_retrainings: 16,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; a relative manifest path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = formats::read_json(path)?;
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_explanations == 0 || self.n_retrainings == 0 {
            return Err(Error::invalid("n_explanations and n_retrainings must be >= 1"));
        }
        self.stft.validate()?;
        self.stft.check_window(self.window_len)?;
        self.quickshift.validate()?;
        self.lime.validate()?;
        self.train.validate()
    }

    pub fn load_manifest(&self) -> Result<DatasetManifest> {
        let manifest = match &self.manifest {
            Some(path) => formats::read_json(path)?,
            None => DatasetManifest::desk_scale(0),
        };
        manifest.validate(self.window_len)?;
        Ok(manifest)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.output_dir)
    }
}

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("signals/manifest.json")
    }

    pub fn signal(&self, class_id: u32) -> PathBuf {
        self.root.join(format!("signals/class_{class_id}.sig"))
    }

    pub fn model_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("models/seed_{seed}"))
    }

    pub fn checkpoint(&self, seed: u64) -> PathBuf {
        self.model_dir(seed).join("model.mdl")
    }

    pub fn eval_report(&self, seed: u64) -> PathBuf {
        self.model_dir(seed).join("report.json")
    }

    pub fn segment_dir(&self, class_id: u32) -> PathBuf {
        self.root.join(format!("segments/class_{class_id}"))
    }

    pub fn segmentation(&self, class_id: u32, index: usize) -> PathBuf {
        self.segment_dir(class_id).join(format!("window_{index:04}.seg"))
    }

    pub fn explain_dir(&self, seed: u64, class_id: u32) -> PathBuf {
        self.root.join(format!("explain/seed_{seed}/class_{class_id}"))
    }

    pub fn explanation(&self, seed: u64, class_id: u32, index: usize) -> PathBuf {
        self.explain_dir(seed, class_id).join(format!("expl_{index:04}.exp"))
    }

    pub fn ensemble_dir(&self, class_id: u32) -> PathBuf {
        self.root.join(format!("ensemble/class_{class_id}"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn provenance(parts: &[(&str, String)]) -> String {
    parts.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

/// Keeps `dir` if it was written for `key`, otherwise empties it and stamps
/// the new key.
fn claim_cache<K: Serialize>(dir: &Path, key: &K) -> Result<()> {
    let path = dir.join("cache_key.json");
    let want = serde_json::to_value(key)?;
    if let Ok(have) = formats::read_json::<serde_json::Value>(&path) {
        if have == want {
            return Ok(());
        }
    }
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    formats::write_json(&path, &want)
}

fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().take(16).map(|b| format!("{b:02x}")).collect()
}

// --- synthesis --------------------------------------------------------------

/// Synthesizes every class signal and writes it with a manifest echo.
pub fn synthesize(cfg: &PipelineConfig, manifest: DatasetManifest) -> Result<Dataset> {
    let ds = Dataset::synthesize(manifest, cfg.window_len, cfg.stft)?;
    let layout = cfg.layout();
    formats::write_json(&layout.manifest(), ds.manifest())?;
    for spec in &ds.manifest().classes {
        formats::write_signal(&layout.signal(spec.class_id), ds.signal(spec.class_id), ds.manifest().sample_rate)?;
    }
    Ok(ds)
}

/// Loads the signals written by [`synthesize`].
pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let layout = cfg.layout();
    let manifest: DatasetManifest = formats::read_json(&layout.manifest())?;
    let mut signals = Vec::with_capacity(manifest.n_classes());
    for id in 0..manifest.n_classes() as u32 {
        let (samples, rate) = formats::read_signal(&layout.signal(id))?;
        if (rate - manifest.sample_rate).abs() > 1e-9 * manifest.sample_rate {
            return Err(Error::invalid(format!("class {id}: signal sample rate {rate} differs from manifest")));
        }
        signals.push(samples);
    }
    Dataset::from_signals(manifest, signals, cfg.window_len, cfg.stft)
}

// --- training ---------------------------------------------------------------

/// Trains the reference CNN for `seed`, or loads it if a checkpoint and
/// report already exist.
pub fn train_or_load(cfg: &PipelineConfig, ds: &Dataset, seed: u64) -> Result<(Cnn<f32>, EvalReport)> {
    let layout = cfg.layout();
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let key = serde_json::json!({
        "manifest": ds.manifest(),
        "window_len": ds.window_len(),
        "stft": ds.stft_params(),
        "train": train_cfg,
    });
    claim_cache(&layout.model_dir(seed), &key)?;
    let (ckpt, report_path) = (layout.checkpoint(seed), layout.eval_report(seed));
    if ckpt.exists() && report_path.exists() {
        return Ok((formats::read_checkpoint(&ckpt)?, formats::read_json(&report_path)?));
    }
    let trained = train(ds, &train_cfg)?;
    formats::write_checkpoint(&ckpt, &trained.model)?;
    write_training_plots(&layout.model_dir(seed), &trained.report, seed)?;
    formats::write_json(&report_path, &trained.report)?;
    Ok((trained.model, trained.report))
}

pub fn write_training_plots(dir: &Path, report: &EvalReport, seed: u64) -> Result<()> {
    let prov = provenance(&[("source", "report.json".into()), ("seed", seed.to_string())]);
    let epochs = |v: &[f64]| (1..=v.len()).map(|e| e as f64).collect::<Vec<_>>();
    let svg = plot::line_plot(
        "Training and validation accuracy",
        "epoch",
        "accuracy",
        &[
            Series::new("train", epochs(&report.train_accuracy), report.train_accuracy.clone()),
            Series::new("validation", epochs(&report.val_accuracy), report.val_accuracy.clone()),
        ],
        &prov,
    )?;
    formats::write_bytes(&dir.join("accuracy.svg"), svg.as_bytes())?;
    if !report.confusion.is_empty() {
        let svg = plot::confusion_svg(&report.confusion, &prov)?;
        formats::write_bytes(&dir.join("confusion.svg"), svg.as_bytes())?;
    }
    Ok(())
}

// --- explanation ------------------------------------------------------------

/// Class whose golden spectrogram calibrates the quickshift defaults.
pub const CALIBRATION_CLASS: u32 = 1;

/// The fixed window used for calibration and figures: the first window of
/// the class's validation interval.
pub fn golden_sample(ds: &Dataset, class_id: u32) -> Result<WindowSample> {
    let manifest = ds.manifest();
    let len = manifest
        .class_len(class_id)
        .ok_or_else(|| Error::invalid(format!("class {class_id} not in manifest")))?;
    let (start, _) = split_interval(len, ds.window_len(), manifest.f_tr, Split::Validation)
        .ok_or(Error::EmptyInterval { class_id, split: "validation" })?;
    Ok(WindowSample { class_id, start, length: ds.window_len(), split: Split::Validation })
}

/// Validation windows to explain for `class_id`. They depend only on the
/// seed, so every retraining explains the same spectrograms.
pub fn explanation_windows(ds: &Dataset, class_id: u32, n: usize, seed: u64) -> Result<Vec<WindowSample>> {
    if class_id as usize >= ds.n_classes() {
        return Err(Error::invalid(format!("class {class_id} outside {} classes", ds.n_classes())));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 0x5749_0000 + class_id as u64));
    (0..n).map(|_| ds.draw_for_class(class_id, Split::Validation, &mut rng)).collect()
}

/// Canvases and segmentations for a set of windows.
pub struct SegmentedWindows {
    pub windows: Vec<WindowSample>,
    pub canvases: Vec<Grid>,
    pub segmaps: Vec<SuperpixelMap>,
}

impl SegmentedWindows {
    pub fn compute(ds: &Dataset, windows: Vec<WindowSample>, params: &QuickshiftParams) -> Result<Self> {
        let canvases = ds.canvases(&windows)?;
        let segmaps = par::try_map(&canvases, |c| quickshift(c, params))?;
        Ok(Self { windows, canvases, segmaps })
    }

    /// Like [`compute`](Self::compute), but reads and writes `SEG1` files.
    /// The windows must share one class.
    pub fn cached(ds: &Dataset, windows: Vec<WindowSample>, params: &QuickshiftParams, layout: &Layout) -> Result<Self> {
        let class_id = windows.first().map_or(0, |w| w.class_id);
        if windows.iter().any(|w| w.class_id != class_id) {
            return Err(Error::invalid("cached segmentation needs windows of a single class"));
        }
        claim_cache(&layout.segment_dir(class_id), &serde_json::json!({ "quickshift": params, "windows": windows }))?;
        let canvases = ds.canvases(&windows)?;
        let indexed: Vec<(usize, &Grid)> = canvases.iter().enumerate().collect();
        let segmaps = par::try_map(&indexed, |&(i, canvas)| -> Result<SuperpixelMap> {
            let path = layout.segmentation(windows[i].class_id, i);
            if path.exists() {
                let map = formats::read_segmentation(&path)?;
                if map.rows() == canvas.rows() && map.cols() == canvas.cols() {
                    return Ok(map);
                }
            }
            let map = quickshift(canvas, params)?;
            formats::write_segmentation(&path, &map)?;
            Ok(map)
        })?;
        Ok(Self { windows, canvases, segmaps })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// LIME seed for window `index`; shared across models so retrainings see
/// identical perturbations.
pub fn lime_seed(seed: u64, class_id: u32, index: usize) -> u64 {
    derive_seed(derive_seed(seed, 0x4c49_0000 + class_id as u64), index as u64)
}

/// Explains every window for its own class (the ground truth, whatever the
/// model predicts).
pub fn explain_windows<C: crate::model::Classifier + ?Sized>(
    model: &C,
    segmented: &SegmentedWindows,
    params: &LimeParams,
    seed: u64,
) -> Result<Vec<Explanation>> {
    let idx: Vec<usize> = (0..segmented.len()).collect();
    par::try_map(&idx, |&i| {
        let class_id = segmented.windows[i].class_id;
        let mut rng = rng_from_seed(lime_seed(seed, class_id, i));
        explain(&segmented.canvases[i], &segmented.segmaps[i], model, class_id, params, &mut rng)
    })
}

/// Aggregate, projection and derivative for one class.
#[derive(Debug, Clone)]
pub struct ClassProfiles {
    pub aggregate: AggregatedExplanation,
    pub projection: FrequencyProfile,
    pub derivative: FrequencyProfile,
}

impl ClassProfiles {
    pub fn from_explanations(explanations: &[Explanation], bin_hz: f64) -> Result<Self> {
        let aggregate = aggregate(explanations)?;
        let projection = project(&aggregate, bin_hz);
        let derivative = derivative_profile(&projection)?;
        Ok(Self { aggregate, projection, derivative })
    }
}

/// Mean Welch profile over a set of windows.
pub fn mean_welch(ds: &Dataset, windows: &[WindowSample]) -> Result<FrequencyProfile> {
    if windows.is_empty() {
        return Err(Error::invalid("no windows for Welch profile"));
    }
    let profiles = par::try_map(windows, |w| ds.welch(w))?;
    let n = profiles.len() as f64;
    let mut mean = vec![0.0; profiles[0].bins()];
    for p in &profiles {
        for (m, v) in mean.iter_mut().zip(&p.values) {
            *m += v / n;
        }
    }
    Ok(FrequencyProfile::new(mean, ProfileKind::Welch, profiles[0].bin_hz))
}

/// Frequency bins of a class's injected features.
pub fn feature_bins(ds: &Dataset, class_id: u32) -> Vec<usize> {
    let params = ds.stft_params();
    ds.manifest()
        .class(class_id)
        .map(|c| c.feature_frequencies().iter().map(|&f| params.bin_of(f)).collect())
        .unwrap_or_default()
}

/// Ground-truth scores of a derivative profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileScore {
    pub peaks: Vec<usize>,
    pub recalled: usize,
    pub total: usize,
    /// `None` when the class has no injected features.
    pub recall: Option<f64>,
    pub noise_floor: f64,
}

pub fn score_profile(derivative: &FrequencyProfile, feature_bins: &[usize]) -> ProfileScore {
    let r = peak_recall(derivative, feature_bins, RECALL_TOLERANCE);
    ProfileScore {
        peaks: detect_peaks(&derivative.values),
        recalled: r.recalled,
        total: r.total,
        recall: r.recall(),
        noise_floor: noise_floor(derivative, feature_bins, NOISE_EXCLUSION),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class_id: u32,
    pub model_seed: u64,
    pub n_explanations: usize,
    pub n_short_of_positive: usize,
    pub mean_local_r2: f64,
    pub mean_segments: f64,
    pub temporality: f64,
    pub temporality_flagged: bool,
    pub feature_bins: Vec<usize>,
    pub score: ProfileScore,
}

/// Explains `n_explanations` windows of `class_id` with the checkpoint for
/// `model_seed` and writes explanation files, aggregate, profiles and plots.
/// Explanation files that already exist are reused.
pub fn run_explain(cfg: &PipelineConfig, ds: &Dataset, model_seed: u64, class_id: u32) -> Result<ClassSummary> {
    let layout = cfg.layout();
    let model = formats::read_checkpoint(&layout.checkpoint(model_seed))?;
    if class_id as usize >= ds.n_classes() {
        return Err(Error::invalid(format!("class {class_id} outside {} classes", ds.n_classes())));
    }
    let windows = explanation_windows(ds, class_id, cfg.n_explanations, cfg.seed)?;
    let explanations = explain_cached(cfg, ds, &model, windows.clone(), model_seed)?;

    let bin_hz = ds.stft_params().bin_hz();
    let profiles = ClassProfiles::from_explanations(&explanations, bin_hz)?;
    let welch = mean_welch(ds, &windows)?;
    let bins = feature_bins(ds, class_id);
    let temporality = temporality_score(&profiles.aggregate);
    let segments: f64 = explanations.iter().map(|e| e.superpixel_weights.len() as f64).sum();
    let summary = ClassSummary {
        class_id,
        model_seed,
        n_explanations: explanations.len(),
        n_short_of_positive: explanations.iter().filter(|e| e.short_of_positive).count(),
        mean_local_r2: explanations.iter().map(|e| e.local_r2).sum::<f64>() / explanations.len() as f64,
        mean_segments: segments / explanations.len() as f64,
        temporality,
        temporality_flagged: temporality > TEMPORALITY_FLAG,
        score: score_profile(&profiles.derivative, &bins),
        feature_bins: bins,
    };

    let dir = layout.explain_dir(model_seed, class_id);
    formats::write_grid(&dir.join("aggregate.spc"), &GridFile::aggregate(&profiles.aggregate))?;
    formats::write_profile_csv(&dir.join("projection.csv"), &profiles.projection, None, false)?;
    formats::write_profile_csv(&dir.join("derivative.csv"), &profiles.derivative, None, false)?;
    formats::write_profile_csv(&dir.join("welch.csv"), &welch, None, false)?;
    formats::write_json(&dir.join("summary.json"), &summary)?;
    write_class_plots(&dir, &profiles, &welch, class_id, model_seed)?;
    Ok(summary)
}

fn explain_cached(
    cfg: &PipelineConfig,
    ds: &Dataset,
    model: &Cnn<f32>,
    windows: Vec<WindowSample>,
    model_seed: u64,
) -> Result<Vec<Explanation>> {
    let layout = cfg.layout();
    let class_id = windows.first().map_or(0, |w| w.class_id);
    let key = serde_json::json!({
        "model": digest_hex(&formats::encode_checkpoint(model)),
        "seed": cfg.seed,
        "lime": cfg.lime,
        "quickshift": cfg.quickshift,
        "windows": windows,
    });
    claim_cache(&layout.explain_dir(model_seed, class_id), &key)?;
    let paths: Vec<PathBuf> = (0..windows.len()).map(|i| layout.explanation(model_seed, class_id, i)).collect();
    if paths.iter().all(|p| p.exists()) {
        return par::try_map(&paths, |p| formats::read_explanation(p));
    }
    let segmented = SegmentedWindows::cached(ds, windows, &cfg.quickshift, &layout)?;
    let idx: Vec<usize> = (0..segmented.len()).collect();
    par::try_map(&idx, |&i| {
        if paths[i].exists() {
            return formats::read_explanation(&paths[i]);
        }
        let mut rng = rng_from_seed(lime_seed(cfg.seed, class_id, i));
        let e = explain(&segmented.canvases[i], &segmented.segmaps[i], model, class_id, &cfg.lime, &mut rng)?;
        formats::write_explanation(&paths[i], &e, Some(&cfg.lime))?;
        Ok(e)
    })
}

/// Scales a profile so its maximum is 1 (for overlays on a shared axis).
fn unit_max(values: &[f64]) -> Vec<f64> {
    let peak = values.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        values.iter().map(|v| v / peak).collect()
    } else {
        values.to_vec()
    }
}

fn write_class_plots(dir: &Path, p: &ClassProfiles, welch: &FrequencyProfile, class_id: u32, seed: u64) -> Result<()> {
    let prov = |src: &str| provenance(&[("source", src.into()), ("class", class_id.to_string()), ("seed", seed.to_string())]);
    let khz = welch.bin_hz / 1e3;
    let svg = plot::heatmap_svg(
        &p.aggregate.values,
        &format!("Aggregated LIME, class {class_id} ({} explanations)", p.aggregate.n_explanations),
        &prov("aggregate.spc"),
    )?;
    formats::write_bytes(&dir.join("aggregate.svg"), svg.as_bytes())?;
    let svg = plot::line_plot(
        &format!("Aggregated LIME frequency projection, class {class_id}"),
        "frequency (kHz)",
        "pixel count",
        &[Series::indexed("projection", p.projection.values.clone(), khz)],
        &prov("projection.csv"),
    )?;
    formats::write_bytes(&dir.join("projection.svg"), svg.as_bytes())?;
    let welch_db: Vec<f64> = welch.values.iter().map(|v| 10.0 * v.max(1e-30).log10()).collect();
    let (lo, hi) = welch_db.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let welch_unit: Vec<f64> = welch_db.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect();
    let svg = plot::line_plot(
        &format!("Welch transform and derivative LIME projection, class {class_id}"),
        "frequency (kHz)",
        "normalized",
        &[
            Series::indexed("derivative LIME", unit_max(&p.derivative.values), khz),
            Series::indexed("Welch (dB, scaled)", welch_unit, khz),
        ],
        &prov("derivative.csv welch.csv"),
    )?;
    formats::write_bytes(&dir.join("derivative_welch.svg"), svg.as_bytes())
}

// --- ensemble ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub class_id: u32,
    pub model_seeds: Vec<u64>,
    pub run_scores: Vec<ProfileScore>,
    pub mean_score: ProfileScore,
    pub min_run_recall: Option<f64>,
    pub median_run_noise_floor: f64,
}

/// Summarizes derivative profiles from several retrainings of one class.
pub fn summarize_ensemble(
    class_id: u32,
    model_seeds: Vec<u64>,
    runs: &[FrequencyProfile],
    feature_bins: &[usize],
) -> Result<(EnsembleProfile, EnsembleSummary)> {
    let stats = ensemble_stats(runs)?;
    let run_scores: Vec<ProfileScore> = runs.iter().map(|r| score_profile(r, feature_bins)).collect();
    let min_run_recall = run_scores.iter().filter_map(|s| s.recall).reduce(f64::min);
    let floors: Vec<f64> = run_scores.iter().map(|s| s.noise_floor).collect();
    let summary = EnsembleSummary {
        class_id,
        model_seeds,
        mean_score: score_profile(&stats.mean, feature_bins),
        min_run_recall,
        median_run_noise_floor: crate::aggregate::median(&floors),
        run_scores,
    };
    Ok((stats, summary))
}

/// Trains (or reuses) `n_retrainings` models and explains `class_id` with
/// each, then writes the ensemble mean/std profile and plots.
pub fn run_ensemble(cfg: &PipelineConfig, ds: &Dataset, class_id: u32) -> Result<EnsembleSummary> {
    if cfg.n_retrainings < 2 {
        return Err(Error::invalid("an ensemble needs n_retrainings >= 2"));
    }
    let seeds: Vec<u64> = (0..cfg.n_retrainings as u64).map(|r| cfg.train.seed.wrapping_add(r)).collect();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let fail = |e: Error| Error::Retraining { seed, source: Box::new(e) };
        train_or_load(cfg, ds, seed).map_err(fail)?;
        run_explain(cfg, ds, seed, class_id).map_err(fail)?;
        let path = cfg.layout().explain_dir(seed, class_id).join("derivative.csv");
        runs.push(formats::read_profile_csv(&path, ProfileKind::LimeDerivative)?);
    }
    let bins = feature_bins(ds, class_id);
    let (stats, summary) = summarize_ensemble(class_id, seeds.clone(), &runs, &bins)?;

    let dir = cfg.layout().ensemble_dir(class_id);
    formats::write_profile_csv(&dir.join("ensemble.csv"), &stats.mean, Some(&stats.std), false)?;
    let mut runs_csv = String::from("bin,freq_hz");
    for s in &seeds {
        runs_csv.push_str(&format!(",seed_{s}"));
    }
    runs_csv.push('\n');
    for b in 0..stats.mean.bins() {
        runs_csv.push_str(&format!("{b},{}", stats.mean.freq_hz(b)));
        for r in &runs {
            runs_csv.push_str(&format!(",{}", r.values[b]));
        }
        runs_csv.push('\n');
    }
    formats::write_bytes(&dir.join("runs.csv"), runs_csv.as_bytes())?;
    formats::write_json(&dir.join("summary.json"), &summary)?;

    let welch: FrequencyProfile = formats::read_profile_csv(
        &cfg.layout().explain_dir(seeds[0], class_id).join("welch.csv"),
        ProfileKind::Welch,
    )?;
    write_ensemble_plots(&dir, &stats, &runs, &seeds, &welch, class_id)?;
    Ok(summary)
}

fn write_ensemble_plots(
    dir: &Path,
    stats: &EnsembleProfile,
    runs: &[FrequencyProfile],
    seeds: &[u64],
    welch: &FrequencyProfile,
    class_id: u32,
) -> Result<()> {
    let khz = stats.mean.bin_hz / 1e3;
    let prov = |src: &str| provenance(&[("source", src.into()), ("class", class_id.to_string()), ("models", seeds.len().to_string())]);
    let series: Vec<Series> = runs
        .iter()
        .zip(seeds)
        .map(|(r, s)| Series::indexed(format!("seed {s}"), r.values.clone(), khz))
        .collect();
    // the legend only has room for a handful of entries
    let shown: Vec<Series> = series.into_iter().take(6).collect();
    let svg = plot::line_plot(
        &format!("Derivative LIME projections per retraining, class {class_id}"),
        "frequency (kHz)",
        "|dW|",
        &shown,
        &prov("runs.csv"),
    )?;
    formats::write_bytes(&dir.join("runs.svg"), svg.as_bytes())?;
    let peak = stats.mean.values.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let welch_db: Vec<f64> = welch.values.iter().map(|v| 10.0 * v.max(1e-30).log10()).collect();
    let (lo, hi) = welch_db.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let svg = plot::line_plot(
        &format!("Ensemble derivative LIME projection, class {class_id}"),
        "frequency (kHz)",
        "normalized",
        &[
            Series::indexed("mean ± std", stats.mean.values.iter().map(|v| v * scale).collect(), khz)
                .with_band(stats.std.values.iter().map(|v| v * scale).collect()),
            Series::indexed(
                "Welch (dB, scaled)",
                welch_db.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect(),
                khz,
            ),
        ],
        &prov("ensemble.csv"),
    )?;
    formats::write_bytes(&dir.join("ensemble.svg"), svg.as_bytes())
}

// --- report -----------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub figures: Vec<String>,
    pub missing: Vec<String>,
}

/// Collects the figures of one run (model `model_seed`) into `out/report`,
/// rendering golden spectrograms for every class. Stages that have not
/// been run are listed as missing rather than computed.
pub fn run_report(cfg: &PipelineConfig, ds: &Dataset, model_seed: u64) -> Result<ReportIndex> {
    let layout = cfg.layout();
    let out = layout.report_dir();
    let mut index = ReportIndex::default();
    let copy = |from: PathBuf, name: String, index: &mut ReportIndex| -> Result<()> {
        if from.exists() {
            formats::write_bytes(&out.join(&name), &std::fs::read(&from)?)?;
            index.figures.push(name);
        } else {
            index.missing.push(from.display().to_string());
        }
        Ok(())
    };
    let model_dir = layout.model_dir(model_seed);
    copy(model_dir.join("accuracy.svg"), "accuracy.svg".into(), &mut index)?;
    copy(model_dir.join("confusion.svg"), "confusion.svg".into(), &mut index)?;
    for class_id in 0..ds.n_classes() as u32 {
        let sample = golden_sample(ds, class_id)?;
        let spec = ds.spectrogram(&sample)?;
        let name = format!("spectrogram_class_{class_id}.svg");
        let prov = provenance(&[("class", class_id.to_string()), ("window_start", sample.start.to_string())]);
        let svg = plot::heatmap_svg(&spec.values, &format!("Log STFT, class {class_id}"), &prov)?;
        formats::write_bytes(&out.join(&name), svg.as_bytes())?;
        index.figures.push(name);
        let dir = layout.explain_dir(model_seed, class_id);
        for fig in ["aggregate", "projection", "derivative_welch"] {
            copy(dir.join(format!("{fig}.svg")), format!("{fig}_class_{class_id}.svg"), &mut index)?;
        }
        let ens = layout.ensemble_dir(class_id);
        if ens.exists() {
            for fig in ["runs", "ensemble"] {
                copy(ens.join(format!("{fig}.svg")), format!("{fig}_class_{class_id}.svg"), &mut index)?;
            }
        }
    }
    formats::write_json(&out.join("index.json"), &index)?;
    Ok(index)
}
