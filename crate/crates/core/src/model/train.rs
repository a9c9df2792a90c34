use serde::{Deserialize, Serialize};

use super::cnn::{Architecture, Cnn};
use super::Classifier;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::synthgen::{derive_seed, rng_from_seed, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Freshly sampled training windows per epoch.
    pub train_set_size: usize,
    /// Fixed validation windows evaluated after every epoch.
    pub val_set_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 0,
            train_set_size: 288,
            val_set_size: 180,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.train_set_size == 0 {
            return Err(Error::invalid("epochs, batch_size and train_set_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_classes: usize,
    pub train_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// `confusion[truth][predicted]` counts from the final evaluation.
    pub confusion: Vec<Vec<u64>>,
    pub final_val_accuracy: f64,
    /// Set when the dataset has a single class, making accuracy trivial.
    pub degenerate: bool,
}

impl EvalReport {
    fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let n_classes = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let hits: u64 = (0..n_classes).map(|i| confusion[i][i]).sum();
        let acc = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        Self {
            n_classes,
            train_accuracy: Vec::new(),
            train_loss: Vec::new(),
            val_accuracy: vec![acc],
            confusion,
            final_val_accuracy: acc,
            degenerate: n_classes == 1,
        }
    }
}

pub struct TrainedModel {
    pub model: Cnn<f32>,
    pub report: EvalReport,
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Scores `n` labelled canvases pulled from `stream`.
pub fn evaluate<C, I>(classifier: &C, stream: I, n: usize) -> Result<EvalReport>
where
    C: Classifier + ?Sized,
    I: IntoIterator<Item = Result<(Grid, u32)>>,
{
    let k = classifier.n_classes();
    if n < k {
        return Err(Error::invalid(format!("need at least {k} evaluation samples, got {n}")));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    let mut stream = stream.into_iter();
    let mut seen = 0;
    while seen < n {
        let mut grids = Vec::new();
        let mut labels = Vec::new();
        for item in stream.by_ref().take((n - seen).min(64)) {
            let (g, label) = item?;
            if label as usize >= k {
                return Err(Error::invalid(format!("label {label} outside {k} classes")));
            }
            grids.push(g);
            labels.push(label as usize);
        }
        if grids.is_empty() {
            return Err(Error::invalid(format!("stream ended after {seen} of {n} samples")));
        }
        for (p, &truth) in classifier.predict_proba(&grids)?.iter().zip(&labels) {
            confusion[truth][argmax(p)] += 1;
        }
        seen += grids.len();
    }
    Ok(EvalReport::from_confusion(confusion))
}

/// Trains the reference architecture for the dataset's class count.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    train_with(dataset, config, Architecture::reference(dataset.n_classes()))
}

/// Mini-batch SGD with momentum on cross-entropy, drawing fresh training
/// windows every batch.
///
/// Deterministic for a given seed: the initial weights, every batch and the
/// validation set come from independent streams derived from `config.seed`,
/// and gradient accumulation is sequential.
pub fn train_with(dataset: &Dataset, config: &TrainConfig, arch: Architecture) -> Result<TrainedModel> {
    config.validate()?;
    if arch.n_classes != dataset.n_classes() {
        return Err(Error::invalid("architecture class count differs from dataset"));
    }
    let k = dataset.n_classes();
    let mut net = Cnn::<f32>::init(arch, derive_seed(config.seed, 1))?;
    let mut batch_rng = rng_from_seed(derive_seed(config.seed, 2));
    let mut val_rng = rng_from_seed(derive_seed(config.seed, 3));

    let val_size = config.val_set_size.max(k);
    let val_samples = (0..val_size)
        .map(|_| dataset.draw(Split::Validation, &mut val_rng))
        .collect::<Result<Vec<_>>>()?;
    let val_canvases = dataset.canvases(&val_samples)?;

    let mut report = EvalReport {
        n_classes: k,
        train_accuracy: Vec::new(),
        train_loss: Vec::new(),
        val_accuracy: Vec::new(),
        confusion: Vec::new(),
        final_val_accuracy: 0.0,
        degenerate: k == 1,
    };
    let mut velocity = vec![0.0f32; net.n_params()];
    let mut grad = vec![0.0f32; net.n_params()];
    let lr = config.learning_rate as f32;
    let mu = config.momentum as f32;
    let n_batches = config.train_set_size.div_ceil(config.batch_size);

    for epoch in 0..config.epochs {
        let (mut hits, mut seen, mut loss_sum) = (0usize, 0usize, 0.0f64);
        for batch in 0..n_batches {
            let size = config.batch_size.min(config.train_set_size - batch * config.batch_size);
            let samples = (0..size)
                .map(|_| dataset.draw(Split::Train, &mut batch_rng))
                .collect::<Result<Vec<_>>>()?;
            let canvases = dataset.canvases(&samples)?;
            grad.fill(0.0);
            let mut batch_loss = 0.0f64;
            for (canvas, sample) in canvases.iter().zip(&samples) {
                let trace = net.forward(&net.adapt_input(canvas)?)?;
                let label = sample.class_id as usize;
                if argmax(&trace.probs.iter().map(|&p| p as f64).collect::<Vec<_>>()) == label {
                    hits += 1;
                }
                batch_loss += net.backward(&trace, label, &mut grad) as f64;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss: batch_loss / size as f64 });
            }
            let scale = 1.0 / size as f32;
            for ((p, v), g) in net.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = mu * *v + g * scale;
                *p -= lr * *v;
            }
            seen += size;
            loss_sum += batch_loss;
        }
        report.train_accuracy.push(hits as f64 / seen as f64);
        report.train_loss.push(loss_sum / seen as f64);

        let labelled = val_canvases
            .iter()
            .cloned()
            .zip(val_samples.iter().map(|s| s.class_id))
            .map(Ok);
        let eval = evaluate(&net, labelled, val_size)?;
        report.val_accuracy.push(eval.final_val_accuracy);
        report.final_val_accuracy = eval.final_val_accuracy;
        report.confusion = eval.confusion;
    }
    Ok(TrainedModel { model: net, report })
}
