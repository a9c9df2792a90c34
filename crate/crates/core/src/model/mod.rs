//! Black-box classifier interface and the trainable reference network.

mod cnn;
mod scalar;
mod train;

pub use cnn::{Architecture, Cnn, Trace};
pub use scalar::{gemm, Scalar};
pub use train::{evaluate, train, EvalReport, TrainConfig, TrainedModel};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::par;

/// Anything that maps a batch of spectrogram canvases to per-class
/// probabilities. This is all the explainer needs from a model.
pub trait Classifier: Sync {
    fn n_classes(&self) -> usize;

    /// One probability vector per input, in input order.
    fn predict_proba(&self, batch: &[Grid]) -> Result<Vec<Vec<f64>>>;
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn predict_proba(&self, batch: &[Grid]) -> Result<Vec<Vec<f64>>> {
        (**self).predict_proba(batch)
    }
}

/// Keeps constant canvases (e.g. fully masked LIME samples) finite.
pub const INPUT_STD_FLOOR: f64 = 1e-3;

impl<T: Scalar> Cnn<T> {
    /// Converts a single-plane canvas into the network's input tensor:
    /// standardized to zero mean and unit variance (the noise floor of a
    /// canvas otherwise dominates early activations), then replicated
    /// across `input_planes`.
    pub fn adapt_input(&self, grid: &Grid) -> Result<Vec<T>> {
        let size = self.architecture().input_size;
        grid.ensure_shape(size, size)?;
        let n = grid.len() as f64;
        let mean = grid.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = grid.as_slice().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / var.sqrt().max(INPUT_STD_FLOOR);
        let plane: Vec<T> = grid.as_slice().iter().map(|&v| T::from_f64((v as f64 - mean) * inv)).collect();
        let planes = self.architecture().input_planes;
        let mut out = Vec::with_capacity(plane.len() * planes);
        for _ in 0..planes {
            out.extend_from_slice(&plane);
        }
        Ok(out)
    }
}

impl<T: Scalar> Classifier for Cnn<T> {
    fn n_classes(&self) -> usize {
        self.architecture().n_classes
    }

    fn predict_proba(&self, batch: &[Grid]) -> Result<Vec<Vec<f64>>> {
        par::try_map(batch, |g| {
            // Softmax in f64: a confident f32 softmax rounds the target to
            // exactly 1.0 and hides the small changes LIME regresses on.
            let logits: Vec<f64> = self.forward(&self.adapt_input(g)?)?.logits.into_iter().map(Scalar::to_f64).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / sum).collect())
        })
    }
}

/// Wraps a per-image function as a classifier; handy for stubs.
pub struct FnClassifier<F> {
    n_classes: usize,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&Grid) -> Vec<f64> + Sync,
{
    pub fn new(n_classes: usize, f: F) -> Self {
        Self { n_classes, f }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&Grid) -> Vec<f64> + Sync,
{
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, batch: &[Grid]) -> Result<Vec<Vec<f64>>> {
        par::try_map(batch, |g| {
            let p = (self.f)(g);
            if p.len() != self.n_classes {
                return Err(Error::shape(self.n_classes, p.len()));
            }
            Ok(p)
        })
    }
}
