//! Helpers shared by the integration tests.
#![allow(dead_code)]

use spectro_explain::limexp::{sample_masks, LimeParams, MaskFill};
use spectro_explain::model::FnClassifier;
use spectro_explain::quickseg::SuperpixelMap;
use spectro_explain::synthgen::rng_from_seed;
use spectro_explain::{Grid, Result};

/// Stub probability for the target class: 0.6 b3 + 0.3 b7 + 0.1 b9.
pub const STUB_COEFS: [(usize, f64); 3] = [(3, 0.6), (7, 0.3), (9, 0.1)];

/// 12x16 canvas of ones split into twelve 4x4 block segments.
pub fn block_setup() -> (Grid, SuperpixelMap) {
    let labels = (0..12 * 16).map(|i| ((i / 16) / 4 * 4 + (i % 16) / 4) as u32).collect();
    (Grid::filled(12, 16, 1.0), SuperpixelMap::new(12, 16, labels).unwrap())
}

/// Two-class stub that reads segment visibility back out of the perturbed
/// canvas (hidden segments are filled with 0).
pub fn linear_stub() -> FnClassifier<impl Fn(&Grid) -> Vec<f64> + Sync> {
    FnClassifier::new(2, |g: &Grid| {
        let bit = |s: usize| if g.get(s / 4 * 4, s % 4 * 4) > 0.5 { 1.0 } else { 0.0 };
        let p: f64 = STUB_COEFS.iter().map(|&(s, c)| c * bit(s)).sum();
        vec![p, 1.0 - p]
    })
}

pub fn oracle_params() -> LimeParams {
    LimeParams {
        n_samples: 500,
        ridge_lambda: 1e-3,
        mask_fill: MaskFill::Constant(0.0),
        ..Default::default()
    }
}

/// Weighted ridge with an unpenalized intercept, solved directly from the
/// augmented normal equations by Gaussian elimination with partial
/// pivoting. Returns `(intercept, coefficients)`.
pub fn ridge_by_elimination(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let p = x[0].len();
    let m = p + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let aug: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += wi * aug[i] * aug[j];
            }
            a[i][m] += wi * aug[i] * yi;
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += lambda;
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, piv);
        let pivot = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / pivot[col];
                for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let theta: Vec<f64> = (0..m).map(|i| a[i][m] / a[i][i]).collect();
    (theta[0], theta[1..].to_vec())
}

/// Recomputes the explainer's regression problem for `seed` and solves it
/// with [`ridge_by_elimination`].
pub fn oracle_coefficients(seed: u64, params: &LimeParams, n_segments: usize) -> Vec<f64> {
    let masks = sample_masks(n_segments, params.n_samples, &mut rng_from_seed(seed));
    let x: Vec<Vec<f64>> = masks.iter().map(|m| m.iter().map(|&b| f64::from(u8::from(b))).collect()).collect();
    let y: Vec<f64> = masks
        .iter()
        .map(|m| STUB_COEFS.iter().map(|&(s, c)| if m[s] { c } else { 0.0 }).sum())
        .collect();
    let w: Vec<f64> = masks
        .iter()
        .map(|m| {
            let d = m.iter().filter(|&&b| !b).count() as f64 / n_segments as f64;
            (-(d * d) / (params.kernel_width * params.kernel_width)).exp()
        })
        .collect();
    ridge_by_elimination(&x, &y, &w, params.ridge_lambda).1
}

pub fn ok<T>(r: Result<T>) -> T {
    r.unwrap()
}
