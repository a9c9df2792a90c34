//! Closed-form weighted ridge regression with an unpenalised intercept.

use crate::error::{Error, Result};
use crate::model::gemm;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted coefficient of determination on the training rows.
    pub r2: f64,
    /// Weighted leave-one-out (PRESS) coefficient of determination: each
    /// row is predicted by the fit without it. Unlike `r2` it is not
    /// inflated when there are fewer rows than columns. Can be negative.
    pub loo_r2: f64,
}

/// Minimises `sum_i w_i (y_i - b - x_i . beta)^2 + lambda |beta|^2`.
///
/// `x` is row-major `n x p`. The intercept is removed by weighted centring,
/// then `(Xc' W Xc + lambda I) beta = Xc' W yc` is solved by Cholesky.
pub fn weighted_ridge(x: &[f64], n: usize, p: usize, y: &[f64], w: &[f64], lambda: f64) -> Result<RidgeFit> {
    if x.len() != n * p || y.len() != n || w.len() != n {
        return Err(Error::shape(format!("{n}x{p} design with {n} targets and weights"), format!("{} / {} / {}", x.len(), y.len(), w.len())));
    }
    if n == 0 || p == 0 {
        return Err(Error::invalid("ridge needs at least one row and one column"));
    }
    if !(lambda >= 0.0) || w.iter().any(|&wi| !(wi >= 0.0)) {
        return Err(Error::invalid("lambda and weights must be >= 0"));
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::invalid("sample weights sum to zero"));
    }

    let y_mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut x_mean = vec![0.0; p];
    for (row, &wi) in x.chunks_exact(p).zip(w) {
        for (m, &v) in x_mean.iter_mut().zip(row) {
            *m += wi * v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= wsum);

    // rows scaled by sqrt(w) after centring
    let mut xs = vec![0.0; n * p];
    let mut ys = vec![0.0; n];
    for i in 0..n {
        let s = w[i].sqrt();
        for j in 0..p {
            xs[i * p + j] = s * (x[i * p + j] - x_mean[j]);
        }
        ys[i] = s * (y[i] - y_mean);
    }
    let mut gram = vec![0.0; p * p];
    gemm(true, false, p, n, p, &xs, &xs, 0.0, &mut gram);
    let mut rhs = vec![0.0; p];
    gemm(true, false, p, n, 1, &xs, &ys, 0.0, &mut rhs);

    let trace: f64 = (0..p).map(|j| gram[j * p + j]).sum();
    let mut ridge = lambda;
    let (coefficients, factor) = loop {
        let mut a = gram.clone();
        for j in 0..p {
            a[j * p + j] += ridge;
        }
        if cholesky(&mut a, p) {
            let mut beta = rhs.clone();
            forward_substitute(&a, p, &mut beta);
            back_substitute(&a, p, &mut beta);
            break (beta, a);
        }
        // singular normal equations (lambda = 0 with collinear columns)
        let jitter = 1e-12 * (trace / p as f64).max(1e-300);
        if ridge >= jitter * 1e6 {
            return Err(Error::invalid("normal equations are singular"));
        }
        ridge = if ridge == 0.0 { jitter } else { ridge * 10.0 };
    };
    let intercept = y_mean - coefficients.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();

    // Leverage of row i: w_i / sum(w) from the unpenalised intercept plus
    // xs_i' A^-1 xs_i = |L^-1 xs_i|^2 from the centred block.
    let (mut ss_res, mut ss_tot, mut ss_loo) = (0.0, 0.0, 0.0);
    let mut z = vec![0.0; p];
    for i in 0..n {
        let pred = intercept + x[i * p..(i + 1) * p].iter().zip(&coefficients).map(|(a, b)| a * b).sum::<f64>();
        let resid = y[i] - pred;
        ss_res += w[i] * resid.powi(2);
        ss_tot += w[i] * (y[i] - y_mean).powi(2);
        if w[i] > 0.0 {
            z.copy_from_slice(&xs[i * p..(i + 1) * p]);
            forward_substitute(&factor, p, &mut z);
            let h = w[i] / wsum + z.iter().map(|v| v * v).sum::<f64>();
            ss_loo += w[i] * (resid / (1.0 - h).max(1e-12)).powi(2);
        }
    }
    // Rounding leaves a constant target with a tiny nonzero spread.
    let scale: f64 = (0..n).map(|i| w[i] * y[i] * y[i]).sum::<f64>().max(f64::MIN_POSITIVE);
    let determination = |ss: f64| {
        if ss_tot > 1e-20 * scale {
            1.0 - ss / ss_tot
        } else if ss <= 1e-20 * scale {
            1.0
        } else {
            0.0
        }
    };
    Ok(RidgeFit { coefficients, intercept, r2: determination(ss_res), loo_r2: determination(ss_loo) })
}

/// In-place lower Cholesky factor of a symmetric positive-definite `a`;
/// `false` if `a` is not numerically positive definite.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// `z <- L^-1 z` for the factor left by [`cholesky`].
fn forward_substitute(l: &[f64], n: usize, z: &mut [f64]) {
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * z[k]).sum();
        z[i] = (z[i] - s) / l[i * n + i];
    }
}

/// `z <- L'^-1 z`.
fn back_substitute(l: &[f64], n: usize, z: &mut [f64]) {
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * z[k]).sum();
        z[i] = (z[i] - s) / l[i * n + i];
    }
}
