//! Small reference CNN.
//!
//! Three 3x3 stride-2 convolution blocks with ReLU, a mean over the time
//! axis (so frequency position survives pooling), a linear layer and a
//! softmax. Convolutions are lowered to im2col + gemm.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scalar::{gemm, Scalar};
use crate::error::{Error, Result};
use crate::synthgen::rng_from_seed;

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub input_planes: usize,
    pub channels: [usize; 3],
    pub n_classes: usize,
}

impl Architecture {
    pub fn reference(n_classes: usize) -> Self {
        Self {
            input_size: crate::spectro::SPEC_SIZE,
            input_planes: 1,
            channels: [8, 16, 32],
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.input_planes == 0 || self.channels.contains(&0) {
            return Err(Error::invalid("architecture dimensions must be >= 1"));
        }
        if !self.input_size.is_multiple_of(8) {
            return Err(Error::invalid("input size must be a multiple of 8"));
        }
        Ok(())
    }

    /// Stable 64-bit fingerprint stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("architecture serialises");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    fn convs(&self) -> [ConvShape; 3] {
        let mut cin = self.input_planes;
        let mut size = self.input_size;
        self.channels.map(|cout| {
            let shape = ConvShape { cin, cout, size_in: size };
            cin = cout;
            size /= 2;
            shape
        })
    }

    fn feature_len(&self) -> usize {
        self.channels[2] * self.input_size / 8
    }

    /// Named parameter tensors in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs().iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), vec![c.cout, c.cin, KERNEL, KERNEL]));
            out.push((format!("conv{}.bias", i + 1), vec![c.cout]));
        }
        out.push(("fc.weight".into(), vec![self.n_classes, self.feature_len()]));
        out.push(("fc.bias".into(), vec![self.n_classes]));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    cin: usize,
    cout: usize,
    size_in: usize,
}

impl ConvShape {
    fn size_out(&self) -> usize {
        self.size_in / 2
    }
    fn k(&self) -> usize {
        self.cin * TAPS
    }
    fn n(&self) -> usize {
        self.size_out() * self.size_out()
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    conv_w: [usize; 3],
    conv_b: [usize; 3],
    fc_w: usize,
    fc_b: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut off = 0;
        let mut conv_w = [0; 3];
        let mut conv_b = [0; 3];
        for (i, c) in arch.convs().iter().enumerate() {
            conv_w[i] = off;
            off += c.cout * c.k();
            conv_b[i] = off;
            off += c.cout;
        }
        let fc_w = off;
        off += arch.n_classes * arch.feature_len();
        let fc_b = off;
        off += arch.n_classes;
        Self { conv_w, conv_b, fc_w, fc_b, total: off }
    }
}

/// Intermediate values kept for the backward pass.
pub struct Trace<T> {
    cols: [Vec<T>; 3],
    acts: [Vec<T>; 3],
    features: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Cnn<T: Scalar> {
    arch: Architecture,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> Cnn<T> {
    /// He-normal convolution weights, Glorot-scaled linear layer, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![T::ZERO; layout.total];
        let mut rng = rng_from_seed(seed);
        for (i, c) in arch.convs().iter().enumerate() {
            let std = (2.0 / c.k() as f64).sqrt();
            for p in &mut params[layout.conv_w[i]..layout.conv_b[i]] {
                *p = T::from_f64(std * rng.sample::<f64, _>(StandardNormal));
            }
        }
        let std = (2.0 / (arch.feature_len() + arch.n_classes) as f64).sqrt();
        for p in &mut params[layout.fc_w..layout.fc_b] {
            *p = T::from_f64(std * rng.sample::<f64, _>(StandardNormal));
        }
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::shape(
                format!("{} parameters", layout.total),
                format!("{} parameters", params.len()),
            ));
        }
        Ok(Self { arch, layout, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Scalar>(&self) -> Cnn<U> {
        Cnn {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::from_f64(p.to_f64())).collect(),
        }
    }

    /// Number of values in one input: `planes * size * size`.
    pub fn input_len(&self) -> usize {
        self.arch.input_planes * self.arch.input_size * self.arch.input_size
    }

    pub fn forward(&self, input: &[T]) -> Result<Trace<T>> {
        if input.len() != self.input_len() {
            return Err(Error::shape(
                format!("{} input values", self.input_len()),
                format!("{}", input.len()),
            ));
        }
        let convs = self.arch.convs();
        let mut cols: [Vec<T>; 3] = Default::default();
        let mut acts: [Vec<T>; 3] = Default::default();
        for (l, shape) in convs.iter().enumerate() {
            let x = if l == 0 { input } else { &acts[l - 1][..] };
            let mut col = vec![T::ZERO; shape.k() * shape.n()];
            im2col(x, shape, &mut col);
            let w = &self.params[self.layout.conv_w[l]..self.layout.conv_b[l]];
            let b = &self.params[self.layout.conv_b[l]..self.layout.conv_b[l] + shape.cout];
            let mut out = vec![T::ZERO; shape.cout * shape.n()];
            gemm(false, false, shape.cout, shape.k(), shape.n(), w, &col, T::ZERO, &mut out);
            for (row, &bias) in out.chunks_exact_mut(shape.n()).zip(b) {
                for v in row {
                    let z = *v + bias;
                    *v = if z > T::ZERO { z } else { T::ZERO };
                }
            }
            cols[l] = col;
            acts[l] = out;
        }

        // mean over time (columns) of the last activation map
        let side = convs[2].size_out();
        let inv = T::from_f64(1.0 / side as f64);
        let features: Vec<T> = acts[2]
            .chunks_exact(side)
            .map(|row| row.iter().fold(T::ZERO, |acc, &v| acc + v) * inv)
            .collect();

        let nc = self.arch.n_classes;
        let fl = self.arch.feature_len();
        let mut logits = self.params[self.layout.fc_b..self.layout.fc_b + nc].to_vec();
        let fc_w = &self.params[self.layout.fc_w..self.layout.fc_b];
        gemm(false, false, nc, fl, 1, fc_w, &features, T::ONE, &mut logits);
        let probs = softmax(&logits);
        Ok(Trace { cols, acts, features, logits, probs })
    }

    /// Class probabilities for one input.
    pub fn probabilities(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(input)?.probs)
    }

    /// Cross-entropy loss of `label` for the traced input.
    pub fn loss(trace: &Trace<T>, label: usize) -> T {
        log_sum_exp(&trace.logits) - trace.logits[label]
    }

    /// Accumulates the cross-entropy gradient for `label` into `grad` and
    /// returns the loss.
    pub fn backward(&self, trace: &Trace<T>, label: usize, grad: &mut [T]) -> T {
        assert_eq!(grad.len(), self.params.len());
        let nc = self.arch.n_classes;
        let fl = self.arch.feature_len();
        let lay = &self.layout;

        let mut dlogits = trace.probs.clone();
        dlogits[label] -= T::ONE;
        // fc.weight += dlogits (nc x 1) * features^T (1 x fl)
        gemm(false, false, nc, 1, fl, &dlogits, &trace.features, T::ONE, &mut grad[lay.fc_w..lay.fc_b]);
        for (g, &d) in grad[lay.fc_b..lay.fc_b + nc].iter_mut().zip(&dlogits) {
            *g += d;
        }
        let mut dfeat = vec![T::ZERO; fl];
        gemm(true, false, fl, nc, 1, &self.params[lay.fc_w..lay.fc_b], &dlogits, T::ZERO, &mut dfeat);

        let convs = self.arch.convs();
        let side = convs[2].size_out();
        let inv = T::from_f64(1.0 / side as f64);
        let mut dact: Vec<T> = dfeat
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d * inv, side))
            .collect();

        for l in (0..3).rev() {
            let shape = &convs[l];
            for (d, &a) in dact.iter_mut().zip(&trace.acts[l]) {
                if !(a > T::ZERO) {
                    *d = T::ZERO;
                }
            }
            let (k, n) = (shape.k(), shape.n());
            gemm(
                false,
                true,
                shape.cout,
                n,
                k,
                &dact,
                &trace.cols[l],
                T::ONE,
                &mut grad[lay.conv_w[l]..lay.conv_b[l]],
            );
            for (g, row) in grad[lay.conv_b[l]..lay.conv_b[l] + shape.cout]
                .iter_mut()
                .zip(dact.chunks_exact(n))
            {
                *g += row.iter().fold(T::ZERO, |acc, &v| acc + v);
            }
            if l > 0 {
                let mut dcol = vec![T::ZERO; k * n];
                gemm(true, false, k, shape.cout, n, &self.params[lay.conv_w[l]..lay.conv_b[l]], &dact, T::ZERO, &mut dcol);
                let mut dprev = vec![T::ZERO; shape.cin * shape.size_in * shape.size_in];
                col2im(&dcol, shape, &mut dprev);
                dact = dprev;
            }
        }
        Self::loss(trace, label)
    }
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(logits[0], |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().fold(T::ZERO, |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(logits[0], |a, b| if b > a { b } else { a });
    let sum = logits.iter().fold(T::ZERO, |a, &z| a + (z - max).exp());
    max + sum.ln()
}

/// Unfolds a `cin x s x s` input into a `(cin*9) x (s/2)^2` patch matrix for
/// a 3x3 kernel, stride 2, zero padding 1.
fn im2col<T: Scalar>(input: &[T], shape: &ConvShape, col: &mut [T]) {
    let s = shape.size_in;
    let so = shape.size_out();
    let n = shape.n();
    for ci in 0..shape.cin {
        let plane = &input[ci * s * s..(ci + 1) * s * s];
        for kr in 0..KERNEL {
            for kc in 0..KERNEL {
                let row = &mut col[(ci * TAPS + kr * KERNEL + kc) * n..][..n];
                for oy in 0..so {
                    let out = &mut row[oy * so..(oy + 1) * so];
                    let iy = (2 * oy + kr) as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        out.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * s..(iy as usize + 1) * s];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (2 * ox + kc) as isize - 1;
                        *o = if ix >= 0 && ix < s as isize { src[ix as usize] } else { T::ZERO };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im<T: Scalar>(col: &[T], shape: &ConvShape, out: &mut [T]) {
    let s = shape.size_in;
    let so = shape.size_out();
    let n = shape.n();
    for ci in 0..shape.cin {
        let plane = &mut out[ci * s * s..(ci + 1) * s * s];
        for kr in 0..KERNEL {
            for kc in 0..KERNEL {
                let row = &col[(ci * TAPS + kr * KERNEL + kc) * n..][..n];
                for oy in 0..so {
                    let iy = (2 * oy + kr) as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s..(iy as usize + 1) * s];
                    for (ox, &g) in row[oy * so..(oy + 1) * so].iter().enumerate() {
                        let ix = (2 * ox + kc) as isize - 1;
                        if ix >= 0 && ix < s as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture {
            input_size: 16,
            input_planes: 1,
            channels: [2, 3, 4],
            n_classes: 3,
        }
    }

    fn random_input(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..len).map(|_| rng.gen::<f64>()).collect()
    }

    /// Direct convolution used to cross-check the im2col lowering.
    fn direct_conv(input: &[f64], w: &[f64], shape: &ConvShape) -> Vec<f64> {
        let s = shape.size_in as isize;
        let so = shape.size_out();
        let mut out = vec![0.0; shape.cout * so * so];
        for co in 0..shape.cout {
            for oy in 0..so {
                for ox in 0..so {
                    let mut acc = 0.0;
                    for ci in 0..shape.cin {
                        for kr in 0..3 {
                            for kc in 0..3 {
                                let iy = 2 * oy as isize + kr as isize - 1;
                                let ix = 2 * ox as isize + kc as isize - 1;
                                if iy >= 0 && iy < s && ix >= 0 && ix < s {
                                    acc += w[co * shape.cin * 9 + ci * 9 + kr * 3 + kc]
                                        * input[ci * (s * s) as usize + (iy * s + ix) as usize];
                                }
                            }
                        }
                    }
                    out[co * so * so + oy * so + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let shape = ConvShape { cin: 2, cout: 3, size_in: 10 };
        let input = random_input(2 * 100, 1);
        let w = random_input(3 * 18, 2);
        let mut col = vec![0.0; shape.k() * shape.n()];
        im2col(&input, &shape, &mut col);
        let mut out = vec![0.0; 3 * shape.n()];
        gemm(false, false, 3, shape.k(), shape.n(), &w, &col, 0.0, &mut out);
        let expect = direct_conv(&input, &w, &shape);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let shape = ConvShape { cin: 2, cout: 1, size_in: 8 };
        let x = random_input(2 * 64, 3);
        let y = random_input(shape.k() * shape.n(), 4);
        let mut col = vec![0.0; y.len()];
        im2col(&x, &shape, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &shape, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let net = Cnn::<f32>::init(small_arch(), 0).unwrap();
        let p = net.probabilities(&vec![0.3; 256]).unwrap();
        let sum: f32 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn rejects_wrong_input_length() {
        let net = Cnn::<f32>::init(small_arch(), 0).unwrap();
        assert!(net.forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = Cnn::<f64>::init(small_arch(), 11).unwrap();
        let x = random_input(256, 12);
        let label = 1;
        let trace = net.forward(&x).unwrap();
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&trace, label, &mut grad);
        let loss_at = |p: &[f64]| {
            let n = Cnn::from_params(small_arch(), p.to_vec()).unwrap();
            Cnn::loss(&n.forward(&x).unwrap(), label)
        };
        let h = 1e-6;
        for i in 0..net.n_params() {
            let mut p = net.params().to_vec();
            p[i] += h;
            let up = loss_at(&p);
            p[i] -= 2.0 * h;
            let down = loss_at(&p);
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: analytic {} numeric {numeric}", grad[i]);
        }
    }

    #[test]
    fn parameter_count_matches_layout() {
        let arch = Architecture::reference(9);
        let net = Cnn::<f32>::init(arch.clone(), 0).unwrap();
        assert_eq!(net.n_params(), arch.n_params());
        assert_eq!(arch.hash(), Architecture::reference(9).hash());
        assert_ne!(arch.hash(), Architecture::reference(8).hash());
    }
}
