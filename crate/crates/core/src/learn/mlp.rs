use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{gemm, gemm_acc};
use super::Matrix;
use crate::math;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MlpConfig {
    /// Width of both hidden layers.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1"));
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite() && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam settings out of range"));
        }
        Ok(())
    }
}

/// `d → h → h → 1` perceptron with ReLU hidden layers and a sigmoid output.
///
/// Parameters are one flat array laid out as `w1 (d×h), b1, w2 (h×h), b2,
/// w3 (h), b3`, weights row-major with the input dimension first.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
    /// Full passes over the training rows.
    #[cfg_attr(feature = "serde", serde(default))]
    pub epochs_trained: usize,
    /// Optimizer steps taken, one per mini-batch.
    #[cfg_attr(feature = "serde", serde(default))]
    pub steps: usize,
    /// Mean training loss of each epoch.
    #[cfg_attr(feature = "serde", serde(default))]
    pub epoch_loss: Vec<f64>,
}

struct Layout {
    w1: core::ops::Range<usize>,
    b1: core::ops::Range<usize>,
    w2: core::ops::Range<usize>,
    b2: core::ops::Range<usize>,
    w3: core::ops::Range<usize>,
    b3: usize,
    len: usize,
}

fn layout(d: usize, h: usize) -> Layout {
    let w1 = 0..d * h;
    let b1 = w1.end..w1.end + h;
    let w2 = b1.end..b1.end + h * h;
    let b2 = w2.end..w2.end + h;
    let w3 = b2.end..b2.end + h;
    let b3 = w3.end;
    Layout {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        len: b3 + 1,
    }
}

/// Activations of one forward pass over `b` rows.
struct Forward {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    logit: Vec<f64>,
}

impl Forward {
    fn new(rows: usize, h: usize) -> Self {
        Self {
            z1: alloc::vec![0.0; rows * h],
            a1: alloc::vec![0.0; rows * h],
            z2: alloc::vec![0.0; rows * h],
            a2: alloc::vec![0.0; rows * h],
            logit: alloc::vec![0.0; rows],
        }
    }
}

fn relu_into(z: &[f64], a: &mut [f64]) {
    for (o, &v) in a.iter_mut().zip(z) {
        *o = if v > 0.0 { v } else { 0.0 };
    }
}

fn add_bias(z: &mut [f64], bias: &[f64]) {
    for row in z.chunks_exact_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

impl MlpModel {
    /// All-zero parameters, mostly useful as a reference point.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            params: alloc::vec![0.0; layout(input_dim, hidden).len],
            epochs_trained: 0,
            steps: 0,
            epoch_loss: Vec::new(),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights and biases per layer.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input_dim, hidden);
        let l = layout(input_dim, hidden);
        let mut fill = |range: core::ops::Range<usize>, fan_in: usize, params: &mut [f64]| {
            let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
            for v in &mut params[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(l.w1, input_dim, &mut m.params);
        fill(l.b1, input_dim, &mut m.params);
        fill(l.w2, hidden, &mut m.params);
        fill(l.b2, hidden, &mut m.params);
        fill(l.w3, hidden, &mut m.params);
        fill(l.b3..l.b3 + 1, hidden, &mut m.params);
        m
    }

    pub fn check(&self) -> Result<()> {
        let expected = layout(self.input_dim, self.hidden).len;
        if self.params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.params.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], rows: usize, out: &mut Forward) {
        let (d, h) = (self.input_dim, self.hidden);
        let l = layout(d, h);
        let p = &self.params;
        let (z1, a1, z2, a2) = (
            &mut out.z1[..rows * h],
            &mut out.a1[..rows * h],
            &mut out.z2[..rows * h],
            &mut out.a2[..rows * h],
        );
        gemm(rows, d, h, x, &p[l.w1], z1);
        add_bias(z1, &p[l.b1]);
        relu_into(z1, a1);
        gemm(rows, h, h, a1, &p[l.w2], z2);
        add_bias(z2, &p[l.b2.clone()]);
        relu_into(z2, a2);
        let logit = &mut out.logit[..rows];
        gemm(rows, h, 1, a2, &p[l.w3], logit);
        logit.iter_mut().for_each(|v| *v += p[l.b3]);
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check()?;
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.cols(),
            });
        }
        const CHUNK: usize = 256;
        let mut buf = Forward::new(CHUNK, self.hidden);
        let mut out = Vec::with_capacity(x.rows());
        let mut start = 0;
        while start < x.rows() {
            let rows = CHUNK.min(x.rows() - start);
            let slice = &x.as_slice()[start * self.input_dim..(start + rows) * self.input_dim];
            self.forward(slice, rows, &mut buf);
            out.extend(buf.logit[..rows].iter().map(|&z| math::sigmoid(z)));
            start += rows;
        }
        Ok(out)
    }

    /// Mean binary cross-entropy of one batch and its gradient (overwrites
    /// `grad`). `fwd` must hold the forward pass of the same batch.
    fn backward(&self, x: &[f64], y: &[f64], fwd: &Forward, grad: &mut [f64], scratch: &mut Backward) -> f64 {
        let rows = y.len();
        let (d, h) = (self.input_dim, self.hidden);
        let l = layout(d, h);
        let p = &self.params;
        let bn = rows as f64;

        let mut loss = 0.0;
        let dz3 = &mut scratch.dz3[..rows];
        for ((g, &z), &t) in dz3.iter_mut().zip(&fwd.logit[..rows]).zip(y) {
            loss += math::softplus(z) - t * z;
            *g = (math::sigmoid(z) - t) / bn;
        }

        let a1 = &fwd.a1[..rows * h];
        let a2 = &fwd.a2[..rows * h];
        // output layer
        gemm_acc(h, rows, 1, a2, true, dz3, false, 0.0, &mut grad[l.w3.clone()]);
        grad[l.b3] = dz3.iter().sum();
        let dz2 = &mut scratch.dz2[..rows * h];
        let w3 = &p[l.w3];
        for (r, &g) in dz2.chunks_exact_mut(h).zip(dz3.iter()) {
            for (o, &w) in r.iter_mut().zip(w3) {
                *o = g * w;
            }
        }
        for (o, &z) in dz2.iter_mut().zip(&fwd.z2[..rows * h]) {
            if z <= 0.0 {
                *o = 0.0;
            }
        }
        // second hidden layer
        gemm_acc(h, rows, h, a1, true, dz2, false, 0.0, &mut grad[l.w2.clone()]);
        column_sums(dz2, h, &mut grad[l.b2.clone()]);
        let dz1 = &mut scratch.dz1[..rows * h];
        gemm_acc(rows, h, h, dz2, false, &p[l.w2.clone()], true, 0.0, dz1);
        for (o, &z) in dz1.iter_mut().zip(&fwd.z1[..rows * h]) {
            if z <= 0.0 {
                *o = 0.0;
            }
        }
        // first hidden layer
        gemm_acc(d, rows, h, x, true, dz1, false, 0.0, &mut grad[l.w1.clone()]);
        column_sums(dz1, h, &mut grad[l.b1.clone()]);
        loss / bn
    }
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for r in m.chunks_exact(cols) {
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
    }
}

struct Backward {
    dz3: Vec<f64>,
    dz2: Vec<f64>,
    dz1: Vec<f64>,
}

/// Trains for exactly `config.epochs` epochs of seeded shuffled mini-batches;
/// the final short batch of an epoch is kept. No early stopping.
pub fn fit_mlp(x: &Matrix, y: &[bool], config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    config.validate()?;
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    x.check_finite()?;

    let (n, d, h) = (x.rows(), x.cols(), config.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::init(d, h, &mut rng);
    let np = model.params.len();
    let mut grad = alloc::vec![0.0; np];
    let mut m1 = alloc::vec![0.0; np];
    let mut m2 = alloc::vec![0.0; np];
    let bs = config.batch_size.min(n);
    let mut fwd = Forward::new(bs, h);
    let mut back = Backward {
        dz3: alloc::vec![0.0; bs],
        dz2: alloc::vec![0.0; bs * h],
        dz1: alloc::vec![0.0; bs * h],
    };
    let mut xb = alloc::vec![0.0; bs * d];
    let mut yb = alloc::vec![0.0; bs];
    let mut order: Vec<usize> = (0..n).collect();
    let (mut pow1, mut pow2) = (1.0, 1.0);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(bs) {
            let rows = batch.len();
            for (k, &i) in batch.iter().enumerate() {
                xb[k * d..(k + 1) * d].copy_from_slice(x.row(i));
                yb[k] = if y[i] { 1.0 } else { 0.0 };
            }
            model.forward(&xb[..rows * d], rows, &mut fwd);
            let loss = model.backward(&xb[..rows * d], &yb[..rows], &fwd, &mut grad, &mut back);
            epoch_loss += loss * rows as f64;

            model.steps += 1;
            pow1 *= config.beta1;
            pow2 *= config.beta2;
            let (c1, c2) = (1.0 - pow1, 1.0 - pow2);
            for (((p, g), m), v) in model.params.iter_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
                *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                *p -= config.lr * (*m / c1) / (math::sqrt(*v / c2) + config.eps);
            }
        }
        model.epochs_trained += 1;
        model.epoch_loss.push(epoch_loss / n as f64);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_loss(m: &MlpModel, x: &Matrix, y: &[f64]) -> f64 {
        let p = m.predict_proba(x).unwrap();
        p.iter()
            .zip(y)
            .map(|(&p, &t)| -(t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p)))
            .sum::<f64>()
            / y.len() as f64
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = MlpModel::zeros(3, 4);
        let p = m.predict_proba(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(p, alloc::vec![0.5, 0.5]);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = MlpModel::init(3, 5, &mut rng);
        let rows: Vec<[f64; 3]> = (0..6)
            .map(|i| {
                let t = i as f64;
                [libm::sin(t), libm::cos(2.0 * t), 0.3 * t - 1.0]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let mut fwd = Forward::new(6, 5);
        let mut back = Backward {
            dz3: alloc::vec![0.0; 6],
            dz2: alloc::vec![0.0; 30],
            dz1: alloc::vec![0.0; 30],
        };
        let mut grad = alloc::vec![0.0; m.params.len()];
        m.forward(x.as_slice(), 6, &mut fwd);
        let loss = m.backward(x.as_slice(), &y, &fwd, &mut grad, &mut back);
        assert!((loss - batch_loss(&m, &x, &y)).abs() < 1e-12);
        let h = 1e-6;
        for (k, &g) in grad.iter().enumerate() {
            let orig = m.params[k];
            m.params[k] = orig + h;
            let up = batch_loss(&m, &x, &y);
            m.params[k] = orig - h;
            let dn = batch_loss(&m, &x, &y);
            m.params[k] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7, "param {k}: {fd} vs {g}");
        }
    }

    #[test]
    fn epochs_and_steps_are_exact() {
        let rows: Vec<[f64; 2]> = (0..70).map(|i| [i as f64 / 70.0, 1.0 - i as f64 / 35.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<bool> = (0..70).map(|i| i % 3 == 0).collect();
        let cfg = MlpConfig {
            hidden: 8,
            ..MlpConfig::default()
        };
        let m = fit_mlp(&x, &y, &cfg, 4).unwrap();
        assert_eq!(m.epochs_trained, 20);
        // 70 rows in batches of 32: 32, 32, 6
        assert_eq!(m.steps, 20 * 3);
        assert_eq!(m.epoch_loss.len(), 20);
        assert_eq!(m, fit_mlp(&x, &y, &cfg, 4).unwrap());
        assert_ne!(m.params, fit_mlp(&x, &y, &cfg, 5).unwrap().params);
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = MlpConfig {
            epochs: 0,
            ..MlpConfig::default()
        };
        let x = Matrix::zeros(2, 1);
        assert!(matches!(fit_mlp(&x, &[true, false], &cfg, 0), Err(Error::InvalidConfig(_))));
    }
}
