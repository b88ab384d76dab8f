//! One-hidden-layer perceptron: ReLU hidden units, logistic output, mean
//! cross-entropy with an L2 penalty of `alpha`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::lr::softplus;
use super::optim::{self, EarlyStopping, LbfgsSettings, Objective};
use super::Standardizer;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::{dataset, rng, stats};

pub const MAX_ITER: u64 = 200;

/// Optimiser budget and held-out early stopping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Training {
    pub max_iter: u64,
    /// Share of rows held out to watch the cross-entropy; 0 disables
    /// early stopping.
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for Training {
    fn default() -> Self {
        Training {
            max_iter: MAX_ITER,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

pub(crate) fn to_dmatrix(x: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.as_slice())
}

/// Mean cross-entropy + α/(2N)·(‖W₁‖² + ‖w₂‖²). Parameters are laid out as
/// W₁ (d×h, column-major), b₁ (h), w₂ (h), b₂.
pub struct MlpObjective {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub hidden: usize,
    pub alpha: f64,
}

impl MlpObjective {
    pub fn new(x: &Matrix, y: &[u8], hidden: usize, alpha: f64) -> Self {
        MlpObjective {
            x: to_dmatrix(x),
            y: DVector::from_iterator(y.len(), y.iter().map(|&v| f64::from(v))),
            hidden,
            alpha,
        }
    }

    pub fn n_params(&self) -> usize {
        n_params(self.x.ncols(), self.hidden)
    }
}

fn n_params(d: usize, h: usize) -> usize {
    d * h + 2 * h + 1
}

struct Forward {
    z1: DMatrix<f64>,
    a1: DMatrix<f64>,
    z2: DVector<f64>,
}

fn forward(x: &DMatrix<f64>, p: &[f64], h: usize) -> Forward {
    let d = x.ncols();
    let dh = d * h;
    let w1 = DMatrix::from_column_slice(d, h, &p[..dh]);
    let w2 = DVector::from_column_slice(&p[dh + h..dh + 2 * h]);
    let mut z1 = x * w1;
    for (j, &b) in p[dh..dh + h].iter().enumerate() {
        z1.column_mut(j).add_scalar_mut(b);
    }
    let a1 = z1.map(|v| v.max(0.0));
    let mut z2 = &a1 * w2;
    z2.add_scalar_mut(p[dh + 2 * h]);
    Forward { z1, a1, z2 }
}

impl Objective for MlpObjective {
    fn eval(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let (n, d, h) = (self.x.nrows(), self.x.ncols(), self.hidden);
        let dh = d * h;
        let nf = n as f64;
        let f = forward(&self.x, p, h);
        let data: f64 =
            f.z2.iter()
                .zip(self.y.iter())
                .map(|(&z, &y)| softplus(z) - y * z)
                .sum::<f64>()
                / nf;
        let (w1, rest) = p.split_at(dh);
        let w2 = &rest[h..2 * h];
        let penalty =
            self.alpha / (2.0 * nf) * (w1.iter().map(|v| v * v).sum::<f64>() + w2.iter().map(|v| v * v).sum::<f64>());

        let dz2 = DVector::from_iterator(
            n,
            f.z2.iter()
                .zip(self.y.iter())
                .map(|(&z, &y)| (stats::sigmoid(z) - y) / nf),
        );
        let gw2 = f.a1.tr_mul(&dz2);
        let w2v = DVector::from_column_slice(w2);
        let mut dz1 = &dz2 * w2v.transpose();
        dz1.zip_apply(&f.z1, |g, z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let gw1 = self.x.tr_mul(&dz1);
        let k = self.alpha / nf;
        for (i, g) in gw1.iter().enumerate() {
            grad[i] = g + k * w1[i];
        }
        for j in 0..h {
            grad[dh + j] = dz1.column(j).sum();
            grad[dh + h + j] = gw2[j] + k * w2[j];
        }
        grad[dh + 2 * h] = dz2.sum();
        data + penalty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub scaler: Standardizer,
    pub inputs: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
    pub train_loss: Vec<f64>,
}

fn positive_rate(y: &[u8]) -> f64 {
    y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64
}

pub fn init_params(d: usize, h: usize, base_rate: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let l1 = (6.0 / (d + h) as f64).sqrt();
    let l2 = (6.0 / (h + 1) as f64).sqrt();
    let mut p = Vec::with_capacity(n_params(d, h));
    p.extend((0..d * h + h).map(|_| r.random_range(-l1..l1)));
    p.extend((0..h).map(|_| r.random_range(-l2..l2)));
    let rate = base_rate.clamp(1e-6, 1.0 - 1e-6);
    p.push((rate / (1.0 - rate)).ln());
    p
}

/// Stratified held-out rows, or `None` when either side would lack a class.
fn holdout(y: &[u8], fraction: f64, seed: u64) -> Option<(Vec<usize>, Vec<usize>)> {
    if fraction <= 0.0 {
        return None;
    }
    let split = dataset::stratified_split(y, fraction, rng::derive_seed(seed, "mlp-holdout")).ok()?;
    let both = |idx: &[usize]| idx.iter().any(|&i| y[i] == 0) && idx.iter().any(|&i| y[i] == 1);
    (both(&split.train_indices) && both(&split.test_indices)).then_some((split.train_indices, split.test_indices))
}

pub fn fit(x: &Matrix, y: &[u8], hidden: usize, alpha: f64, seed: u64, training: Training) -> Result<MlpModel> {
    let scaler = Standardizer::fit(x);
    let xs = scaler.transform(x);
    let settings = LbfgsSettings {
        max_iter: training.max_iter,
        grad_tol: 1e-5,
        cost_tol: 1e-8,
        ..LbfgsSettings::default()
    };
    let m = match holdout(y, training.validation_fraction, seed) {
        Some((fit_rows, val_rows)) => {
            let pick = |rows: &[usize]| -> Vec<u8> { rows.iter().map(|&i| y[i]).collect() };
            let yf = pick(&fit_rows);
            let obj = MlpObjective::new(&xs.select_rows(&fit_rows), &yf, hidden, alpha);
            let validation = MlpObjective::new(&xs.select_rows(&val_rows), &pick(&val_rows), hidden, 0.0);
            let init = init_params(x.cols(), hidden, positive_rate(&yf), seed);
            let early = EarlyStopping {
                validation,
                patience: training.patience,
            };
            optim::minimize_with(&obj, init, settings, Some(early))?
        }
        None => {
            let obj = MlpObjective::new(&xs, y, hidden, alpha);
            let init = init_params(x.cols(), hidden, positive_rate(y), seed);
            optim::minimize(&obj, init, settings)?
        }
    };
    Ok(MlpModel {
        scaler,
        inputs: x.cols(),
        hidden,
        params: m.params,
        train_loss: m.trace,
    })
}

impl MlpModel {
    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        let xs = to_dmatrix(&self.scaler.transform(x));
        forward(&xs, &self.params, self.hidden)
            .z2
            .iter()
            .map(|&z| stats::sigmoid(z))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::seeded(17);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i % 3 != 0)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let obj = MlpObjective::new(&x, &y, 4, 0.3);
        let p = init_params(3, 4, 0.6, 8);
        let mut g = vec![0.0; obj.n_params()];
        obj.eval(&p, &mut g);
        let num = optim::numeric_gradient(&obj, &p, 1e-6);
        assert!(optim::max_relative_error(&g, &num) < 1e-4);
    }

    #[test]
    fn learns_xor() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                vec![
                    ((i * 13) % 20) as f64 / 10.0 - 0.95,
                    ((i * 7) % 20) as f64 / 10.0 - 0.95,
                ]
            })
            .collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from((r[0] > 0.0) != (r[1] > 0.0))).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let full = Training {
            validation_fraction: 0.0,
            ..Training::default()
        };
        let m = fit(&x, &y, 16, 1e-4, 1, full).unwrap();
        let p = m.predict_proba(&x);
        let acc = p.iter().zip(&y).filter(|(p, y)| u8::from(**p >= 0.5) == **y).count();
        assert!(acc >= 190, "{acc}");
        assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn early_stopping_ends_at_best_held_out_loss() {
        let mut r = rng::seeded(5);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|v| u8::from(v[0] + 0.3 * r.random::<f64>() > 0.6))
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let t = Training {
            patience: 3,
            ..Training::default()
        };
        let m = fit(&x, &y, 64, 1e-5, 2, t).unwrap();
        assert!(m.train_loss.len() < MAX_ITER as usize);
        assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(m, fit(&x, &y, 64, 1e-5, 2, t).unwrap());
        let (fit_rows, val_rows) = holdout(&y, 0.1, 2).unwrap();
        assert_eq!(val_rows.len(), 30);
        assert_eq!(fit_rows.len() + val_rows.len(), 300);
    }
}
