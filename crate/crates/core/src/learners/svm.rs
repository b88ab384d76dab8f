//! Linear support vector machine (squared hinge, L2 penalty) with a logistic
//! link on the margin fitted on a held-out calibration fold.

use serde::{Deserialize, Serialize};

use super::optim::{self, LbfgsSettings, Objective};
use super::Standardizer;
use crate::dataset;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::stats;

/// ½‖w‖² + C·Σ_i max(0, 1 − t_i·(w·x_i + b))², t_i = ±1. Parameters are
/// `[w…, b]`.
pub struct SquaredHinge<'a> {
    pub x: &'a Matrix,
    pub y: &'a [u8],
    pub c: f64,
}

impl Objective for SquaredHinge<'_> {
    fn eval(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.x.cols();
        let (w, b) = (&p[..d], p[d]);
        grad[..d].copy_from_slice(w);
        grad[d] = 0.0;
        let mut loss = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        for (row, &y) in self.x.iter_rows().zip(self.y) {
            let t = if y == 1 { 1.0 } else { -1.0 };
            let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            let slack = 1.0 - t * z;
            if slack > 0.0 {
                loss += self.c * slack * slack;
                let k = -2.0 * self.c * slack * t;
                for (g, a) in grad[..d].iter_mut().zip(row) {
                    *g += k * a;
                }
                grad[d] += k;
            }
        }
        loss
    }
}

/// Cross-entropy of σ(a·f + b) against smoothed targets.
struct Platt<'a> {
    margins: &'a [f64],
    targets: Vec<f64>,
}

impl Objective for Platt<'_> {
    fn eval(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mut loss = 0.0;
        for (&f, &t) in self.margins.iter().zip(&self.targets) {
            let z = p[0] * f + p[1];
            loss += super::lr::softplus(z) - t * z;
            let r = stats::sigmoid(z) - t;
            grad[0] += r * f;
            grad[1] += r;
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub scaler: Standardizer,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub train_loss: Vec<f64>,
}

pub const CALIBRATION_FRACTION: f64 = 0.2;

pub fn fit(x: &Matrix, y: &[u8], c: f64, seed: u64) -> Result<SvmModel> {
    let split = dataset::stratified_split(y, CALIBRATION_FRACTION, seed)?;
    let xt = x.select_rows(&split.train_indices);
    let yt: Vec<u8> = split.train_indices.iter().map(|&i| y[i]).collect();
    let scaler = Standardizer::fit(&xt);
    let xs = scaler.transform(&xt);
    let d = x.cols();
    let m = optim::minimize(
        &SquaredHinge { x: &xs, y: &yt, c },
        vec![0.0; d + 1],
        LbfgsSettings::default(),
    )?;
    let mut model = SvmModel {
        scaler,
        weights: m.params[..d].to_vec(),
        intercept: m.params[d],
        platt_a: 1.0,
        platt_b: 0.0,
        train_loss: m.trace,
    };
    let xc = x.select_rows(&split.test_indices);
    let margins = model.decision_function(&xc);
    let yc: Vec<u8> = split.test_indices.iter().map(|&i| y[i]).collect();
    let pos = yc.iter().filter(|&&v| v == 1).count() as f64;
    let neg = yc.len() as f64 - pos;
    let (hi, lo) = ((pos + 1.0) / (pos + 2.0), 1.0 / (neg + 2.0));
    let targets = yc.iter().map(|&v| if v == 1 { hi } else { lo }).collect();
    let prior = ((pos + 1.0) / (neg + 1.0)).ln();
    let fit = optim::minimize(
        &Platt {
            margins: &margins,
            targets,
        },
        vec![0.0, prior],
        LbfgsSettings::default(),
    )?;
    model.platt_a = fit.params[0];
    model.platt_b = fit.params[1];
    Ok(model)
}

impl SvmModel {
    pub fn decision_function(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows()
            .map(|row| {
                self.intercept
                    + self
                        .scaler
                        .apply(row)
                        .zip(&self.weights)
                        .map(|(a, w)| a * w)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        self.decision_function(x)
            .into_iter()
            .map(|f| stats::sigmoid(self.platt_a * f + self.platt_b))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn squared_hinge_gradient() {
        let mut r = rng::seeded(2);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let y: Vec<u8> = (0..25).map(|i| u8::from(i % 2 == 0)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let obj = SquaredHinge { x: &x, y: &y, c: 2.0 };
        let p = vec![0.3, -0.2, 0.1, 0.05];
        let mut g = vec![0.0; 4];
        obj.eval(&p, &mut g);
        assert!(optim::max_relative_error(&g, &optim::numeric_gradient(&obj, &p, 1e-6)) < 1e-5);
    }

    #[test]
    fn separable_margin_orders_classes() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<u8> = (0..100).map(|i| u8::from(i >= 50)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit(&x, &y, 1.0, 4).unwrap();
        let p = m.predict_proba(&x);
        assert!(m.platt_a > 0.0);
        assert!(p[..45].iter().all(|&v| v < 0.5) && p[55..].iter().all(|&v| v > 0.5));
    }
}
