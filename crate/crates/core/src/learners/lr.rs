//! L2-penalised logistic regression.

use serde::{Deserialize, Serialize};

use super::optim::{self, LbfgsSettings, Objective};
use super::Standardizer;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::stats;

/// Σ_i [log(1 + e^{z_i}) − y_i·z_i] + ‖w‖²/(2C) with z = X·w + b; the
/// intercept is unpenalised. Parameters are `[w…, b]`.
pub struct LogisticObjective<'a> {
    pub x: &'a Matrix,
    pub y: &'a [u8],
    pub c: f64,
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Objective for LogisticObjective<'_> {
    fn eval(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.x.cols();
        let (w, b) = (&p[..d], p[d]);
        grad.fill(0.0);
        let mut loss = 0.0;
        for (row, &y) in self.x.iter_rows().zip(self.y) {
            let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            loss += softplus(z) - f64::from(y) * z;
            let r = stats::sigmoid(z) - f64::from(y);
            for (g, a) in grad[..d].iter_mut().zip(row) {
                *g += r * a;
            }
            grad[d] += r;
        }
        for (g, wi) in grad[..d].iter_mut().zip(w) {
            *g += wi / self.c;
        }
        loss + w.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub scaler: Standardizer,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub train_loss: Vec<f64>,
}

pub fn fit(x: &Matrix, y: &[u8], c: f64) -> Result<LogisticModel> {
    let scaler = Standardizer::fit(x);
    let xs = scaler.transform(x);
    let obj = LogisticObjective { x: &xs, y, c };
    let m = optim::minimize(&obj, vec![0.0; x.cols() + 1], LbfgsSettings::default())?;
    let d = x.cols();
    Ok(LogisticModel {
        scaler,
        weights: m.params[..d].to_vec(),
        intercept: m.params[d],
        train_loss: m.trace,
    })
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows()
            .map(|row| {
                let z = self.intercept
                    + self
                        .scaler
                        .apply(row)
                        .zip(&self.weights)
                        .map(|(a, w)| a * w)
                        .sum::<f64>();
                stats::sigmoid(z)
            })
            .collect()
    }
}
