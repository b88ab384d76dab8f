//! Feedforward meta-learner over stacked predictions:
//! dense+ReLU → batch-norm → dropout → dense+ReLU → dense+ReLU → sigmoid.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::lr::softplus;
use crate::learners::mlp::to_dmatrix;
use crate::learners::optim::Objective;
use crate::matrix::Matrix;
use crate::{rng, stats};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendNetConfig {
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub bn_momentum: f64,
    /// Share of training rows held back to monitor validation loss.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for BlendNetConfig {
    fn default() -> Self {
        BlendNetConfig {
            layer_widths: vec![128, 64, 32],
            dropout_rate: 0.3,
            epochs: 50,
            batch_size: 512,
            learning_rate: 1e-3,
            bn_momentum: 0.9,
            validation_fraction: 0.1,
            seed: 42,
        }
    }
}

impl BlendNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() != 3 || self.layer_widths.contains(&0) {
            return Err(Error::Config(
                "blendnet.layer_widths must be three positive widths".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("blendnet.dropout_rate must lie in [0, 1)".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("blendnet.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("blendnet.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("blendnet.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("blendnet.bn_momentum must lie in [0, 1)".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "blendnet.validation_fraction must lie in [0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    d: usize,
    w: [usize; 3],
    w1: usize,
    b1: usize,
    gamma: usize,
    beta: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, widths: &[usize]) -> Self {
        let w = [widths[0], widths[1], widths[2]];
        let w1 = 0;
        let b1 = w1 + d * w[0];
        let gamma = b1 + w[0];
        let beta = gamma + w[0];
        let w2 = beta + w[0];
        let b2 = w2 + w[0] * w[1];
        let w3 = b2 + w[1];
        let b3 = w3 + w[1] * w[2];
        let w4 = b3 + w[2];
        let b4 = w4 + w[2];
        Layout {
            d,
            w,
            w1,
            b1,
            gamma,
            beta,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            len: b4 + 1,
        }
    }

    fn mat(&self, p: &[f64], off: usize, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(r, c, &p[off..off + r * c])
    }
}

/// Which statistics batch-norm normalises with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Batch,
    Running,
}

struct Cache {
    z1: DMatrix<f64>,
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    dropped: DMatrix<f64>,
    z2: DMatrix<f64>,
    a2: DMatrix<f64>,
    z3: DMatrix<f64>,
    a3: DMatrix<f64>,
    logits: DVector<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

fn add_bias(z: &mut DMatrix<f64>, b: &[f64]) {
    for (j, &v) in b.iter().enumerate() {
        z.column_mut(j).add_scalar_mut(v);
    }
}

fn relu(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.map(|v| v.max(0.0))
}

fn column_sums(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.sum()).collect()
}

fn forward(
    l: &Layout,
    p: &[f64],
    running: (&[f64], &[f64]),
    x: &DMatrix<f64>,
    mode: BnMode,
    mask: Option<&DMatrix<f64>>,
) -> Cache {
    let n = x.nrows();
    let [h1, h2, h3] = l.w;
    let mut z1 = x * l.mat(p, l.w1, l.d, h1);
    add_bias(&mut z1, &p[l.b1..l.b1 + h1]);
    let a1 = relu(&z1);
    let (batch_mean, batch_var) = {
        let mean: Vec<f64> = a1.column_iter().map(|c| c.sum() / n as f64).collect();
        let var: Vec<f64> = a1
            .column_iter()
            .zip(&mean)
            .map(|(c, m)| c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64)
            .collect();
        (mean, var)
    };
    let (mean, var) = match mode {
        BnMode::Batch => (batch_mean.as_slice(), batch_var.as_slice()),
        BnMode::Running => running,
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = a1;
    for j in 0..h1 {
        xhat.column_mut(j).apply(|v| *v = (*v - mean[j]) * inv_std[j]);
    }
    let mut dropped = xhat.clone();
    for j in 0..h1 {
        let (g, b) = (p[l.gamma + j], p[l.beta + j]);
        dropped.column_mut(j).apply(|v| *v = g * *v + b);
    }
    if let Some(m) = mask {
        dropped.component_mul_assign(m);
    }
    let mut z2 = &dropped * l.mat(p, l.w2, h1, h2);
    add_bias(&mut z2, &p[l.b2..l.b2 + h2]);
    let a2 = relu(&z2);
    let mut z3 = &a2 * l.mat(p, l.w3, h2, h3);
    add_bias(&mut z3, &p[l.b3..l.b3 + h3]);
    let a3 = relu(&z3);
    let mut logits = &a3 * DVector::from_column_slice(&p[l.w4..l.w4 + h3]);
    logits.add_scalar_mut(p[l.b4]);
    Cache {
        z1,
        xhat,
        inv_std,
        dropped,
        z2,
        a2,
        z3,
        a3,
        logits,
        batch_mean,
        batch_var,
    }
}

fn bce(logits: &DVector<f64>, y: &[f64]) -> f64 {
    logits.iter().zip(y).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / y.len() as f64
}

/// Mean cross-entropy and its gradient with respect to every parameter.
fn backward(
    l: &Layout,
    p: &[f64],
    x: &DMatrix<f64>,
    y: &[f64],
    c: &Cache,
    mode: BnMode,
    mask: Option<&DMatrix<f64>>,
    grad: &mut [f64],
) -> f64 {
    let n = x.nrows() as f64;
    let [h1, h2, h3] = l.w;
    let loss = bce(&c.logits, y);
    let dz4 = DVector::from_iterator(
        y.len(),
        c.logits.iter().zip(y).map(|(&z, &t)| (stats::sigmoid(z) - t) / n),
    );
    grad[l.w4..l.w4 + h3].copy_from_slice((c.a3.transpose() * &dz4).as_slice());
    grad[l.b4] = dz4.sum();

    let w4 = DVector::from_column_slice(&p[l.w4..l.w4 + h3]);
    let mut dz3 = &dz4 * w4.transpose();
    dz3.zip_apply(&c.z3, |g, z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    grad[l.w3..l.w3 + h2 * h3].copy_from_slice((c.a2.transpose() * &dz3).as_slice());
    grad[l.b3..l.b3 + h3].copy_from_slice(&column_sums(&dz3));

    let mut dz2 = &dz3 * l.mat(p, l.w3, h2, h3).transpose();
    dz2.zip_apply(&c.z2, |g, z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    grad[l.w2..l.w2 + h1 * h2].copy_from_slice((c.dropped.transpose() * &dz2).as_slice());
    grad[l.b2..l.b2 + h2].copy_from_slice(&column_sums(&dz2));

    let mut dbn = &dz2 * l.mat(p, l.w2, h1, h2).transpose();
    if let Some(m) = mask {
        dbn.component_mul_assign(m);
    }
    let mut dxhat = dbn.clone();
    for j in 0..h1 {
        let col = dbn.column(j);
        grad[l.gamma + j] = col.dot(&c.xhat.column(j));
        grad[l.beta + j] = col.sum();
        dxhat.column_mut(j).scale_mut(p[l.gamma + j]);
    }
    let mut da1 = dxhat;
    for j in 0..h1 {
        let s = c.inv_std[j];
        match mode {
            BnMode::Running => da1.column_mut(j).scale_mut(s),
            BnMode::Batch => {
                let sum_d = da1.column(j).sum();
                let sum_dx = da1.column(j).dot(&c.xhat.column(j));
                let xh = c.xhat.column(j).clone_owned();
                da1.column_mut(j)
                    .zip_apply(&xh, |g, xv| *g = s * (*g - sum_d / n - xv * sum_dx / n));
            }
        }
    }
    da1.zip_apply(&c.z1, |g, z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    grad[l.w1..l.w1 + l.d * h1].copy_from_slice((x.transpose() * &da1).as_slice());
    grad[l.b1..l.b1 + h1].copy_from_slice(&column_sums(&da1));
    loss
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Inference-mode loss over the training rows after the epoch.
    pub loss: f64,
    /// Mean of the minibatch losses seen during the epoch.
    pub batch_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendNet {
    pub config: BlendNetConfig,
    pub inputs: usize,
    pub params: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub trace: Vec<EpochLoss>,
}

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Artifact {
    format_version: u32,
    model: BlendNet,
}

/// Untrained network with fan-in scaled uniform weights.
pub fn build(d: usize, config: &BlendNetConfig) -> Result<BlendNet> {
    config.validate()?;
    if d == 0 {
        return Err(Error::invalid("blendnet needs at least one input"));
    }
    let l = Layout::new(d, &config.layer_widths);
    let mut r = rng::stream(config.seed, 0xb1e);
    let mut p = vec![0.0; l.len];
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize, gain: f64, r: &mut rng::Rng| {
        let a = (gain / fan_in as f64).sqrt();
        for v in &mut p[range] {
            *v = r.random_range(-a..a);
        }
    };
    let [h1, h2, h3] = l.w;
    fill(l.w1..l.b1, d, 6.0, &mut r);
    fill(l.w2..l.b2, h1, 6.0, &mut r);
    fill(l.w3..l.b3, h2, 6.0, &mut r);
    fill(l.w4..l.b4, h3, 3.0, &mut r);
    p[l.gamma..l.beta].fill(1.0);
    Ok(BlendNet {
        config: config.clone(),
        inputs: d,
        params: p,
        running_mean: vec![0.0; h1],
        running_var: vec![1.0; h1],
        trace: Vec::new(),
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            p[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn rows_of(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

impl BlendNet {
    fn layout(&self) -> Layout {
        Layout::new(self.inputs, &self.config.layer_widths)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Shape of the first dense weight matrix.
    pub fn first_layer_shape(&self) -> (usize, usize) {
        (self.inputs, self.config.layer_widths[0])
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Trains on `(x, y)`; a seeded stratified slice is held back for validation loss.
    pub fn train(&mut self, x: &Matrix, y: &[u8]) -> Result<()> {
        self.check_input(x)?;
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                found: y.len(),
            });
        }
        if x.rows() == 0 {
            return Err(Error::Empty("blendnet training set".into()));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("meta-features".into()));
        }
        let cfg = self.config.clone();
        cfg.validate()?;
        let (train_idx, val_idx) = self.validation_split(y)?;
        let xd = to_dmatrix(x);
        let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let l = self.layout();
        let h1 = l.w[0];
        let mut adam = Adam::new(self.params.len(), cfg.learning_rate);
        let mut grad = vec![0.0; self.params.len()];
        let batch = cfg.batch_size.min(train_idx.len());
        let keep = 1.0 - cfg.dropout_rate;
        let x_val = rows_of(&xd, &val_idx);
        let y_val: Vec<f64> = val_idx.iter().map(|&i| yf[i]).collect();
        let x_train = rows_of(&xd, &train_idx);
        let y_train: Vec<f64> = train_idx.iter().map(|&i| yf[i]).collect();
        self.trace.clear();
        for epoch in 0..cfg.epochs {
            let mut r = rng::stream(cfg.seed, epoch as u64 + 1);
            let mut order = train_idx.clone();
            order.shuffle(&mut r);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let xb = rows_of(&xd, chunk);
                let yb: Vec<f64> = chunk.iter().map(|&i| yf[i]).collect();
                let mask = (cfg.dropout_rate > 0.0).then(|| {
                    DMatrix::from_fn(
                        chunk.len(),
                        h1,
                        |_, _| {
                            if r.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        },
                    )
                });
                let cache = forward(
                    &l,
                    &self.params,
                    (&self.running_mean, &self.running_var),
                    &xb,
                    BnMode::Batch,
                    mask.as_ref(),
                );
                let loss = backward(
                    &l,
                    &self.params,
                    &xb,
                    &yb,
                    &cache,
                    BnMode::Batch,
                    mask.as_ref(),
                    &mut grad,
                );
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!("blendnet loss at epoch {}", epoch + 1)));
                }
                total += loss * chunk.len() as f64;
                let mom = cfg.bn_momentum;
                let nb = chunk.len() as f64;
                let unbias = if nb > 1.0 { nb / (nb - 1.0) } else { 1.0 };
                for j in 0..h1 {
                    self.running_mean[j] = mom * self.running_mean[j] + (1.0 - mom) * cache.batch_mean[j];
                    self.running_var[j] = mom * self.running_var[j] + (1.0 - mom) * cache.batch_var[j] * unbias;
                }
                adam.step(&mut self.params, &grad);
            }
            let eval = |x: &DMatrix<f64>, y: &[f64]| {
                let c = forward(
                    &l,
                    &self.params,
                    (&self.running_mean, &self.running_var),
                    x,
                    BnMode::Running,
                    None,
                );
                bce(&c.logits, y)
            };
            let val_loss = (!val_idx.is_empty()).then(|| eval(&x_val, &y_val));
            self.trace.push(EpochLoss {
                epoch: epoch + 1,
                loss: eval(&x_train, &y_train),
                batch_loss: total / train_idx.len() as f64,
                val_loss,
            });
        }
        Ok(())
    }

    fn validation_split(&self, y: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
        let n = y.len();
        let n_val = (self.config.validation_fraction * n as f64).floor() as usize;
        let classes = y.iter().filter(|&&v| v == 1).count();
        if n_val < 2 || classes == 0 || classes == n {
            return Ok(((0..n).collect(), Vec::new()));
        }
        let split = crate::dataset::stratified_split(y, self.config.validation_fraction, self.config.seed)?;
        Ok((split.train_indices, split.test_indices))
    }

    /// P(class = 1) in inference mode, kept strictly inside (0, 1).
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let c = forward(
            &self.layout(),
            &self.params,
            (&self.running_mean, &self.running_var),
            &to_dmatrix(x),
            BnMode::Running,
            None,
        );
        Ok(c.logits
            .iter()
            .map(|&z| stats::sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
            .collect())
    }

    pub fn classify(&self, x: &Matrix) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| u8::from(p >= 0.5)).collect())
    }

    /// `epoch,loss` rows.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for e in &self.trace {
            s.push_str(&format!("{},{}\n", e.epoch, e.loss));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Artifact {
            format_version: ARTIFACT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Artifact = serde_json::from_str(text)?;
        if a.format_version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!(
                "blendnet artifact version {} (expected {ARTIFACT_VERSION})",
                a.format_version
            )));
        }
        Ok(a.model)
    }
}

/// Mean cross-entropy of a fixed network as a function of its parameters.
pub struct BlendObjective<'a> {
    net: &'a BlendNet,
    x: DMatrix<f64>,
    y: Vec<f64>,
    mode: BnMode,
}

impl<'a> BlendObjective<'a> {
    pub fn new(net: &'a BlendNet, x: &Matrix, y: &[u8], mode: BnMode) -> Self {
        BlendObjective {
            net,
            x: to_dmatrix(x),
            y: y.iter().map(|&v| f64::from(v)).collect(),
            mode,
        }
    }
}

impl Objective for BlendObjective<'_> {
    fn eval(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.net.layout();
        let running = (self.net.running_mean.as_slice(), self.net.running_var.as_slice());
        let c = forward(&l, p, running, &self.x, self.mode, None);
        backward(&l, p, &self.x, &self.y, &c, self.mode, None, grad)
    }
}
