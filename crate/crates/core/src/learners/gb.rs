//! Gradient boosting on the logistic loss with second-order (Newton) leaf
//! values over histogram-binned features.

use serde::{Deserialize, Serialize};

use super::tree::{stable_partition, Node, Tree};
use crate::matrix::Matrix;
use crate::{par, stats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub max_bins: usize,
    pub min_child_weight: f64,
}

impl GbParams {
    pub fn new(n_estimators: usize, max_depth: usize, learning_rate: f64) -> Self {
        GbParams {
            n_estimators,
            max_depth,
            learning_rate,
            lambda: 1.0,
            max_bins: 64,
            min_child_weight: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    /// Initial log-odds.
    pub base_score: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree>,
    pub lambda: f64,
    /// Mean training log loss before boosting and after every round.
    pub train_loss: Vec<f64>,
}

/// ½·[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)].
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

struct Binned {
    n: usize,
    edges: Vec<Vec<f64>>,
    /// Feature-major bin codes.
    codes: Vec<u8>,
}

fn bin_edges(column: &[f64], max_bins: usize) -> Vec<f64> {
    let s = stats::sorted(column);
    let mut uniq = s.clone();
    uniq.dedup();
    if uniq.len() <= max_bins {
        uniq.pop();
        return uniq;
    }
    let top = s[s.len() - 1];
    let mut edges: Vec<f64> = (1..max_bins)
        .map(|k| stats::quantile_sorted(&s, k as f64 / max_bins as f64))
        .filter(|&e| e < top)
        .collect();
    edges.dedup();
    edges
}

impl Binned {
    fn new(x: &Matrix, max_bins: usize) -> Binned {
        let n = x.rows();
        let edges: Vec<Vec<f64>> = par::map_range(x.cols(), |j| bin_edges(&x.column(j), max_bins));
        let mut codes = vec![0u8; n * x.cols()];
        for (j, e) in edges.iter().enumerate() {
            for i in 0..n {
                let v = x.get(i, j);
                codes[j * n + i] = e.partition_point(|&t| t < v) as u8;
            }
        }
        Binned { n, edges, codes }
    }

    fn code(&self, row: usize, feature: usize) -> usize {
        usize::from(self.codes[feature * self.n + row])
    }
}

struct Grower<'a> {
    bins: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    params: GbParams,
    tree: Tree,
}

impl Grower<'_> {
    fn grow(&mut self, slot: usize, rows: &mut [usize], depth: usize) {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r], h + self.hess[r]));
        let lambda = self.params.lambda;
        let value = -g / (h + lambda) * self.params.learning_rate;
        self.tree.nodes[slot] = Node::Leaf {
            value,
            samples: rows.len(),
        };
        if depth >= self.params.max_depth || rows.len() < 2 {
            return;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for (f, edges) in self.bins.edges.iter().enumerate() {
            let nb = edges.len() + 1;
            if nb < 2 {
                continue;
            }
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            let mut hc = vec![0usize; nb];
            for &r in rows.iter() {
                let b = self.bins.code(r, f);
                hg[b] += self.grad[r];
                hh[b] += self.hess[r];
                hc[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                let (gr, hr, cr) = (g - gl, h - hl, rows.len() - cl);
                if cl == 0 || cr == 0 || hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                    continue;
                }
                let gain = split_gain(gl, hl, gr, hr, lambda);
                if gain > 0.0 && best.is_none_or(|bst| gain > bst.0) {
                    best = Some((gain, f, b));
                }
            }
        }
        let Some((gain, feature, bin)) = best else {
            return;
        };
        let bins = self.bins;
        let k = stable_partition(rows, |r| bins.code(r, feature) <= bin);
        let left = self.tree.reserve();
        let right = self.tree.reserve();
        self.tree.nodes[slot] = Node::Split {
            feature,
            threshold: self.bins.edges[feature][bin],
            left,
            right,
            samples: rows.len(),
            gain,
        };
        let (l, r) = rows.split_at_mut(k);
        self.grow(left, l, depth + 1);
        self.grow(right, r, depth + 1);
    }
}

fn mean_log_loss(y: &[u8], f: &[f64]) -> f64 {
    y.iter()
        .zip(f)
        .map(|(&y, &z)| {
            // log(1 + e^z) − y·z, computed stably
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - f64::from(y) * z
        })
        .sum::<f64>()
        / y.len() as f64
}

pub fn fit(x: &Matrix, y: &[u8], params: GbParams) -> Booster {
    let n = x.rows();
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let rate = pos / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let bins = Binned::new(x, params.max_bins.clamp(2, 255));
    let mut f = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut train_loss = vec![mean_log_loss(y, &f)];
    for _ in 0..params.n_estimators {
        for i in 0..n {
            let p = stats::sigmoid(f[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let mut g = Grower {
            bins: &bins,
            grad: &grad,
            hess: &hess,
            params,
            tree: Tree::default(),
        };
        let root = g.tree.reserve();
        let mut rows: Vec<usize> = (0..n).collect();
        g.grow(root, &mut rows, 0);
        let tree = g.tree;
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += tree.predict_row(x.row(i));
        }
        train_loss.push(mean_log_loss(y, &f));
        trees.push(tree);
    }
    Booster {
        base_score,
        trees,
        lambda: params.lambda,
        train_loss,
    }
}

impl Booster {
    pub fn decision_function(&self, x: &Matrix) -> Vec<f64> {
        par::map_range(x.rows(), |i| {
            let row = x.row(i);
            self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
        })
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        self.decision_function(x).into_iter().map(stats::sigmoid).collect()
    }
}
