//! Extremely randomised trees: random feature subsets, one uniformly drawn
//! threshold per candidate feature, Gini criterion, no bootstrap.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{stable_partition, Node, Tree};
use crate::matrix::Matrix;
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    params: ErtParams,
    rng: rng::Rng,
    tree: Tree,
    features: Vec<usize>,
}

impl Builder<'_> {
    fn grow(&mut self, slot: usize, rows: &mut [usize], depth: usize) {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r] == 1).count();
        let value = pos as f64 / n as f64;
        let leaf = Node::Leaf { value, samples: n };
        if depth >= self.params.max_depth || n < self.params.min_samples_split || pos == 0 || pos == n {
            self.tree.nodes[slot] = leaf;
            return;
        }
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut tried = 0;
        self.features.shuffle(&mut self.rng);
        for fi in 0..self.features.len() {
            if tried == self.params.max_features {
                break;
            }
            let f = self.features[fi];
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &r in rows.iter() {
                let v = self.x.get(r, f);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi <= lo {
                continue;
            }
            tried += 1;
            let t = self.rng.random_range(lo..hi);
            let (mut nl, mut pl) = (0usize, 0usize);
            for &r in rows.iter() {
                if self.x.get(r, f) <= t {
                    nl += 1;
                    pl += usize::from(self.y[r]);
                }
            }
            let nr = n - nl;
            let decrease = parent - (nl as f64 / n as f64) * gini(pl, nl) - (nr as f64 / n as f64) * gini(pos - pl, nr);
            if best.is_none_or(|b| decrease > b.0) {
                best = Some((decrease, f, t));
            }
        }
        let Some((gain, feature, threshold)) = best else {
            self.tree.nodes[slot] = leaf;
            return;
        };
        let x = self.x;
        let k = stable_partition(rows, |r| x.get(r, feature) <= threshold);
        let left = self.tree.reserve();
        let right = self.tree.reserve();
        self.tree.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
            samples: n,
            gain,
        };
        let (l, r) = rows.split_at_mut(k);
        self.grow(left, l, depth + 1);
        self.grow(right, r, depth + 1);
    }
}

pub fn fit(x: &Matrix, y: &[u8], params: ErtParams, seed: u64) -> Forest {
    let trees = (0..params.n_estimators)
        .map(|t| {
            let mut b = Builder {
                x,
                y,
                params,
                rng: rng::stream(seed, t as u64),
                tree: Tree::default(),
                features: (0..x.cols()).collect(),
            };
            let root = b.tree.reserve();
            let mut rows: Vec<usize> = (0..x.rows()).collect();
            b.grow(root, &mut rows, 0);
            b.tree
        })
        .collect();
    Forest { trees }
}

impl Forest {
    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        let k = self.trees.len() as f64;
        par::map_range(x.rows(), |i| {
            let row = x.row(i);
            self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
        })
    }

    /// Leaf probabilities of each tree, tree-major.
    pub fn tree_predictions(&self, x: &Matrix) -> Vec<Vec<f64>> {
        self.trees
            .iter()
            .map(|t| x.iter_rows().map(|r| t.predict_row(r)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize) -> ErtParams {
        ErtParams {
            n_estimators: n,
            max_depth: 12,
            min_samples_split: 2,
            max_features: 1,
        }
    }

    #[test]
    fn separates_threshold_data() {
        let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64, ((i * 7) % 13) as f64]).collect();
        let y: Vec<u8> = (0..200).map(|i| u8::from(i >= 100)).collect();
        let x = Matrix::from_rows(&xs).unwrap();
        let f = fit(&x, &y, params(50), 3);
        let p = f.predict_proba(&x);
        let acc = p.iter().zip(&y).filter(|(p, y)| u8::from(**p >= 0.5) == **y).count();
        assert!(acc >= 195);
        assert_eq!(f, fit(&x, &y, params(50), 3));
    }

    #[test]
    fn respects_depth_and_min_split() {
        let xs: Vec<Vec<f64>> = (0..300)
            .map(|i| vec![((i * 31) % 97) as f64, ((i * 17) % 89) as f64])
            .collect();
        let y: Vec<u8> = (0..300).map(|i| u8::from((i * 31) % 97 > 40)).collect();
        let x = Matrix::from_rows(&xs).unwrap();
        let p = ErtParams {
            n_estimators: 5,
            max_depth: 3,
            min_samples_split: 40,
            max_features: 2,
        };
        for t in fit(&x, &y, p, 1).trees {
            assert!(t.depth() <= 3);
            assert!(t.splits().all(|s| s.samples >= 40));
        }
    }
}
