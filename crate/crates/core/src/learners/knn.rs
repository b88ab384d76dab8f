//! k-nearest neighbours under Euclidean distance; the probability is the
//! positive fraction among the k nearest training rows, with rows tied at
//! the k-th distance sharing the remaining votes equally.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub x: Matrix,
    pub y: Vec<u8>,
    pub k: usize,
}

pub fn fit(x: &Matrix, y: &[u8], k: usize) -> KnnModel {
    KnnModel {
        x: x.clone(),
        y: y.to_vec(),
        k,
    }
}

impl KnnModel {
    fn vote(&self, q: &[f64]) -> f64 {
        let dist: Vec<f64> = self
            .x
            .iter_rows()
            .map(|r| r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        let k = self.k.min(dist.len());
        let mut scratch = dist.clone();
        let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
        let kth = *kth;
        let (mut closer, mut closer_pos, mut tied, mut tied_pos) = (0usize, 0usize, 0usize, 0usize);
        for (&d, &y) in dist.iter().zip(&self.y) {
            if d < kth {
                closer += 1;
                closer_pos += usize::from(y);
            } else if d == kth {
                tied += 1;
                tied_pos += usize::from(y);
            }
        }
        let share = (k - closer) as f64 * tied_pos as f64 / tied as f64;
        (closer_pos as f64 + share) / k as f64
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        par::map_range(x.rows(), |i| self.vote(x.row(i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_fraction_and_ties() {
        let x = Matrix::from_columns(&[vec![0.0, 1.0, 2.0, 10.0]]).unwrap();
        let m = fit(&x, &[1, 0, 1, 0], 3);
        let q = Matrix::from_columns(&[vec![1.0]]).unwrap();
        assert!((m.predict_proba(&q)[0] - 2.0 / 3.0).abs() < 1e-15);

        // distances 1,1,1,1 from 0: two of four tied rows fill k=2
        let ring = Matrix::from_columns(&[vec![-1.0, 1.0, -1.0, 1.0]]).unwrap();
        let m = fit(&ring, &[1, 1, 0, 0], 2);
        let origin = Matrix::from_columns(&[vec![0.0]]).unwrap();
        assert_eq!(m.predict_proba(&origin), vec![0.5]);
    }

    #[test]
    fn one_neighbour_reproduces_labels() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![3.0, 3.0]]).unwrap();
        let m = fit(&x, &[0, 1, 1], 1);
        assert_eq!(m.predict_proba(&x), vec![0.0, 1.0, 1.0]);
    }
}
