//! Minority-class enhancement: Gaussianising quantile transform, controlled
//! majority undersampling and Gaussian-noise synthesis of minority rows.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::{par, rng, stats};

/// Fitted empirical CDF support of one column: distinct sorted values with
/// their average 1-based ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnQuantiles {
    pub column: usize,
    pub values: Vec<f64>,
    pub ranks: Vec<f64>,
    pub n: usize,
}

impl ColumnQuantiles {
    fn fit(column: usize, xs: &[f64]) -> Self {
        let ranks = stats::average_ranks(xs);
        let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ranks).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        if pairs.len() == 1 {
            log::warn!("quantile transform: column {column} is constant, mapped to 0");
        }
        ColumnQuantiles {
            column,
            values: pairs.iter().map(|p| p.0).collect(),
            ranks: pairs.iter().map(|p| p.1).collect(),
            n: xs.len(),
        }
    }

    /// Rank of `x`, interpolated between fitted support points and clamped
    /// to the fitted range.
    fn rank(&self, x: f64) -> f64 {
        let v = &self.values;
        match v.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => self.ranks[i],
            Err(0) => self.ranks[0],
            Err(i) if i == v.len() => self.ranks[v.len() - 1],
            Err(i) => {
                let t = (x - v[i - 1]) / (v[i] - v[i - 1]);
                self.ranks[i - 1] + t * (self.ranks[i] - self.ranks[i - 1])
            }
        }
    }

    pub fn transform_value(&self, x: f64) -> f64 {
        stats::normal_ppf(self.rank(x) / (self.n as f64 + 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    pub columns: Vec<ColumnQuantiles>,
}

impl QuantileTransform {
    pub fn fit(x: &Matrix, columns: &[usize]) -> QuantileTransform {
        QuantileTransform {
            columns: par::map_slice(columns, |&j| ColumnQuantiles::fit(j, &x.column(j))),
        }
    }

    /// Maps each fitted column through z = Φ⁻¹(r / (N + 1)). Other columns
    /// pass through unchanged.
    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        let mapped: Vec<Vec<f64>> = par::map_slice(&self.columns, |q| {
            x.column(q.column).iter().map(|&v| q.transform_value(v)).collect()
        });
        for (q, col) in self.columns.iter().zip(mapped) {
            out.set_column(q.column, &col);
        }
        out
    }
}

pub fn quantile_fit_transform(x: &Matrix, columns: &[usize]) -> (QuantileTransform, Matrix) {
    let qt = QuantileTransform::fit(x, columns);
    let z = qt.transform(x);
    (qt, z)
}

fn class_counts(y: &[u8]) -> [usize; 2] {
    let ones = y.iter().filter(|&&l| l != 0).count();
    [y.len() - ones, ones]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub minority_label: u8,
    pub minority_count: usize,
    /// ⌊ratio · m⌋.
    pub majority_target: usize,
    /// Majority rows actually kept; below the target only when the majority
    /// class is too small.
    pub majority_kept: usize,
    pub synthetic_count: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn new(y: &[u8], ratio: f64, noise_scale: f64, seed: u64) -> Result<Self> {
        Self::from_counts(class_counts(y), ratio, noise_scale, seed)
    }

    pub fn from_counts(counts: [usize; 2], ratio: f64, noise_scale: f64, seed: u64) -> Result<Self> {
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::DegenerateLabels("both classes must be present".into()));
        }
        if !(ratio >= 1.0 && ratio.is_finite()) {
            return Err(Error::invalid(format!("ratio must be >= 1, got {ratio}")));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale must be nonnegative"));
        }
        let minority_label = u8::from(counts[1] < counts[0]);
        let m = counts[usize::from(minority_label)];
        let majority = counts[1 - usize::from(minority_label)];
        let majority_target = (ratio * m as f64).floor() as usize;
        let majority_kept = if majority_target > majority {
            log::warn!("undersampling target {majority_target} exceeds majority count {majority}; keeping all");
            majority
        } else {
            majority_target
        };
        Ok(AugmentationPlan {
            minority_label,
            minority_count: m,
            majority_target,
            majority_kept,
            synthetic_count: majority_kept - m,
            noise_scale,
            seed,
        })
    }
}

/// Keeps ⌊ratio·m⌋ majority rows drawn uniformly without replacement and all
/// minority rows. Returns the retained row indices in ascending order.
pub fn undersample_majority(y: &[u8], ratio: f64, seed: u64) -> Result<Vec<usize>> {
    let plan = AugmentationPlan::new(y, ratio, 0.0, seed)?;
    Ok(undersample_with(y, &plan))
}

fn undersample_with(y: &[u8], plan: &AugmentationPlan) -> Vec<usize> {
    let majority: Vec<usize> = (0..y.len()).filter(|&i| y[i] != plan.minority_label).collect();
    let mut r = rng::stream(plan.seed, 0x0dd5);
    let mut keep: Vec<usize> = index::sample(&mut r, majority.len(), plan.majority_kept)
        .into_iter()
        .map(|k| majority[k])
        .collect();
    keep.extend((0..y.len()).filter(|&i| y[i] == plan.minority_label));
    keep.sort_unstable();
    keep
}

/// Synthesises `count` rows, each a uniformly chosen row of `x_min` plus
/// N(0, (noise_scale·std_j)²) noise on every column in `noise_columns`.
/// Returns the rows and the source row index of each.
pub fn gaussian_augment(
    x_min: &Matrix,
    count: usize,
    noise_scale: f64,
    seed: u64,
    noise_columns: &[usize],
) -> Result<(Matrix, Vec<usize>)> {
    if count == 0 {
        return Ok((Matrix::zeros(0, x_min.cols()), vec![]));
    }
    if x_min.rows() == 0 {
        return Err(Error::Empty("no minority rows to augment".into()));
    }
    let sigmas: Vec<(usize, f64)> = noise_columns
        .iter()
        .map(|&j| (j, noise_scale * stats::std_dev(&x_min.column(j))))
        .collect();
    let mut r = rng::stream(seed, 0xa09);
    let mut out = Matrix::zeros(count, x_min.cols());
    let mut sources = Vec::with_capacity(count);
    for i in 0..count {
        let src = r.random_range(0..x_min.rows());
        sources.push(src);
        let row = out.row_mut(i);
        row.copy_from_slice(x_min.row(src));
        for &(j, sigma) in &sigmas {
            if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
                row[j] += n.sample(&mut r);
            }
        }
    }
    Ok((out, sources))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    pub x: Matrix,
    pub y: Vec<u8>,
    /// For each output row, the input row it came from (synthetic rows point
    /// at their noise source).
    pub source: Vec<usize>,
    pub synthetic: Vec<bool>,
}

/// Undersamples the majority to the plan's ratio, then adds synthetic
/// minority rows until the classes are level.
pub fn balance(x: &Matrix, y: &[u8], plan: &AugmentationPlan, noise_columns: &[usize]) -> Result<Balanced> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    let counts = class_counts(y);
    if counts[usize::from(plan.minority_label)] != plan.minority_count {
        return Err(Error::invalid("augmentation plan does not match labels"));
    }
    let keep = undersample_with(y, plan);
    let minority_idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == plan.minority_label).collect();
    let x_min = x.select_rows(&minority_idx);
    let (synth, src) = gaussian_augment(&x_min, plan.synthetic_count, plan.noise_scale, plan.seed, noise_columns)?;
    let out = x.select_rows(&keep).vstack(&synth)?;
    let mut labels: Vec<u8> = keep.iter().map(|&i| y[i]).collect();
    labels.extend(std::iter::repeat_n(plan.minority_label, synth.rows()));
    let mut source = keep.clone();
    source.extend(src.iter().map(|&s| minority_idx[s]));
    let mut synthetic = vec![false; keep.len()];
    synthetic.extend(std::iter::repeat_n(true, synth.rows()));
    Ok(Balanced {
        x: out,
        y: labels,
        source,
        synthetic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::erf::erfc;

    fn normal_cdf(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    /// Inverse normal CDF by bisection on an erfc-based CDF.
    fn ppf_bisect(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ppf_matches_bisection_oracle() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            assert!((stats::normal_ppf(p) - ppf_bisect(p)).abs() < 1e-10, "p = {p}");
        }
        for p in [1e-12, 1e-8, 1e-5] {
            assert!((stats::normal_ppf(p) - ppf_bisect(p)).abs() < 1e-10, "p = {p}");
        }
        for p in [1e-8, 1e-5] {
            assert!(
                (stats::normal_ppf(1.0 - p) + stats::normal_ppf(p)).abs() < 1e-6,
                "p = {p}"
            );
        }
    }

    #[test]
    fn three_point_column() {
        let x = Matrix::from_columns(&[vec![10.0, 20.0, 30.0]]).unwrap();
        let (_, z) = quantile_fit_transform(&x, &[0]);
        let expect: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&p| ppf_bisect(p)).collect();
        assert!((expect[0] + 0.6745).abs() < 1e-4);
        for (a, b) in z.column(0).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn median_maps_to_zero_and_constant_to_zero() {
        let x = Matrix::from_columns(&[vec![5.0, 1.0, 9.0, 3.0, 7.0], vec![4.0; 5]]).unwrap();
        let (_, z) = quantile_fit_transform(&x, &[0, 1]);
        assert!(z.get(0, 0).abs() < 1e-9);
        assert!(z.column(1).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn unseen_values_interpolate_and_clamp() {
        let x = Matrix::from_columns(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let qt = QuantileTransform::fit(&x, &[0]);
        let q = &qt.columns[0];
        assert_eq!(q.transform_value(-100.0), q.transform_value(1.0));
        assert_eq!(q.transform_value(100.0), q.transform_value(4.0));
        let mid = q.transform_value(2.5);
        assert!(mid.abs() < 1e-12);
        assert!(q.transform_value(2.2) < mid);
    }

    #[test]
    fn undersample_counts() {
        let y: Vec<u8> = (0..1100).map(|i| u8::from(i >= 100)).collect();
        let keep = undersample_majority(&y, 1.5, 42).unwrap();
        assert_eq!(keep.iter().filter(|&&i| y[i] == 1).count(), 150);
        assert_eq!(keep.iter().filter(|&&i| y[i] == 0).count(), 100);
        assert_eq!(keep, undersample_majority(&y, 1.5, 42).unwrap());

        let at_ratio: Vec<u8> = (0..250).map(|i| u8::from(i >= 100)).collect();
        assert_eq!(undersample_majority(&at_ratio, 1.5, 1).unwrap().len(), 250);

        let short: Vec<u8> = (0..220).map(|i| u8::from(i >= 100)).collect();
        assert_eq!(undersample_majority(&short, 1.5, 1).unwrap().len(), 220);
        assert!(undersample_majority(&[1, 1, 1], 1.5, 1).is_err());
    }

    #[test]
    fn augment_edge_cases() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
        let (m, _) = gaussian_augment(&x, 0, 0.05, 1, &[0, 1]).unwrap();
        assert_eq!(m.rows(), 0);
        let (m, src) = gaussian_augment(&x, 10, 0.0, 1, &[0, 1]).unwrap();
        for i in 0..10 {
            assert_eq!(m.row(i), x.row(src[i]));
        }
    }

    #[test]
    fn noise_moment_check() {
        let mut r = rng::seeded(8);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![r.random::<f64>() * 10.0, r.random::<f64>() * 0.1])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let (m, src) = gaussian_augment(&x, 10_000, 0.05, 3, &[0, 1]).unwrap();
        for j in 0..2 {
            let diffs: Vec<f64> = (0..m.rows()).map(|i| m.get(i, j) - x.get(src[i], j)).collect();
            let target = 0.05 * stats::std_dev(&x.column(j));
            let got = stats::std_dev(&diffs);
            assert!((got / target - 1.0).abs() < 0.05, "col {j}: {got} vs {target}");
        }
    }

    #[test]
    fn full_scale_count_arithmetic() {
        let plan = AugmentationPlan::from_counts([66_312, 269_555], 1.5, 0.05, 42).unwrap();
        assert_eq!(plan.minority_label, 0);
        assert_eq!(plan.majority_target, 99_468);
        assert_eq!(plan.synthetic_count, 33_156);
        assert_eq!(plan.minority_count + plan.synthetic_count, 99_468);
    }

    #[test]
    fn balanced_ratio_one_needs_no_synthesis() {
        let y: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
        let x = Matrix::from_columns(&[(0..40).map(f64::from).collect()]).unwrap();
        let plan = AugmentationPlan::new(&y, 1.0, 0.05, 1).unwrap();
        assert_eq!(plan.synthetic_count, 0);
        let b = balance(&x, &y, &plan, &[0]).unwrap();
        assert_eq!(b.x, x);
    }

    proptest! {
        #[test]
        fn rank_preserving(xs in proptest::collection::hash_set(-1000i64..1000, 2..60)) {
            let xs: Vec<f64> = xs.into_iter().map(|v| v as f64).collect();
            let x = Matrix::from_columns(std::slice::from_ref(&xs)).unwrap();
            let (_, z) = quantile_fit_transform(&x, &[0]);
            let z = z.column(0);
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    prop_assert_eq!(xs[i] < xs[j], z[i] < z[j]);
                }
            }
        }

        #[test]
        fn balance_levels_classes(m in 5usize..80, extra in 0usize..300, seed in any::<u64>(), ratio in 1.0f64..3.0) {
            let n = 2 * m + extra;
            let y: Vec<u8> = (0..n).map(|i| u8::from(i >= m)).collect();
            let x = Matrix::from_columns(&[(0..n).map(|i| i as f64).collect()]).unwrap();
            let plan = AugmentationPlan::new(&y, ratio, 0.05, seed).unwrap();
            let b = balance(&x, &y, &plan, &[0]).unwrap();
            let ones = b.y.iter().filter(|&&l| l == 1).count();
            let zeros = b.y.len() - ones;
            prop_assert!((ones as i64 - zeros as i64).abs() <= 1);
            for (k, &s) in b.source.iter().enumerate() {
                prop_assert!(s < n);
                if b.synthetic[k] {
                    prop_assert_eq!(y[s], plan.minority_label);
                }
            }
        }
    }
}
