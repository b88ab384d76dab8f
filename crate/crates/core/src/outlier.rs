//! Hybrid outlier pipeline: Gaussian change-point segmentation, per-segment
//! IQR and Hampel flagging, and sliding-median correction. PCA is available
//! as a diagnostic projection; detection always runs in the original space.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;
use crate::stats;

const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSet {
    pub change_points: Vec<usize>,
    /// Half-open `[start, end)` ranges tiling `0..n`.
    pub segments: Vec<(usize, usize)>,
    /// Penalised gain of every candidate split of the full series, as
    /// `(split_index, score)`.
    pub log_likelihoods: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagSource {
    Iqr,
    Hampel,
    Both,
}

impl FlagSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagSource::Iqr => "iqr",
            FlagSource::Hampel => "hampel",
            FlagSource::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlags {
    pub flags: BTreeMap<usize, FlagSource>,
}

impl OutlierFlags {
    fn from_indices(indices: impl IntoIterator<Item = usize>, source: FlagSource) -> Self {
        OutlierFlags {
            flags: indices.into_iter().map(|i| (i, source)).collect(),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.flags.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.flags.contains_key(&i)
    }

    pub fn union(&self, other: &OutlierFlags) -> OutlierFlags {
        let mut flags = self.flags.clone();
        for (&i, &s) in &other.flags {
            flags
                .entry(i)
                .and_modify(|e| {
                    if *e != s {
                        *e = FlagSource::Both
                    }
                })
                .or_insert(s);
        }
        OutlierFlags { flags }
    }

    pub fn intersection(&self, other: &OutlierFlags) -> OutlierFlags {
        OutlierFlags {
            flags: self
                .flags
                .keys()
                .filter(|i| other.flags.contains_key(i))
                .map(|&i| (i, FlagSource::Both))
                .collect(),
        }
    }

    fn offset(self, by: usize) -> OutlierFlags {
        OutlierFlags {
            flags: self.flags.into_iter().map(|(i, s)| (i + by, s)).collect(),
        }
    }
}

/// Gaussian log-likelihood of a segment at its MLE mean and (floored) variance.
fn segment_loglik(n: f64, sum: f64, sumsq: f64) -> f64 {
    let mean = sum / n;
    let ss = (sumsq - sum * mean).max(0.0);
    let var = (ss / n).max(VARIANCE_FLOOR);
    -0.5 * n * (2.0 * std::f64::consts::PI * var).ln() - ss / (2.0 * var)
}

struct Prefix {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Prefix {
    fn new(series: &[f64]) -> Self {
        // Centering keeps the running sums well conditioned for large values.
        let mean = stats::mean(series);
        let mut sum = vec![0.0; series.len() + 1];
        let mut sumsq = vec![0.0; series.len() + 1];
        for (i, v) in series.iter().enumerate() {
            let c = v - mean;
            sum[i + 1] = sum[i] + c;
            sumsq[i + 1] = sumsq[i] + c * c;
        }
        Prefix { sum, sumsq }
    }

    fn loglik(&self, a: usize, b: usize) -> f64 {
        segment_loglik((b - a) as f64, self.sum[b] - self.sum[a], self.sumsq[b] - self.sumsq[a])
    }
}

/// Best split of `[a, b)`: `(split, penalised gain, all candidate scores)`.
fn best_split(
    p: &Prefix,
    a: usize,
    b: usize,
    min_len: usize,
    penalty: f64,
    keep_scan: bool,
) -> (Option<(usize, f64)>, Vec<(usize, f64)>) {
    let mut scan = Vec::new();
    if b - a < 2 * min_len {
        return (None, scan);
    }
    let whole = p.loglik(a, b);
    let mut best: Option<(usize, f64)> = None;
    for t in a + min_len..=b - min_len {
        let gain = p.loglik(a, t) + p.loglik(t, b) - whole - penalty;
        if keep_scan {
            scan.push((t, gain));
        }
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((t, gain));
        }
    }
    (best, scan)
}

/// Recursive binary segmentation under a two-segment Gaussian likelihood.
/// Each accepted split must raise the log-likelihood by more than
/// `prior_penalty`; at most `max_points` splits are made. Segments shorter
/// than `min_segment_len` are never created.
pub fn detect_changepoints_with(
    series: &[f64],
    max_points: usize,
    prior_penalty: f64,
    min_segment_len: usize,
) -> Result<SegmentSet> {
    if series.len() < 4 {
        return Err(Error::invalid("change-point detection needs at least 4 values"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series passed to change-point detection".into()));
    }
    let min_len = min_segment_len.max(2);
    let n = series.len();
    let p = Prefix::new(series);

    let (root, scan) = best_split(&p, 0, n, min_len, prior_penalty, true);
    // (start, end, best split candidate)
    let mut segments: Vec<(usize, usize, Option<(usize, f64)>)> = vec![(0, n, root)];
    let mut change_points = Vec::new();
    while change_points.len() < max_points {
        let pick = segments
            .iter()
            .enumerate()
            .filter_map(|(k, (_, _, c))| c.map(|(t, g)| (k, t, g)))
            .max_by(|x, y| x.2.total_cmp(&y.2).then(y.1.cmp(&x.1)));
        let Some((k, t, gain)) = pick else { break };
        if gain <= 0.0 {
            break;
        }
        let (a, b, _) = segments.remove(k);
        let left = best_split(&p, a, t, min_len, prior_penalty, false).0;
        let right = best_split(&p, t, b, min_len, prior_penalty, false).0;
        segments.push((a, t, left));
        segments.push((t, b, right));
        change_points.push(t);
    }
    change_points.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend_from_slice(&change_points);
    bounds.push(n);
    Ok(SegmentSet {
        change_points,
        segments: bounds.windows(2).map(|w| (w[0], w[1])).collect(),
        log_likelihoods: scan,
    })
}

/// Change-point detection with a minimum segment length of 2.
pub fn detect_changepoints(series: &[f64], max_points: usize, prior_penalty: f64) -> Result<SegmentSet> {
    detect_changepoints_with(series, max_points, prior_penalty, 2)
}

/// Flags values outside `[Q1 − k·IQR, Q3 + k·IQR]` (type-7 quartiles).
pub fn iqr_flags(segment: &[f64], k: f64) -> Result<OutlierFlags> {
    if segment.len() < 4 {
        return Err(Error::invalid("IQR flagging needs at least 4 values"));
    }
    let (lo, hi) = iqr_fence(segment, k);
    Ok(OutlierFlags::from_indices(
        segment
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < lo || v > hi)
            .map(|(i, _)| i),
        FlagSource::Iqr,
    ))
}

fn iqr_fence(values: &[f64], k: f64) -> (f64, f64) {
    let s = stats::sorted(values);
    let q1 = stats::quantile_sorted(&s, 0.25);
    let q3 = stats::quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    (q1 - k * iqr, q3 + k * iqr)
}

/// Median and raw (unscaled) median absolute deviation.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    let med = stats::median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    (med, stats::median(&dev))
}

/// Hampel identifier: flags `|x − median| > k·MAD`; when MAD is zero every
/// value different from the median is flagged.
pub fn hampel_flags(segment: &[f64], k: f64) -> Result<OutlierFlags> {
    if segment.len() < 3 {
        return Err(Error::invalid("Hampel flagging needs at least 3 values"));
    }
    let (med, mad) = median_mad(segment);
    Ok(OutlierFlags::from_indices(
        segment
            .iter()
            .enumerate()
            .filter(|(_, &v)| hampel_outside(v, med, mad, k))
            .map(|(i, _)| i),
        FlagSource::Hampel,
    ))
}

#[inline]
fn hampel_outside(v: f64, med: f64, mad: f64, k: f64) -> bool {
    let d = (v - med).abs();
    if mad == 0.0 {
        d > 0.0
    } else {
        d > k * mad
    }
}

/// Replaces each flagged value with the median of the window of size
/// `window` centred on it, computed over the original series. Windows are
/// truncated at the boundaries; even-sized truncated windows use the lower
/// median.
pub fn median_correct(series: &[f64], flags: &OutlierFlags, window: usize) -> Result<Vec<f64>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!("window must be odd and >= 3, got {window}")));
    }
    let half = window / 2;
    let mut out = series.to_vec();
    for &i in flags.flags.keys() {
        if i >= series.len() {
            return Err(Error::invalid(format!("flag index {i} out of range")));
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(series.len());
        out[i] = stats::lower_median(&series[lo..hi]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinePolicy {
    Union,
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcpHiConfig {
    pub max_points: usize,
    /// Penalty per accepted split; `None` means 0.5·ln N.
    pub prior_penalty: Option<f64>,
    pub min_segment_len: usize,
    pub iqr_k: f64,
    pub hampel_k: f64,
    pub window: usize,
    pub policy: CombinePolicy,
}

impl Default for BcpHiConfig {
    fn default() -> Self {
        BcpHiConfig {
            max_points: 10,
            prior_penalty: None,
            min_segment_len: 20,
            iqr_k: 3.0,
            hampel_k: 3.0,
            window: 5,
            policy: CombinePolicy::Union,
        }
    }
}

impl BcpHiConfig {
    pub fn penalty_for(&self, n: usize) -> f64 {
        self.prior_penalty.unwrap_or(0.5 * (n.max(1) as f64).ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcpHiOutput {
    pub corrected: Vec<f64>,
    pub flags: OutlierFlags,
    pub segments: SegmentSet,
}

/// Flags from both detectors on one segment, combined per `policy`.
pub fn segment_flags(segment: &[f64], config: &BcpHiConfig) -> Result<OutlierFlags> {
    let iqr = if segment.len() >= 4 {
        iqr_flags(segment, config.iqr_k)?
    } else {
        OutlierFlags::default()
    };
    let hampel = if segment.len() >= 3 {
        hampel_flags(segment, config.hampel_k)?
    } else {
        OutlierFlags::default()
    };
    Ok(match config.policy {
        CombinePolicy::Union => iqr.union(&hampel),
        CombinePolicy::Intersection => iqr.intersection(&hampel),
    })
}

/// Segment → flag → correct for one numeric column.
pub fn run_bcp_hi(column: &[f64], config: &BcpHiConfig) -> Result<BcpHiOutput> {
    if column.len() < 4 {
        return Ok(BcpHiOutput {
            corrected: column.to_vec(),
            flags: OutlierFlags::default(),
            segments: SegmentSet {
                change_points: vec![],
                segments: vec![(0, column.len())],
                log_likelihoods: vec![],
            },
        });
    }
    let segments = detect_changepoints_with(
        column,
        config.max_points,
        config.penalty_for(column.len()),
        config.min_segment_len,
    )?;
    let mut flags = OutlierFlags::default();
    for &(a, b) in &segments.segments {
        let seg_flags = segment_flags(&column[a..b], config)?.offset(a);
        flags.flags.extend(seg_flags.flags);
    }
    let corrected = median_correct(column, &flags, config.window)?;
    Ok(BcpHiOutput {
        corrected,
        flags,
        segments,
    })
}

/// Train-fitted bounds for one column, used to correct unseen rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnFence {
    pub column: usize,
    pub name: String,
    pub iqr_low: f64,
    pub iqr_high: f64,
    pub median: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierModel {
    pub config: BcpHiConfig,
    pub fences: Vec<ColumnFence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub column: String,
    pub row_index: usize,
    pub source: FlagSource,
    pub original: f64,
    pub corrected: f64,
}

pub fn flags_csv(records: &[FlagRecord]) -> String {
    let mut out = String::from("column,row_index,source,original,corrected\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.column,
            r.row_index,
            r.source.as_str(),
            r.original,
            r.corrected
        ));
    }
    out
}

fn records_for(name: &str, original: &[f64], out: &BcpHiOutput) -> Vec<FlagRecord> {
    out.flags
        .flags
        .iter()
        .map(|(&i, &s)| FlagRecord {
            column: name.to_string(),
            row_index: i,
            source: s,
            original: original[i],
            corrected: out.corrected[i],
        })
        .collect()
}

impl OutlierModel {
    /// Runs the hybrid pipeline on each listed column of `x` (columns fan out
    /// in parallel) and records per-column fences for later application.
    pub fn fit(
        x: &Matrix,
        columns: &[(usize, String)],
        config: &BcpHiConfig,
    ) -> Result<(Matrix, OutlierModel, Vec<FlagRecord>)> {
        let outputs: Vec<Result<(Vec<f64>, BcpHiOutput)>> = par::map_slice(columns, |(j, _)| {
            let col = x.column(*j);
            run_bcp_hi(&col, config).map(|o| (col, o))
        });
        let mut corrected = x.clone();
        let mut fences = Vec::with_capacity(columns.len());
        let mut records = Vec::new();
        for ((j, name), res) in columns.iter().zip(outputs) {
            let (col, out) = res?;
            corrected.set_column(*j, &out.corrected);
            records.extend(records_for(name, &col, &out));
            let (iqr_low, iqr_high) = iqr_fence(&col, config.iqr_k);
            let (median, mad) = median_mad(&col);
            fences.push(ColumnFence {
                column: *j,
                name: name.clone(),
                iqr_low,
                iqr_high,
                median,
                mad,
            });
        }
        Ok((
            corrected,
            OutlierModel {
                config: config.clone(),
                fences,
            },
            records,
        ))
    }

    /// Flags unseen rows against the fitted fences and median-corrects them.
    pub fn apply(&self, x: &Matrix) -> Result<(Matrix, Vec<FlagRecord>)> {
        let mut out = x.clone();
        let mut records = Vec::new();
        for f in &self.fences {
            if f.column >= x.cols() {
                return Err(Error::DimensionMismatch {
                    expected: f.column + 1,
                    found: x.cols(),
                });
            }
            let col = x.column(f.column);
            let iqr = OutlierFlags::from_indices(
                col.iter()
                    .enumerate()
                    .filter(|(_, &v)| v < f.iqr_low || v > f.iqr_high)
                    .map(|(i, _)| i),
                FlagSource::Iqr,
            );
            let hampel = OutlierFlags::from_indices(
                col.iter()
                    .enumerate()
                    .filter(|(_, &v)| hampel_outside(v, f.median, f.mad, self.config.hampel_k))
                    .map(|(i, _)| i),
                FlagSource::Hampel,
            );
            let flags = match self.config.policy {
                CombinePolicy::Union => iqr.union(&hampel),
                CombinePolicy::Intersection => iqr.intersection(&hampel),
            };
            let corrected = if col.len() >= 3 {
                median_correct(&col, &flags, self.config.window)?
            } else {
                col.clone()
            };
            out.set_column(f.column, &corrected);
            let o = BcpHiOutput {
                corrected,
                flags,
                segments: SegmentSet {
                    change_points: vec![],
                    segments: vec![],
                    log_likelihoods: vec![],
                },
            };
            records.extend(records_for(&f.name, &col, &o));
        }
        Ok((out, records))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// D×k matrix whose columns are orthonormal principal directions.
    pub components: Matrix,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.cols()
    }

    pub fn project(&self, x: &Matrix) -> Matrix {
        let (d, k) = (self.components.rows(), self.k());
        let mut out = Matrix::zeros(x.rows(), k);
        for i in 0..x.rows() {
            let row = x.row(i);
            for c in 0..k {
                let s: f64 = (0..d)
                    .map(|j| (row[j] - self.mean[j]) * self.components.get(j, c))
                    .sum();
                out.set(i, c, s);
            }
        }
        out
    }

    pub fn reconstruct(&self, y: &Matrix) -> Matrix {
        let (d, k) = (self.components.rows(), self.k());
        let mut out = Matrix::zeros(y.rows(), d);
        for i in 0..y.rows() {
            for j in 0..d {
                let s: f64 = (0..k).map(|c| y.get(i, c) * self.components.get(j, c)).sum();
                out.set(i, j, s + self.mean[j]);
            }
        }
        out
    }
}

/// Principal components of the centred data, keeping the smallest k whose
/// cumulative explained variance reaches `variance_target`.
pub fn pca_fit(x: &Matrix, variance_target: f64) -> Result<PcaModel> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 rows"));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::invalid("variance_target must lie in (0, 1]"));
    }
    let mean: Vec<f64> = (0..d).map(|j| stats::mean(&x.column(j))).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in x.iter_rows() {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        log::warn!("PCA on zero-variance data; no components retained");
        return Ok(PcaModel {
            mean,
            components: Matrix::zeros(d, 0),
            explained_variance_ratio: vec![],
        });
    }
    let mut k = 0;
    let mut cum = 0.0;
    let mut ratios = Vec::new();
    while k < d {
        let r = values[k] / total;
        ratios.push(r);
        cum += r;
        k += 1;
        if cum >= variance_target - 1e-12 {
            break;
        }
    }
    let mut components = Matrix::zeros(d, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(i);
        // Sign convention: largest-magnitude loading positive.
        let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components.set(j, c, sign * v[j]);
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Direct two-segment Gaussian likelihood, no prefix sums.
    fn brute_loglik(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).max(1e-12);
        xs.iter()
            .map(|x| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - m).powi(2) / (2.0 * var))
            .sum()
    }

    fn brute_best_split(xs: &[f64]) -> usize {
        (2..=xs.len() - 2)
            .max_by(|&a, &b| {
                let la = brute_loglik(&xs[..a]) + brute_loglik(&xs[a..]);
                let lb = brute_loglik(&xs[..b]) + brute_loglik(&xs[b..]);
                la.total_cmp(&lb)
            })
            .unwrap()
    }

    #[test]
    fn step_series_splits_at_boundary() {
        let mut xs = vec![0.0; 50];
        xs.extend(vec![10.0; 50]);
        let oracle = brute_best_split(&xs);
        assert!((oracle as i64 - 50).abs() <= 1);
        let seg = detect_changepoints(&xs, 5, 0.5 * 100f64.ln()).unwrap();
        assert_eq!(seg.change_points, vec![oracle]);
        assert_eq!(seg.segments, vec![(0, oracle), (oracle, 100)]);
    }

    #[test]
    fn root_scan_matches_brute_force() {
        let mut rng = crate::rng::seeded(5);
        let xs: Vec<f64> = (0..60)
            .map(|i| if i < 25 { 0.0 } else { 3.0 } + rng.random::<f64>())
            .collect();
        let seg = detect_changepoints(&xs, 1, 0.0).unwrap();
        let whole = brute_loglik(&xs);
        for &(t, score) in &seg.log_likelihoods {
            let expect = brute_loglik(&xs[..t]) + brute_loglik(&xs[t..]) - whole;
            assert!((score - expect).abs() < 1e-8 * expect.abs().max(1.0));
        }
        assert_eq!(seg.change_points, vec![brute_best_split(&xs)]);
    }

    #[test]
    fn constant_series_has_no_changepoints() {
        let seg = detect_changepoints(&[7.0; 40], 10, 1.0).unwrap();
        assert!(seg.change_points.is_empty());
        assert_eq!(seg.segments, vec![(0, 40)]);
    }

    #[test]
    fn short_or_nonfinite_series_rejected() {
        assert!(detect_changepoints(&[1.0, 2.0, 3.0], 1, 1.0).is_err());
        assert!(detect_changepoints(&[1.0, f64::NAN, 3.0, 4.0], 1, 1.0).is_err());
    }

    #[test]
    fn white_noise_rarely_segmented() {
        let quiet = (0..100u64)
            .filter(|&seed| {
                let mut rng = crate::rng::seeded(seed);
                let xs: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
                detect_changepoints(&xs, 5, 10.0).unwrap().change_points.is_empty()
            })
            .count();
        assert!(quiet >= 95, "{quiet}/100 quiet");
    }

    fn oracle_quartiles(sorted: &[f64]) -> (f64, f64) {
        let q = |p: f64| {
            let h = (sorted.len() - 1) as f64 * p;
            let (f, c) = (h.floor() as usize, h.ceil() as usize);
            sorted[f] + (h - f as f64) * (sorted[c] - sorted[f])
        };
        (q(0.25), q(0.75))
    }

    #[test]
    fn iqr_flags_single_spike() {
        let mut xs: Vec<f64> = (1..=100).map(f64::from).collect();
        xs.push(1000.0);
        let mut s = xs.clone();
        s.sort_by(f64::total_cmp);
        let (q1, q3) = oracle_quartiles(&s);
        let expected: Vec<usize> = xs
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < q1 - 3.0 * (q3 - q1) || v > q3 + 3.0 * (q3 - q1))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(expected, vec![100]);
        assert_eq!(iqr_flags(&xs, 3.0).unwrap().indices(), expected);
    }

    #[test]
    fn iqr_symmetric_data_unflagged() {
        let xs = [4.0, 5.0, 5.0, 6.0, 4.5, 5.5, 5.0];
        assert!(iqr_flags(&xs, 1.5).unwrap().is_empty());
        assert_eq!(iqr_flags(&xs, 1.0).unwrap().indices(), vec![0, 3]);
        assert!(iqr_flags(&xs[..3], 1.0).is_err());
    }

    #[test]
    fn hampel_cases() {
        assert_eq!(
            hampel_flags(&[5.0, 5.0, 5.0, 5.0, 50.0], 3.0).unwrap().indices(),
            vec![4]
        );
        assert!(hampel_flags(&[2.0; 6], 3.0).unwrap().is_empty());

        let xs = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 10.0];
        // Hand calculation: sorted = 0,0,0,0,0,0,1,10 -> median 0; deviations
        // are the values themselves -> MAD = 0, so every nonzero value flags.
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let med = (s[3] + s[4]) / 2.0;
        let mut dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = (dev[3] + dev[4]) / 2.0;
        let expected: Vec<usize> = (0..xs.len())
            .filter(|&i| {
                let d = (xs[i] - med).abs();
                if mad == 0.0 {
                    d > 0.0
                } else {
                    d > 3.0 * mad
                }
            })
            .collect();
        assert_eq!(expected, vec![3, 7]);
        assert_eq!(hampel_flags(&xs, 3.0).unwrap().indices(), expected);
    }

    #[test]
    fn hampel_nonzero_mad() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 40.0];
        // median 3.5, |dev| = 2.5,1.5,.5,.5,1.5,36.5 -> MAD 1.5, threshold 4.5
        assert_eq!(hampel_flags(&xs, 3.0).unwrap().indices(), vec![5]);
    }

    #[test]
    fn median_correction() {
        let flags = OutlierFlags::from_indices([1], FlagSource::Iqr);
        assert_eq!(
            median_correct(&[1.0, 100.0, 3.0], &flags, 3).unwrap(),
            vec![1.0, 3.0, 3.0]
        );
        let none = OutlierFlags::default();
        assert_eq!(median_correct(&[1.0, 2.0], &none, 3).unwrap(), vec![1.0, 2.0]);
        let first = OutlierFlags::from_indices([0], FlagSource::Hampel);
        // window {x0, x1} -> lower median
        assert_eq!(
            median_correct(&[50.0, 2.0, 3.0], &first, 3).unwrap(),
            vec![2.0, 2.0, 3.0]
        );
        assert!(median_correct(&[1.0, 2.0, 3.0], &none, 4).is_err());
        assert!(median_correct(&[1.0, 2.0, 3.0], &none, 1).is_err());
    }

    #[test]
    fn pca_rank_one() {
        let v = [1.0, -2.0, 0.5];
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| v.iter().map(|x| x * (i as f64 - 7.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let pca = pca_fit(&x, 0.95).unwrap();
        assert_eq!(pca.k(), 1);
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let rec = pca.reconstruct(&pca.project(&x));
        for (a, b) in rec.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pca_isotropic_keeps_both() {
        let mut rng = crate::rng::seeded(11);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        // Closed-form eigenvalues of the 2×2 sample covariance.
        let c0 = x.column(0);
        let c1 = x.column(1);
        let (m0, m1) = (stats::mean(&c0), stats::mean(&c1));
        let n = 499.0;
        let a = c0.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / n;
        let c = c1.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / n;
        let b = c0.iter().zip(&c1).map(|(u, v)| (u - m0) * (v - m1)).sum::<f64>() / n;
        let disc = (((a - c) / 2.0).powi(2) + b * b).sqrt();
        let (l1, l2) = ((a + c) / 2.0 + disc, (a + c) / 2.0 - disc);
        let expected_k = if l1 / (l1 + l2) >= 0.95 { 1 } else { 2 };
        assert_eq!(expected_k, 2);
        let pca = pca_fit(&x, 0.95).unwrap();
        assert_eq!(pca.k(), expected_k);
        assert!((pca.explained_variance_ratio[0] - l1 / (l1 + l2)).abs() < 1e-10);
    }

    #[test]
    fn pca_invariants_and_zero_variance() {
        let mut rng = crate::rng::seeded(3);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|j| rng.random::<f64>() * (j + 1) as f64).collect())
            .collect();
        let pca = pca_fit(&Matrix::from_rows(&rows).unwrap(), 1.0).unwrap();
        let w = &pca.components;
        for a in 0..pca.k() {
            for b in 0..pca.k() {
                let dot: f64 = (0..4).map(|j| w.get(j, a) * w.get(j, b)).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
        assert!(pca
            .explained_variance_ratio
            .windows(2)
            .all(|p| p[0] >= p[1] && (0.0..=1.0).contains(&p[0])));

        let flat = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(pca_fit(&flat, 0.95).unwrap().k(), 0);
        assert!(pca_fit(&flat, 0.0).is_err());
    }

    /// Income-like series: steady drift with small bounded noise, plus 5
    /// spikes at 50× the median.
    pub(crate) fn spiked_series() -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        let mut rng = crate::rng::seeded(42);
        let clean: Vec<f64> = (0..600)
            .map(|i| 60_000.0 + 30.0 * i as f64 + 100.0 * rng.random::<f64>())
            .collect();
        let med = stats::median(&clean);
        let spikes = vec![57, 181, 299, 420, 555];
        let mut spiked = clean.clone();
        for &i in &spikes {
            spiked[i] = 50.0 * med;
        }
        (clean, spiked, spikes)
    }

    #[test]
    fn spikes_flagged_and_corrected() {
        let (clean, spiked, spikes) = spiked_series();
        let cfg = BcpHiConfig::default();
        let out = run_bcp_hi(&spiked, &cfg).unwrap();
        for i in &spikes {
            assert!(out.flags.contains(*i), "spike {i} missed");
        }
        let med = stats::median(&clean);
        let max = out.corrected.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max < 5.0 * med);

        let untouched = run_bcp_hi(&clean, &cfg).unwrap();
        assert!(untouched.flags.is_empty());
        assert_eq!(untouched.corrected, clean);
    }

    #[test]
    fn flags_are_per_segment_union() {
        let (_, spiked, _) = spiked_series();
        let cfg = BcpHiConfig::default();
        let out = run_bcp_hi(&spiked, &cfg).unwrap();
        let mut expected = OutlierFlags::default();
        for &(a, b) in &out.segments.segments {
            let seg = &spiked[a..b];
            let u = iqr_flags(seg, 3.0).unwrap().union(&hampel_flags(seg, 3.0).unwrap());
            for (i, s) in u.flags {
                expected.flags.insert(i + a, s);
            }
        }
        assert_eq!(out.flags, expected);
    }

    #[test]
    fn correction_is_local_and_idempotent() {
        let (_, spiked, _) = spiked_series();
        let cfg = BcpHiConfig::default();
        let once = run_bcp_hi(&spiked, &cfg).unwrap();
        for i in 0..spiked.len() {
            if !once.flags.contains(i) {
                assert_eq!(once.corrected[i].to_bits(), spiked[i].to_bits());
            }
        }
        let twice = run_bcp_hi(&once.corrected, &cfg).unwrap();
        assert_eq!(twice.corrected, once.corrected);
    }

    #[test]
    fn fitted_fences_apply_to_new_rows() {
        let (_, spiked, spikes) = spiked_series();
        let x = Matrix::from_columns(std::slice::from_ref(&spiked)).unwrap();
        let (corr, model, records) =
            OutlierModel::fit(&x, &[(0, "annual_inc".into())], &BcpHiConfig::default()).unwrap();
        assert!(records.len() >= spikes.len());
        assert_eq!(
            corr.column(0),
            run_bcp_hi(&spiked, &BcpHiConfig::default()).unwrap().corrected
        );
        let fresh = Matrix::from_columns(&[vec![60_000.0, 61_000.0, 3_000_000.0, 59_000.0, 60_500.0]]).unwrap();
        let (fixed, recs) = model.apply(&fresh).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].row_index, 2);
        assert!(fixed.get(2, 0) < 100_000.0);
        assert!(flags_csv(&recs).starts_with("column,row_index,source,original,corrected\n"));
    }

    proptest! {
        #[test]
        fn two_blocks_split_near_boundary(
            a in -100.0f64..100.0, gap in 0.5f64..50.0, n1 in 5usize..60, n2 in 5usize..60
        ) {
            let mut xs = vec![a; n1];
            xs.extend(vec![a + gap; n2]);
            let seg = detect_changepoints(&xs, 3, 0.5 * ((n1 + n2) as f64).ln()).unwrap();
            prop_assert!(seg.change_points.iter().any(|&c| (c as i64 - n1 as i64).abs() <= 1));
        }

        #[test]
        fn segments_tile(xs in proptest::collection::vec(-5.0f64..5.0, 4..120), pen in 0.0f64..5.0) {
            let seg = detect_changepoints(&xs, 6, pen).unwrap();
            prop_assert!(seg.change_points.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(seg.segments.first().unwrap().0, 0);
            prop_assert_eq!(seg.segments.last().unwrap().1, xs.len());
            prop_assert!(seg.segments.windows(2).all(|w| w[0].1 == w[1].0));
        }

        #[test]
        fn iqr_monotone_in_k(xs in proptest::collection::vec(-50.0f64..50.0, 4..80)) {
            let loose = iqr_flags(&xs, 1.5).unwrap();
            let tight = iqr_flags(&xs, 3.0).unwrap();
            prop_assert!(tight.flags.keys().all(|i| loose.contains(*i)));
        }

        #[test]
        fn flags_follow_values(xs in proptest::collection::vec(-20i32..20, 4..50), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let mut perm: Vec<usize> = (0..xs.len()).collect();
            perm.shuffle(&mut crate::rng::seeded(seed));
            let ys: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
            for k in [1.5, 3.0] {
                for f in [iqr_flags as fn(&[f64], f64) -> Result<OutlierFlags>, hampel_flags] {
                    let fx = f(&xs, k).unwrap();
                    let fy = f(&ys, k).unwrap();
                    for (j, &i) in perm.iter().enumerate() {
                        prop_assert_eq!(fx.contains(i), fy.contains(j));
                    }
                }
            }
        }
    }
}
