//! Convex combinations of base-model probabilities: greedy and softmax
//! weighting, voting and averaging baselines, and stacking meta-features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::{Error, Result};
use crate::learners::{self, ClassifierSpec, FitOptions};
use crate::matrix::Matrix;
use crate::par;
use crate::rng;

/// Per-model class-1 probabilities on a shared set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    pub names: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    pub y: Vec<u8>,
}

impl PredictionBundle {
    pub fn new(names: Vec<String>, probs: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("prediction bundle has no models".into()));
        }
        if names.len() != probs.len() {
            return Err(Error::DimensionMismatch {
                expected: probs.len(),
                found: names.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::Empty("prediction bundle has no rows".into()));
        }
        for p in &probs {
            if p.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    expected: y.len(),
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("probabilities must be finite and in [0, 1]"));
            }
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(PredictionBundle { names, probs, y })
    }

    pub fn models(&self) -> usize {
        self.probs.len()
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Greedy,
    Softmax,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        WeightVector {
            weights: vec![1.0 / n as f64; n],
            provenance: Provenance::Uniform,
        }
    }

    pub fn is_convex(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && (self.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }

    /// `model_name,weight` rows.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("model_name,weight\n");
        for (n, w) in names.iter().zip(&self.weights) {
            s.push_str(&format!("{n},{w}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<(Vec<String>, WeightVector)> {
        let mut names = Vec::new();
        let mut weights = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let (n, w) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::Artifact(format!("bad weight row {line:?}")))?;
            names.push(n.to_string());
            weights.push(
                w.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Artifact(format!("bad weight {w:?}")))?,
            );
        }
        let wv = WeightVector {
            weights,
            provenance: Provenance::Greedy,
        };
        if !wv.is_convex() {
            return Err(Error::Artifact("weights are not a convex combination".into()));
        }
        Ok((names, wv))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    pub lambda: f64,
    pub delta: f64,
    pub max_passes: usize,
    pub tolerance: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            lambda: 1e-3,
            delta: 0.05,
            max_passes: 200,
            tolerance: 1e-6,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("greedy.lambda must be a finite value >= 0".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config("greedy.delta must lie in (0, 1]".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("greedy.tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Brier term of the weighted combination plus `lambda * ||w||^2`.
pub fn regularised_loss(bundle: &PredictionBundle, w: &[f64], lambda: f64) -> f64 {
    let m = bundle.rows();
    let mut sq = 0.0;
    for j in 0..m {
        let p: f64 = w.iter().zip(&bundle.probs).map(|(wi, f)| wi * f[j]).sum();
        let e = p - f64::from(bundle.y[j]);
        sq += e * e;
    }
    sq / m as f64 + lambda * w.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub weights: WeightVector,
    pub loss: f64,
    pub initial_loss: f64,
    /// Loss after every accepted move.
    pub accepted: Vec<f64>,
    pub passes: usize,
}

fn normalise(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
}

pub fn greedy_weights(bundle: &PredictionBundle, config: &GreedyConfig) -> Result<GreedyOutcome> {
    config.validate()?;
    let n = bundle.models();
    let mut w = vec![1.0 / n as f64; n];
    let initial_loss = regularised_loss(bundle, &w, config.lambda);
    let mut loss = initial_loss;
    let mut accepted = Vec::new();
    let mut passes = 0;
    while passes < config.max_passes {
        passes += 1;
        let start = loss;
        for i in 0..n {
            let mut cand = w.clone();
            cand[i] += config.delta;
            normalise(&mut cand);
            let l = regularised_loss(bundle, &cand, config.lambda);
            if l < loss {
                w = cand;
                loss = l;
                accepted.push(l);
            }
        }
        if start - loss < config.tolerance {
            break;
        }
    }
    Ok(GreedyOutcome {
        weights: WeightVector {
            weights: w,
            provenance: Provenance::Greedy,
        },
        loss,
        initial_loss,
        accepted,
        passes,
    })
}

/// Max-shifted softmax of performance scores.
pub fn softmax_weights(scores: &[f64]) -> Result<WeightVector> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("softmax scores".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    normalise(&mut w);
    Ok(WeightVector {
        weights: w,
        provenance: Provenance::Softmax,
    })
}

pub fn weighted_average(probs: &[Vec<f64>], w: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            found: w.len(),
        });
    }
    let m = probs.first().map_or(0, Vec::len);
    if let Some(bad) = probs.iter().find(|p| p.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: bad.len(),
        });
    }
    Ok((0..m)
        .map(|j| {
            let v: f64 = probs.iter().zip(w).map(|(p, wi)| wi * p[j]).sum();
            v.clamp(0.0, 1.0)
        })
        .collect())
}

pub fn plain_average(probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::Empty("no models to average".into()));
    }
    weighted_average(probs, &vec![1.0 / probs.len() as f64; probs.len()])
}

/// Mode of the hard labels per row; ties go to class 1.
pub fn majority_vote(labels: &[Vec<u8>]) -> Result<Vec<u8>> {
    Ok(vote_fraction(labels)?.into_iter().map(|f| u8::from(f >= 0.5)).collect())
}

/// Share of models voting class 1 per row.
pub fn vote_fraction(labels: &[Vec<u8>]) -> Result<Vec<f64>> {
    let first = labels.first().ok_or_else(|| Error::Empty("no voters".into()))?;
    let m = first.len();
    if let Some(bad) = labels.iter().find(|l| l.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: bad.len(),
        });
    }
    let n = labels.len() as f64;
    Ok((0..m)
        .map(|j| labels.iter().filter(|l| l[j] == 1).count() as f64 / n)
        .collect())
}

/// Reweights samples by `exp(-alpha * margin)` and renormalises; margins use ±1 labels.
pub fn boosting_weight_update(sample_weights: &[f64], alpha: f64, margins: &[f64]) -> Result<Vec<f64>> {
    if sample_weights.len() != margins.len() {
        return Err(Error::DimensionMismatch {
            expected: sample_weights.len(),
            found: margins.len(),
        });
    }
    let mut w: Vec<f64> = sample_weights
        .iter()
        .zip(margins)
        .map(|(w, m)| w * (-alpha * m).exp())
        .collect();
    let s: f64 = w.iter().sum();
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::NonFinite("boosting weights".into()));
    }
    for v in &mut w {
        *v /= s;
    }
    Ok(w)
}

/// Columns `[f_1 .. f_n, plain_average, weighted_average]`.
pub fn stack_meta_features(base: &[Vec<f64>], plain: &[f64], weighted: &[f64]) -> Result<Matrix> {
    let m = plain.len();
    if weighted.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: weighted.len(),
        });
    }
    let mut columns: Vec<Vec<f64>> = base.to_vec();
    columns.push(plain.to_vec());
    columns.push(weighted.to_vec());
    if let Some(bad) = columns.iter().find(|c| c.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: bad.len(),
        });
    }
    Matrix::from_columns(&columns)
}

pub fn meta_feature_names(models: &[String]) -> Vec<String> {
    models
        .iter()
        .cloned()
        .chain(["plain_average".to_string(), "weighted_average".to_string()])
        .collect()
}

/// Out-of-fold base predictions for the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct OutOfFold {
    /// One vector per spec, indexed by training row.
    pub probs: Vec<Vec<f64>>,
    /// Fold that held each row out.
    pub fold_of: Vec<usize>,
    /// Rows each fold's models were trained on.
    pub train_rows: Vec<Vec<usize>>,
}

/// Stratified folds that keep every row of a group together.
///
/// A group's label is taken from its first row.
pub fn grouped_folds(y: &[u8], groups: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if groups.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: groups.len(),
        });
    }
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    let mut group_y = Vec::new();
    for (&g, &label) in groups.iter().zip(y) {
        ids.entry(g).or_insert_with(|| {
            group_y.push(label);
            group_y.len() - 1
        });
    }
    let group_folds = dataset::stratified_folds(&group_y, folds, seed)?;
    let mut fold_of_group = vec![0; group_y.len()];
    for (f, members) in group_folds.iter().enumerate() {
        for &g in members {
            fold_of_group[g] = f;
        }
    }
    let mut held = vec![Vec::new(); group_folds.len()];
    for (i, g) in groups.iter().enumerate() {
        held[fold_of_group[ids[g]]].push(i);
    }
    Ok(held)
}

/// Fits every spec on each fold's complement and predicts the held-out rows.
pub fn out_of_fold(
    specs: &[ClassifierSpec],
    x: &Matrix,
    y: &[u8],
    held: &[Vec<usize>],
    seed: u64,
    options: &FitOptions,
) -> Result<OutOfFold> {
    let n = y.len();
    if held.iter().map(Vec::len).sum::<usize>() != n {
        return Err(Error::invalid("folds must partition the rows"));
    }
    let mut fold_of = vec![0; n];
    for (f, rows) in held.iter().enumerate() {
        for &r in rows {
            fold_of[r] = f;
        }
    }
    let train_rows: Vec<Vec<usize>> = held.iter().map(|h| dataset::complement(n, h)).collect();
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..held.len()).map(move |f| (s, f)))
        .collect();
    let results = par::map_slice(&jobs, |&(s, f)| -> Result<Vec<f64>> {
        let tr = &train_rows[f];
        let ty: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
        let model = learners::fit_with(
            &specs[s],
            &x.select_rows(tr),
            &ty,
            rng::derive_seed(seed, &format!("oof{f}")),
            options,
        )?;
        model.predict_proba(&x.select_rows(&held[f]))
    });
    let mut probs = vec![vec![0.0; n]; specs.len()];
    for (&(s, f), r) in jobs.iter().zip(results) {
        for (&row, p) in held[f].iter().zip(r?) {
            probs[s][row] = p;
        }
    }
    Ok(OutOfFold {
        probs,
        fold_of,
        train_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ModelKind;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn bundle(probs: Vec<Vec<f64>>, y: Vec<u8>) -> PredictionBundle {
        let names = (0..probs.len()).map(|i| format!("m{i}")).collect();
        PredictionBundle::new(names, probs, y).unwrap()
    }

    fn random_bundle(seed: u64, n: usize, m: usize) -> PredictionBundle {
        let mut r = rng::seeded(seed);
        let y: Vec<u8> = (0..m).map(|_| u8::from(r.random::<f64>() < 0.4)).collect();
        let probs = (0..n)
            .map(|i| {
                let skill = 0.15 * i as f64;
                y.iter()
                    .map(|&t| {
                        let noise: f64 = r.random();
                        (skill * f64::from(t) + (1.0 - skill) * noise).clamp(0.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        bundle(probs, y)
    }

    /// Brute-force minimum over a regular grid on the simplex.
    fn grid_minimum(b: &PredictionBundle, lambda: f64, step: usize) -> f64 {
        fn rec(b: &PredictionBundle, lambda: f64, step: usize, left: usize, w: &mut Vec<f64>, best: &mut f64) {
            if w.len() + 1 == b.models() {
                w.push(left as f64 / step as f64);
                *best = best.min(regularised_loss(b, w, lambda));
                w.pop();
                return;
            }
            for k in 0..=left {
                w.push(k as f64 / step as f64);
                rec(b, lambda, step, left - k, w, best);
                w.pop();
            }
        }
        let mut best = f64::INFINITY;
        rec(b, lambda, step, step, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn loss_fixtures() {
        let b = bundle(vec![vec![1.0, 0.0, 1.0]], vec![1, 0, 1]);
        assert_eq!(regularised_loss(&b, &[1.0], 0.0), 0.0);
        let half = bundle(vec![vec![0.5; 4]], vec![1, 0, 1, 0]);
        assert_eq!(regularised_loss(&half, &[1.0], 0.0), 0.25);
        let p = vec![0.2, 0.7, 0.9, 0.4];
        let y = vec![0, 1, 1, 1];
        let single = regularised_loss(&bundle(vec![p.clone()], y.clone()), &[1.0], 0.0);
        let triple = bundle(vec![p.clone(), p.clone(), p], y);
        let l = regularised_loss(&triple, &[1.0 / 3.0; 3], 0.3);
        assert!((l - (single + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn greedy_fixtures() {
        let one = random_bundle(1, 1, 50);
        assert_eq!(
            greedy_weights(&one, &GreedyConfig::default()).unwrap().weights.weights,
            vec![1.0]
        );

        let p = vec![0.3, 0.6, 0.8, 0.1];
        let same = bundle(vec![p.clone(), p.clone(), p], vec![0, 1, 1, 0]);
        let out = greedy_weights(&same, &GreedyConfig::default()).unwrap();
        assert_eq!(out.weights.weights, vec![1.0 / 3.0; 3]);

        let y: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let perfect: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let ab = bundle(vec![perfect, vec![0.5; 100]], y);
        let cfg = GreedyConfig {
            lambda: 0.0,
            ..GreedyConfig::default()
        };
        let out = greedy_weights(&ab, &cfg).unwrap();
        assert!(out.weights.weights[0] >= 0.95);
        assert!(out.loss <= grid_minimum(&ab, 0.0, 100) + 1e-3);

        let heavy = GreedyConfig {
            lambda: 1e3,
            ..GreedyConfig::default()
        };
        let b = random_bundle(5, 4, 200);
        let w = greedy_weights(&b, &heavy).unwrap().weights.weights;
        assert!(w.iter().all(|v| (v - 0.25).abs() < 0.05));
    }

    #[test]
    fn greedy_matches_grid_on_random_bundles() {
        for seed in 0..10 {
            let b = random_bundle(seed, 2 + (seed as usize % 3), 200);
            let cfg = GreedyConfig::default();
            let out = greedy_weights(&b, &cfg).unwrap();
            let grid = grid_minimum(&b, cfg.lambda, 100);
            assert!(out.loss <= grid + 1e-3, "seed {seed}: {} vs {grid}", out.loss);
        }
    }

    #[test]
    fn softmax_fixtures() {
        assert_eq!(softmax_weights(&[0.3; 4]).unwrap().weights, vec![0.25; 4]);
        let w = softmax_weights(&[2f64.ln(), 0.0]).unwrap().weights;
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let big = softmax_weights(&[1000.0, 999.0]).unwrap();
        assert!(big.is_convex());
        assert!(softmax_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn averaging_and_voting_fixtures() {
        let w = weighted_average(&[vec![0.2], vec![0.8]], &[0.25, 0.75]).unwrap();
        assert!((w[0] - 0.65).abs() < 1e-15);
        assert_eq!(
            weighted_average(&[vec![0.1, 0.9], vec![0.4, 0.2]], &[0.0, 1.0]).unwrap(),
            vec![0.4, 0.2]
        );
        assert!(weighted_average(&[vec![0.1]], &[0.5, 0.5]).is_err());
        let a = plain_average(&[vec![0.2], vec![0.4], vec![0.9]]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15);
        assert_eq!(
            majority_vote(&[vec![1, 0, 1], vec![1, 0, 0], vec![1, 0, 0]]).unwrap(),
            vec![1, 0, 0]
        );
        assert_eq!(majority_vote(&[vec![1, 0], vec![0, 1]]).unwrap(), vec![1, 1]);
    }

    #[test]
    fn boosting_update_fixtures() {
        let w0 = vec![0.2, 0.3, 0.5];
        assert_eq!(boosting_weight_update(&w0, 0.0, &[1.0, -1.0, 0.5]).unwrap(), w0);
        let w = boosting_weight_update(&[1.0 / 3.0; 3], 0.5, &[1.0, -1.0, 1.0]).unwrap();
        let e = (-0.5f64).exp();
        let z = 2.0 * e + 0.5f64.exp();
        let expect = [e / z, 0.5f64.exp() / z, e / z];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(w[0] < 1.0 / 3.0);
    }

    #[test]
    fn meta_features_layout() {
        let base = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let plain = plain_average(&base).unwrap();
        let weighted = weighted_average(&base, &[0.5, 0.5]).unwrap();
        let m = stack_meta_features(&base, &plain, &weighted).unwrap();
        assert_eq!(m.cols(), 4);
        assert_eq!(m.row(1), &[0.2, 0.4, 0.30000000000000004, 0.30000000000000004]);
        let same = stack_meta_features(&[vec![0.3; 3]], &[0.3; 3], &[0.3; 3]).unwrap();
        assert!(same.iter_rows().all(|r| r == [0.3; 3]));
    }

    #[test]
    fn out_of_fold_never_predicts_training_rows() {
        let mut r = rng::seeded(8);
        let rows: Vec<Vec<f64>> = (0..90).map(|_| vec![r.random(), r.random()]).collect();
        let y: Vec<u8> = rows.iter().map(|v| u8::from(v[0] > 0.5)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let specs = [
            ClassifierSpec::reference(ModelKind::Lr),
            ClassifierSpec::reference(ModelKind::Knn),
        ];
        let held = dataset::stratified_folds(&y, 3, 42).unwrap();
        let oof = out_of_fold(&specs, &x, &y, &held, 42, &FitOptions::default()).unwrap();
        for (row, &f) in oof.fold_of.iter().enumerate() {
            assert!(!oof.train_rows[f].contains(&row));
        }
        assert_eq!(oof.probs.len(), 2);
        assert!(oof.probs.iter().all(|p| p.len() == 90));
    }

    #[test]
    fn grouped_folds_keep_groups_together() {
        let groups: Vec<usize> = (0..60).map(|i| i % 25).collect();
        let y: Vec<u8> = groups.iter().map(|&g| u8::from(g % 5 != 0)).collect();
        let held = grouped_folds(&y, &groups, 4, 3).unwrap();
        assert_eq!(held.iter().map(Vec::len).sum::<usize>(), 60);
        for fold in &held {
            for &i in fold {
                for (j, g) in groups.iter().enumerate() {
                    if *g == groups[i] {
                        assert!(fold.contains(&j));
                    }
                }
            }
            assert!(fold.iter().any(|&i| y[i] == 0));
        }
        assert_eq!(held, grouped_folds(&y, &groups, 4, 3).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn greedy_is_convex_monotone_and_dominates_uniform(seed in any::<u64>(), n in 1usize..5, lambda in 0.0f64..0.5) {
            let b = random_bundle(seed, n, 60);
            let cfg = GreedyConfig { lambda, ..GreedyConfig::default() };
            let out = greedy_weights(&b, &cfg).unwrap();
            prop_assert!(out.weights.is_convex());
            prop_assert!(out.loss <= regularised_loss(&b, &vec![1.0 / n as f64; n], lambda));
            let mut prev = out.initial_loss;
            for &l in &out.accepted {
                prop_assert!(l < prev);
                prev = l;
            }
            let avg = weighted_average(&b.probs, &out.weights.weights).unwrap();
            for j in 0..b.rows() {
                let lo = b.probs.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                let hi = b.probs.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(avg[j] >= lo - 1e-12 && avg[j] <= hi + 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariant(s in proptest::collection::vec(-20.0f64..20.0, 1..6), c in -50.0f64..50.0) {
            let a = softmax_weights(&s).unwrap().weights;
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let b = softmax_weights(&shifted).unwrap().weights;
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
