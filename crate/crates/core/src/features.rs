//! Tree-based feature importances, recursive feature elimination, the
//! score-versus-feature-count curve and Pearson correlations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::{Error, Result};
use crate::learners::ert::{self, ErtParams, Forest};
use crate::learners::gb::{self, Booster, GbParams};
use crate::learners::tree::Tree;
use crate::matrix::Matrix;
use crate::{par, rng, stats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Gain,
    SplitAvg,
    Impurity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub scores: Vec<f64>,
    pub method: ImportanceMethod,
}

impl ImportanceVector {
    /// Scores rescaled to sum to one; all-zero vectors stay zero.
    pub fn normalized(&self) -> ImportanceVector {
        let total: f64 = self.scores.iter().sum();
        let scores = if total > 0.0 {
            self.scores.iter().map(|s| s / total).collect()
        } else {
            self.scores.clone()
        };
        ImportanceVector {
            scores,
            method: self.method,
        }
    }
}

fn gain_totals(trees: &[Tree], d: usize) -> (Vec<f64>, Vec<usize>) {
    let mut total = vec![0.0; d];
    let mut count = vec![0; d];
    for s in trees.iter().flat_map(Tree::splits) {
        total[s.feature] += s.gain;
        count[s.feature] += 1;
    }
    (total, count)
}

/// Summed split gain per feature, normalised by the total gain.
pub fn importance_gain(model: &Booster, d: usize) -> ImportanceVector {
    let (total, _) = gain_totals(&model.trees, d);
    if total.iter().all(|&g| g == 0.0) {
        log::warn!("boosted model has no splits; gain importance is all zero");
    }
    ImportanceVector {
        scores: total,
        method: ImportanceMethod::Gain,
    }
    .normalized()
}

/// Mean gain over the splits that use each feature.
pub fn importance_split_avg(model: &Booster, d: usize) -> ImportanceVector {
    let (total, count) = gain_totals(&model.trees, d);
    ImportanceVector {
        scores: total
            .iter()
            .zip(&count)
            .map(|(&g, &c)| if c == 0 { 0.0 } else { g / c as f64 })
            .collect(),
        method: ImportanceMethod::SplitAvg,
    }
}

/// Sample-weighted impurity decrease per feature, averaged over trees.
pub fn importance_impurity(model: &Forest, d: usize) -> ImportanceVector {
    let mut scores = vec![0.0; d];
    for tree in &model.trees {
        let root = tree.root_samples() as f64;
        for s in tree.splits() {
            scores[s.feature] += s.samples as f64 / root * s.gain;
        }
    }
    let t = model.trees.len().max(1) as f64;
    ImportanceVector {
        scores: scores.into_iter().map(|s| s / t).collect(),
        method: ImportanceMethod::Impurity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Gb,
    Ert,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Gb => "gb",
            EstimatorKind::Ert => "ert",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gb" => Ok(EstimatorKind::Gb),
            "ert" => Ok(EstimatorKind::Ert),
            other => Err(Error::invalid(format!(
                "unknown estimator {other:?} (expected gb or ert)"
            ))),
        }
    }
}

/// Tree ensemble used to score features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_split: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kind: EstimatorKind::Gb,
            n_estimators: 150,
            max_depth: 5,
            learning_rate: 0.05,
            min_samples_split: 4,
        }
    }
}

impl EstimatorConfig {
    pub fn ert() -> Self {
        EstimatorConfig {
            kind: EstimatorKind::Ert,
            n_estimators: 120,
            max_depth: 15,
            learning_rate: 0.05,
            min_samples_split: 4,
        }
    }
}

enum Fitted {
    Gb(Booster),
    Ert(Forest),
}

impl Fitted {
    fn importance(&self, d: usize) -> ImportanceVector {
        match self {
            Fitted::Gb(m) => importance_gain(m, d),
            Fitted::Ert(m) => importance_impurity(m, d),
        }
    }

    fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        match self {
            Fitted::Gb(m) => m.predict_proba(x),
            Fitted::Ert(m) => m.predict_proba(x),
        }
    }
}

fn fit_estimator(config: &EstimatorConfig, x: &Matrix, y: &[u8], seed: u64) -> Result<Fitted> {
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegenerateLabels(
            "feature-scoring refit needs both classes".into(),
        ));
    }
    Ok(match config.kind {
        EstimatorKind::Gb => Fitted::Gb(gb::fit(
            x,
            y,
            GbParams::new(config.n_estimators, config.max_depth, config.learning_rate),
        )),
        EstimatorKind::Ert => Fitted::Ert(ert::fit(
            x,
            y,
            ErtParams {
                n_estimators: config.n_estimators,
                max_depth: config.max_depth,
                min_samples_split: config.min_samples_split,
                max_features: ((x.cols() as f64).sqrt() as usize).max(1),
            },
            seed,
        )),
    })
}

/// Importance of every column under one fit of the estimator.
pub fn estimator_importance(config: &EstimatorConfig, x: &Matrix, y: &[u8], seed: u64) -> Result<ImportanceVector> {
    Ok(fit_estimator(config, x, y, seed)?.importance(x.cols()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<String>,
    /// Features in the order they were dropped, followed by the survivors
    /// from least to most important in the final fit.
    pub elimination_order: Vec<String>,
    pub cv_scores: BTreeMap<usize, f64>,
}

/// Drops the least important feature per refit until `k_target` remain.
/// Equal importances drop the lexicographically last name.
pub fn rfe(
    x: &Matrix,
    y: &[u8],
    names: &[String],
    config: &EstimatorConfig,
    k_target: usize,
    seed: u64,
) -> Result<SelectionResult> {
    if names.len() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            found: names.len(),
        });
    }
    if k_target == 0 || k_target > x.cols() {
        return Err(Error::invalid(format!(
            "k_target must lie in [1, {}], got {k_target}",
            x.cols()
        )));
    }
    let mut active: Vec<usize> = (0..x.cols()).collect();
    let mut order = Vec::with_capacity(x.cols());
    for step in 0.. {
        let seed = rng::derive_seed(seed, &format!("rfe{step}"));
        let imp = fit_estimator(config, &x.select_columns(&active), y, seed)?
            .importance(active.len())
            .scores;
        // Least important first; ties put the lexicographically last name first.
        let mut ranked: Vec<usize> = (0..active.len()).collect();
        ranked.sort_by(|&a, &b| {
            imp[a]
                .total_cmp(&imp[b])
                .then_with(|| names[active[b]].cmp(&names[active[a]]))
        });
        if active.len() == k_target {
            order.extend(ranked.iter().map(|&i| names[active[i]].clone()));
            return Ok(SelectionResult {
                selected: ranked.iter().rev().map(|&i| names[active[i]].clone()).collect(),
                elimination_order: order,
                cv_scores: BTreeMap::new(),
            });
        }
        let drop = ranked[0];
        log::debug!("rfe: dropping {} ({} left)", names[active[drop]], active.len() - 1);
        order.push(names[active[drop]].clone());
        active.remove(drop);
    }
    unreachable!("the loop returns once k_target features remain")
}

/// Mean stratified-CV accuracy per feature count, taking the top `k`
/// features of `ranking` (most important first).
pub fn cv_score_for_ranking(
    x: &Matrix,
    y: &[u8],
    names: &[String],
    ranking: &[String],
    config: &EstimatorConfig,
    k_range: &[usize],
    folds: usize,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    if folds < 2 {
        return Err(Error::invalid("cv_score_vs_k needs at least 2 folds"));
    }
    let held = dataset::stratified_folds(y, folds, seed)?;
    let column_of = |name: &String| names.iter().position(|n| n == name);
    let mut jobs = Vec::new();
    for &k in k_range {
        if k == 0 || k > ranking.len() {
            return Err(Error::invalid(format!("k = {k} outside [1, {}]", ranking.len())));
        }
        for f in 0..held.len() {
            jobs.push((k, f));
        }
    }
    let cols: Vec<usize> = ranking
        .iter()
        .map(|n| column_of(n).ok_or_else(|| Error::invalid(format!("unknown feature {n:?}"))))
        .collect::<Result<_>>()?;
    let accs = par::map_slice(&jobs, |&(k, f)| -> Result<f64> {
        let xs = x.select_columns(&cols[..k]);
        let train = dataset::complement(y.len(), &held[f]);
        let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let m = fit_estimator(
            config,
            &xs.select_rows(&train),
            &ty,
            rng::derive_seed(seed, &format!("k{k}f{f}")),
        )?;
        let p = m.predict_proba(&xs.select_rows(&held[f]));
        let hits = held[f]
            .iter()
            .zip(p)
            .filter(|&(&i, pi)| u8::from(pi >= 0.5) == y[i])
            .count();
        Ok(hits as f64 / held[f].len() as f64)
    });
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&(k, _), a) in jobs.iter().zip(accs) {
        let e = sums.entry(k).or_insert((0.0, 0));
        e.0 += a?;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect())
}

/// Full elimination path, then the CV curve over `k_range`.
pub fn cv_score_vs_k(
    x: &Matrix,
    y: &[u8],
    names: &[String],
    config: &EstimatorConfig,
    k_range: &[usize],
    folds: usize,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    let path = rfe(x, y, names, config, 1, seed)?;
    let ranking: Vec<String> = path.elimination_order.iter().rev().cloned().collect();
    cv_score_for_ranking(x, y, names, &ranking, config, k_range, folds, seed)
}

/// `k,score` rows.
pub fn cv_scores_csv(scores: &BTreeMap<usize, f64>) -> String {
    let mut s = String::from("k,score\n");
    for (k, v) in scores {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

/// Sums per-estimator ranks (1 = most important, ties share the average
/// rank) and orders features by the total, ties broken by name.
pub fn rank_sum(names: &[String], importances: &[ImportanceVector]) -> Result<Vec<String>> {
    let mut total = vec![0.0; names.len()];
    for imp in importances {
        if imp.scores.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                found: imp.scores.len(),
            });
        }
        let neg: Vec<f64> = imp.scores.iter().map(|s| -s).collect();
        for (t, r) in total.iter_mut().zip(stats::average_ranks(&neg)) {
            *t += r;
        }
    }
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by(|&a, &b| total[a].total_cmp(&total[b]).then_with(|| names[a].cmp(&names[b])));
    Ok(idx.into_iter().map(|i| names[i].clone()).collect())
}

/// Pairwise Pearson correlations; constant columns correlate 0 with everything else.
pub fn pearson_matrix(x: &Matrix) -> Matrix {
    let d = x.cols();
    let n = x.rows() as f64;
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
    let centred: Vec<(Vec<f64>, f64)> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n;
            let v: Vec<f64> = c.iter().map(|x| x - m).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            (v, norm)
        })
        .collect();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        out.set(i, i, 1.0);
        if centred[i].1 == 0.0 {
            log::warn!("column {i} is constant; its correlations are set to 0");
        }
        for j in i + 1..d {
            let (a, na) = &centred[i];
            let (b, nb) = &centred[j];
            let r = if *na == 0.0 || *nb == 0.0 {
                0.0
            } else {
                (a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
            };
            out.set(i, j, r);
            out.set(j, i, r);
        }
    }
    out
}
