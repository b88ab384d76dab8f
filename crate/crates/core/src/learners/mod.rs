//! The base-model pool behind one probabilistic classifier interface.

pub mod ert;
pub mod gb;
pub mod knn;
pub mod lr;
pub mod mlp;
pub mod optim;
pub mod svm;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pso::{DimKind, Dimension, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gb,
    Mlp,
    Svm,
    Knn,
    Lr,
    Ert,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Gb,
        ModelKind::Mlp,
        ModelKind::Svm,
        ModelKind::Knn,
        ModelKind::Lr,
        ModelKind::Ert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gb => "gb",
            ModelKind::Mlp => "mlp",
            ModelKind::Svm => "svm",
            ModelKind::Knn => "knn",
            ModelKind::Lr => "lr",
            ModelKind::Ert => "ert",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Gb => "GradientBoosting",
            ModelKind::Mlp => "MLP",
            ModelKind::Svm => "SVM",
            ModelKind::Knn => "KNN",
            ModelKind::Lr => "LogisticRegression",
            ModelKind::Ert => "ExtraTrees",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s:?}")))
    }
}

/// Hyperparameter box for each kind.
pub fn search_space(kind: ModelKind) -> SearchSpace {
    use Dimension as D;
    let dims = match kind {
        ModelKind::Gb => vec![
            D::integer("n_estimators", 50.0, 200.0),
            D::integer("max_depth", 3.0, 10.0),
            D::real("learning_rate", 0.01, 0.1),
        ],
        ModelKind::Mlp => vec![
            D::integer("hidden_layer_sizes", 50.0, 200.0),
            D::real("alpha", 0.0001, 0.01),
        ],
        ModelKind::Svm => vec![D::real("C", 0.1, 10.0), D::real("gamma", 0.001, 0.1)],
        ModelKind::Knn => vec![D::integer("n_neighbors", 3.0, 20.0)],
        ModelKind::Lr => vec![D::real("C", 0.1, 10.0)],
        ModelKind::Ert => vec![
            D::integer("n_estimators", 50.0, 200.0),
            D::integer("max_depth", 10.0, 20.0),
            D::integer("min_samples_split", 2.0, 10.0),
        ],
    };
    SearchSpace { dimensions: dims }
}

/// Hyperparameter values reported as optimal for each kind.
pub fn reference_values(kind: ModelKind) -> Vec<f64> {
    match kind {
        ModelKind::Gb => vec![150.0, 5.0, 0.05],
        ModelKind::Mlp => vec![150.0, 0.005],
        ModelKind::Svm => vec![3.0, 0.05],
        ModelKind::Knn => vec![10.0],
        ModelKind::Lr => vec![1.5],
        ModelKind::Ert => vec![120.0, 15.0, 4.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ModelKind,
    pub params: BTreeMap<String, f64>,
}

impl ClassifierSpec {
    pub fn new(kind: ModelKind, values: &[f64]) -> Result<Self> {
        let space = search_space(kind);
        if values.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                found: values.len(),
            });
        }
        let spec = ClassifierSpec {
            kind,
            params: space
                .dimensions
                .iter()
                .zip(values)
                .map(|(d, &v)| (d.name.clone(), v))
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn reference(kind: ModelKind) -> Self {
        Self::new(kind, &reference_values(kind)).expect("reference values lie in the search space")
    }

    pub fn midpoint(kind: ModelKind) -> Self {
        Self::new(kind, &search_space(kind).midpoint()).expect("midpoint lies in the search space")
    }

    /// Decodes a swarm position (rounding integer dimensions).
    pub fn from_position(kind: ModelKind, space: &SearchSpace, position: &[f64]) -> Result<Self> {
        let decoded = space.decode(position);
        let reference = search_space(kind);
        let mut values = Vec::with_capacity(reference.len());
        for d in &reference.dimensions {
            let i = space
                .dimensions
                .iter()
                .position(|s| s.name == d.name)
                .ok_or_else(|| Error::Config(format!("search space lacks {}", d.name)))?;
            values.push(decoded[i]);
        }
        Self::new(kind, &values)
    }

    pub fn validate(&self) -> Result<()> {
        let space = search_space(self.kind);
        if self.params.len() != space.len() {
            return Err(Error::invalid(format!(
                "{} expects {} hyperparameters, got {}",
                self.kind,
                space.len(),
                self.params.len()
            )));
        }
        for d in &space.dimensions {
            let v = *self
                .params
                .get(&d.name)
                .ok_or_else(|| Error::invalid(format!("{} is missing {}", self.kind, d.name)))?;
            if !d.contains(v) || (d.kind == DimKind::Integer && v.fract() != 0.0) {
                return Err(Error::OutOfBounds {
                    name: d.name.clone(),
                    value: v,
                    lower: d.lower,
                    upper: d.upper,
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> f64 {
        self.params[name]
    }

    fn int(&self, name: &str) -> usize {
        self.get(name) as usize
    }

    /// `key=value` lines, `kind` first.
    pub fn to_kv(&self) -> String {
        let mut s = format!("kind={}\n", self.kind);
        for (k, v) in &self.params {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut params = BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "kind" {
                kind = Some(v.parse::<ModelKind>()?);
            } else {
                let x: f64 = v
                    .parse()
                    .map_err(|_| Error::Config(format!("{k}: not a number: {v:?}")))?;
                params.insert(k.to_string(), x);
            }
        }
        let spec = ClassifierSpec {
            kind: kind.ok_or_else(|| Error::Config("spec lacks kind".into()))?,
            params,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Per-feature affine standardisation; zero-variance features keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply<'a>(&'a self, row: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            let row: Vec<f64> = self.apply(x.row(i)).collect();
            out.row_mut(i).copy_from_slice(&row);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "lowercase")]
pub enum ModelState {
    Gb(gb::Booster),
    Mlp(mlp::MlpModel),
    Svm(svm::SvmModel),
    Knn(knn::KnnModel),
    Lr(lr::LogisticModel),
    Ert(ert::Forest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ClassifierSpec,
    pub seed: u64,
    pub rows: usize,
    pub features: usize,
    pub state: ModelState,
}

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Artifact {
    format_version: u32,
    model: TrainedModel,
}

fn check_training_data(x: &Matrix, y: &[u8]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Empty("training matrix".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("training features".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegenerateLabels("training needs both classes".into()));
    }
    Ok(())
}

/// Training controls that sit outside the tuned hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// L-BFGS iteration cap for the MLP.
    pub mlp_max_iter: u64,
    /// Share of training rows the MLP holds out for early stopping; 0 turns
    /// it off.
    pub mlp_validation_fraction: f64,
    /// Iterations without held-out improvement before the MLP stops.
    pub mlp_patience: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        let t = mlp::Training::default();
        FitOptions {
            mlp_max_iter: t.max_iter,
            mlp_validation_fraction: t.validation_fraction,
            mlp_patience: t.patience,
        }
    }
}

pub fn fit(spec: &ClassifierSpec, x: &Matrix, y: &[u8], seed: u64) -> Result<TrainedModel> {
    fit_with(spec, x, y, seed, &FitOptions::default())
}

pub fn fit_with(spec: &ClassifierSpec, x: &Matrix, y: &[u8], seed: u64, options: &FitOptions) -> Result<TrainedModel> {
    spec.validate()?;
    if options.mlp_max_iter == 0 {
        return Err(Error::Config("mlp_max_iter must be positive".into()));
    }
    if !(0.0..0.5).contains(&options.mlp_validation_fraction) {
        return Err(Error::Config("mlp_validation_fraction must lie in [0, 0.5)".into()));
    }
    check_training_data(x, y)?;
    let state = match spec.kind {
        ModelKind::Gb => ModelState::Gb(gb::fit(
            x,
            y,
            gb::GbParams::new(
                spec.int("n_estimators"),
                spec.int("max_depth"),
                spec.get("learning_rate"),
            ),
        )),
        ModelKind::Mlp => ModelState::Mlp(mlp::fit(
            x,
            y,
            spec.int("hidden_layer_sizes"),
            spec.get("alpha"),
            seed,
            mlp::Training {
                max_iter: options.mlp_max_iter,
                validation_fraction: options.mlp_validation_fraction,
                patience: options.mlp_patience,
            },
        )?),
        ModelKind::Svm => ModelState::Svm(svm::fit(x, y, spec.get("C"), seed)?),
        ModelKind::Knn => ModelState::Knn(knn::fit(x, y, spec.int("n_neighbors"))),
        ModelKind::Lr => ModelState::Lr(lr::fit(x, y, spec.get("C"))?),
        ModelKind::Ert => ModelState::Ert(ert::fit(
            x,
            y,
            ert::ErtParams {
                n_estimators: spec.int("n_estimators"),
                max_depth: spec.int("max_depth"),
                min_samples_split: spec.int("min_samples_split"),
                max_features: ((x.cols() as f64).sqrt() as usize).max(1),
            },
            seed,
        )),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        seed,
        rows: x.rows(),
        features: x.cols(),
        state,
    })
}

impl TrainedModel {
    /// P(class = 1) per row.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.features {
            return Err(Error::DimensionMismatch {
                expected: self.features,
                found: x.cols(),
            });
        }
        let p = match &self.state {
            ModelState::Gb(m) => m.predict_proba(x),
            ModelState::Mlp(m) => m.predict_proba(x),
            ModelState::Svm(m) => m.predict_proba(x),
            ModelState::Knn(m) => m.predict_proba(x),
            ModelState::Lr(m) => m.predict_proba(x),
            ModelState::Ert(m) => m.predict_proba(x),
        };
        Ok(p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn predict(&self, x: &Matrix, threshold: f64) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| u8::from(p >= threshold))
            .collect())
    }

    /// Training objective per iteration for the iterative kinds.
    pub fn train_loss(&self) -> Option<&[f64]> {
        match &self.state {
            ModelState::Gb(m) => Some(&m.train_loss),
            ModelState::Mlp(m) => Some(&m.train_loss),
            ModelState::Svm(m) => Some(&m.train_loss),
            ModelState::Lr(m) => Some(&m.train_loss),
            ModelState::Knn(_) | ModelState::Ert(_) => None,
        }
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
                "model artifact version {} (expected {ARTIFACT_VERSION})",
                a.format_version
            )));
        }
        Ok(a.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut r = rng::seeded(seed);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = (i % 2) as u8;
            let centre = if c == 1 { 2.5 } else { -2.5 };
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            rows.push(vec![centre + 0.7 * a, centre + 0.7 * b]);
            y.push(c);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    fn noisy_task(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut r = rng::seeded(seed);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut r)).collect();
            let z = 1.2 * v[0] - 0.8 * v[1] + 0.5 * v[2] * v[3];
            y.push(u8::from(r.random::<f64>() < crate::stats::sigmoid(z)));
            rows.push(v);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn kinds_parse_and_spaces_match_table() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            let s = ClassifierSpec::reference(k);
            assert_eq!(ClassifierSpec::parse_kv(&s.to_kv()).unwrap(), s);
        }
        let gb = search_space(ModelKind::Gb);
        let b: Vec<(f64, f64)> = gb.dimensions.iter().map(|d| (d.lower, d.upper)).collect();
        assert_eq!(b, vec![(50.0, 200.0), (3.0, 10.0), (0.01, 0.1)]);
        assert!("forest".parse::<ModelKind>().is_err());
        assert!(ClassifierSpec::new(ModelKind::Knn, &[2.0]).is_err());
        assert!(ClassifierSpec::new(ModelKind::Knn, &[3.5]).is_err());
    }

    #[test]
    fn rejects_single_class_and_bad_input() {
        let x = Matrix::from_columns(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let spec = ClassifierSpec::reference(ModelKind::Lr);
        assert!(matches!(fit(&spec, &x, &[1, 1, 1], 0), Err(Error::DegenerateLabels(_))));
        let bad = Matrix::from_columns(&[vec![1.0, f64::NAN, 3.0]]).unwrap();
        assert!(matches!(fit(&spec, &bad, &[1, 0, 1], 0), Err(Error::NonFinite(_))));
        let m = fit(&spec, &x, &[1, 0, 1], 0).unwrap();
        assert!(m.predict_proba(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn gb_reference_spec_fits_1k_rows() {
        let (x, y) = noisy_task(1000, 3);
        let m = fit(&ClassifierSpec::reference(ModelKind::Gb), &x, &y, 42).unwrap();
        let auc = metrics::roc_auc(&y, &m.predict_proba(&x).unwrap()).unwrap().auc;
        assert!(auc > 0.8);
    }

    #[test]
    fn lr_separates_blobs_and_is_seed_free() {
        let (x, y) = blobs(400, 1);
        let spec = ClassifierSpec::reference(ModelKind::Lr);
        let a = fit(&spec, &x, &y, 1).unwrap().predict_proba(&x).unwrap();
        let b = fit(&spec, &x, &y, 2).unwrap().predict_proba(&x).unwrap();
        assert_eq!(a, b);
        assert!(metrics::roc_auc(&y, &a).unwrap().auc >= 0.99);
    }

    #[test]
    fn constant_features_give_base_rate() {
        let x = Matrix::from_columns(&[vec![1.0; 300], vec![-2.0; 300]]).unwrap();
        let y: Vec<u8> = (0..300).map(|i| u8::from(i % 10 < 3)).collect();
        for k in ModelKind::ALL {
            let m = fit(&ClassifierSpec::midpoint(k), &x, &y, 7).unwrap();
            let p = m.predict_proba(&x.select_rows(&[0, 1, 2])).unwrap();
            for v in p {
                assert!((v - 0.3).abs() <= 0.05, "{k}: {v}");
            }
        }
    }

    #[test]
    fn iterative_losses_do_not_increase() {
        let (x, y) = noisy_task(300, 9);
        for k in [ModelKind::Lr, ModelKind::Mlp, ModelKind::Gb] {
            let m = fit(&ClassifierSpec::midpoint(k), &x, &y, 5).unwrap();
            let loss = m.train_loss().unwrap();
            assert!(loss.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{k}");
        }
    }

    #[test]
    fn ert_trees_differ() {
        let (x, y) = noisy_task(300, 2);
        let m = fit(&ClassifierSpec::reference(ModelKind::Ert), &x, &y, 3).unwrap();
        let ModelState::Ert(forest) = &m.state else {
            unreachable!()
        };
        let per_tree = forest.tree_predictions(&x);
        assert!(per_tree.iter().any(|t| t != &per_tree[0]));
    }

    #[test]
    fn artifacts_round_trip_and_threshold_rule() {
        let (x, y) = noisy_task(200, 4);
        for k in ModelKind::ALL {
            let m = fit(&ClassifierSpec::midpoint(k), &x, &y, 11).unwrap();
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.predict_proba(&x).unwrap(), m.predict_proba(&x).unwrap(), "{k}");
            let p = m.predict_proba(&x).unwrap();
            let labels = m.predict(&x, 0.5).unwrap();
            for (pi, li) in p.iter().zip(&labels) {
                assert_eq!(*li, u8::from(*pi >= 0.5));
            }
            assert!(m.predict(&x, 0.0).unwrap().iter().all(|&v| v == 1));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn probabilities_valid_and_row_order_free(seed in any::<u64>(), kind in 0usize..6) {
            let kind = ModelKind::ALL[kind];
            let (x, y) = noisy_task(120, seed);
            let m = fit(&ClassifierSpec::midpoint(kind), &x, &y, seed).unwrap();
            let p = m.predict_proba(&x).unwrap();
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            let rev: Vec<usize> = (0..x.rows()).rev().collect();
            let q = m.predict_proba(&x.select_rows(&rev)).unwrap();
            for (i, &j) in rev.iter().enumerate() {
                prop_assert_eq!(q[i], p[j]);
            }
        }
    }
}
