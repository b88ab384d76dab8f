//! Stage orchestration: ingest → outliers → augment → select-features →
//! tune → train → evaluate → report.
//!
//! Every stage stores its result as `<out_dir>/<stage>/stage.json` under a key
//! that hashes the previous stage's key with this stage's configuration, so a
//! rerun reuses whatever is still valid. Test rows sit behind [`Holdout`],
//! which only the evaluate stage may open.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{self, AugmentationPlan, QuantileTransform};
use crate::blendnet::{self, BlendNet};
use crate::config::{Aggregate, EnsembleKind, OutlierScope, PipelineConfig};
use crate::dataset::{self, DropSummary, EncodedMatrix, Schema, Split};
use crate::ensemble::{self, GreedyOutcome, PredictionBundle};
use crate::error::{Error, Result};
use crate::features::{self, EstimatorConfig, SelectionResult};
use crate::learners::{self, ClassifierSpec, ModelKind, TrainedModel};
use crate::matrix::Matrix;
use crate::metrics::{self, EvaluationReport};
use crate::outlier::{self, OutlierModel};
use crate::pso::{self, TuneOutcome};
use crate::rng::derive_seed;
use crate::{par, synth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Outliers,
    Augment,
    SelectFeatures,
    Tune,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Outliers,
        Stage::Augment,
        Stage::SelectFeatures,
        Stage::Tune,
        Stage::Train,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Outliers => "outliers",
            Stage::Augment => "augment",
            Stage::SelectFeatures => "select-features",
            Stage::Tune => "tune",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

/// Test rows with an access counter. Only [`Stage::Evaluate`] may read them.
#[derive(Debug)]
pub struct Holdout {
    data: EncodedMatrix,
    reads: AtomicUsize,
}

impl Holdout {
    pub fn new(data: EncodedMatrix) -> Self {
        Holdout {
            data,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.data.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of successful opens so far.
    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn open(&self, stage: Stage) -> Result<&EncodedMatrix> {
        if stage != Stage::Evaluate {
            return Err(Error::invalid(format!("stage {stage} may not read test rows")));
        }
        self.reads.fetch_add(1, Ordering::SeqCst);
        Ok(&self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOut {
    pub train: EncodedMatrix,
    pub split: Split,
    pub dropped: DropSummary,
}

#[derive(Serialize, Deserialize)]
struct IngestCache {
    ingest: IngestOut,
    test: EncodedMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutliersOut {
    pub x: Matrix,
    pub model: Option<OutlierModel>,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentOut {
    pub quantile: Option<QuantileTransform>,
    pub plan: AugmentationPlan,
    pub x: Matrix,
    pub y: Vec<u8>,
    pub source: Vec<usize>,
    pub synthetic: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesOut {
    pub selection: SelectionResult,
    /// Encoded column of each selected feature, most important first.
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOut {
    /// One spec per model kind, in [`ModelKind::ALL`] order.
    pub specs: Vec<ClassifierSpec>,
    pub outcomes: Vec<TuneOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOut {
    pub names: Vec<String>,
    pub bases: Vec<TrainedModel>,
    pub greedy: Option<GreedyOutcome>,
    pub blendnet: Option<BlendNet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOut {
    pub reports: Vec<EvaluationReport>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile<T> {
    key: String,
    payload: T,
}

/// Whether each executed stage was computed or read back from its cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRun {
    pub stage: Stage,
    pub cached: bool,
}

fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(v)?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// File-name form of a model name.
pub fn slug(name: &str) -> String {
    name.to_ascii_lowercase()
}

fn matrix_csv(names: &[String], x: &Matrix, y: &[u8], synthetic: Option<&[bool]>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = names.to_vec();
    header.push("label".into());
    if synthetic.is_some() {
        header.push("synthetic".into());
    }
    w.write_record(&header)?;
    for (i, row) in x.iter_rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y[i].to_string());
        if let Some(s) = synthetic {
            rec.push(u8::from(s[i]).to_string());
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Artifact(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Artifact(e.to_string()))
}

/// One row per model of the comparison table.
pub const SUMMARY_COLUMNS: [&str; 13] = [
    "model",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "recall_class0",
    "recall_class1",
    "auc",
    "auc_boot_mean",
    "auc_boot_std",
    "auc_ci_low",
    "auc_ci_high",
    "brier",
    "log_loss",
];

fn summary_values(r: &EvaluationReport) -> [f64; 12] {
    [
        r.scores.macro_avg.precision,
        r.scores.macro_avg.recall,
        r.scores.macro_avg.f1,
        r.scores.class0.recall,
        r.scores.class1.recall,
        r.auc,
        r.bootstrap.mean,
        r.bootstrap.std,
        r.bootstrap.ci_low,
        r.bootstrap.ci_high,
        r.brier,
        r.log_loss,
    ]
}

/// Comparison table as CSV with full precision.
pub fn summary_csv(reports: &[EvaluationReport]) -> String {
    let mut s = SUMMARY_COLUMNS.join(",");
    s.push('\n');
    for r in reports {
        s.push_str(&r.model);
        for v in summary_values(r) {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

/// Comparison table as Markdown, four decimals.
pub fn summary_markdown(reports: &[EvaluationReport]) -> String {
    let mut s = String::from(
        "| Model | Macro P | Macro R | Macro F1 | Recall 0 | Recall 1 | AUC | AUC boot (mean ± std) | AUC 95% CI | Brier | Log loss |\n",
    );
    s.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        let v = summary_values(r);
        s.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} ± {:.4} | [{:.4}, {:.4}] | {:.4} | {:.4} |\n",
            r.model, v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]
        ));
    }
    s
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
    keys: Vec<String>,
    runs: Vec<StageRun>,
    ingest: Option<IngestOut>,
    holdout: Option<Holdout>,
    outliers: Option<OutliersOut>,
    augment: Option<AugmentOut>,
    features: Option<FeaturesOut>,
    tune: Option<TuneOut>,
    train: Option<TrainOut>,
    evaluate: Option<EvaluateOut>,
}

impl Pipeline {
    /// Validates the configuration. Nothing is written until a stage runs.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let out = config.paths.out_dir.clone();
        Ok(Pipeline {
            config,
            out,
            keys: Vec::new(),
            runs: Vec::new(),
            ingest: None,
            holdout: None,
            outliers: None,
            augment: None,
            features: None,
            tune: None,
            train: None,
            evaluate: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    pub fn runs(&self) -> &[StageRun] {
        &self.runs
    }

    /// Reads of the test rows so far; zero until evaluate runs.
    pub fn holdout_reads(&self) -> usize {
        self.holdout.as_ref().map_or(0, Holdout::reads)
    }

    pub fn ingest_output(&self) -> Option<&IngestOut> {
        self.ingest.as_ref()
    }
    pub fn outliers_output(&self) -> Option<&OutliersOut> {
        self.outliers.as_ref()
    }
    pub fn augment_output(&self) -> Option<&AugmentOut> {
        self.augment.as_ref()
    }
    pub fn features_output(&self) -> Option<&FeaturesOut> {
        self.features.as_ref()
    }
    pub fn tune_output(&self) -> Option<&TuneOut> {
        self.tune.as_ref()
    }
    pub fn train_output(&self) -> Option<&TrainOut> {
        self.train.as_ref()
    }
    pub fn evaluate_output(&self) -> Option<&EvaluateOut> {
        self.evaluate.as_ref()
    }

    /// Runs every stage up to and including `last`.
    pub fn run_until(&mut self, last: Stage) -> Result<()> {
        for stage in Stage::ALL.into_iter().filter(|&s| s <= last) {
            if self.keys.len() > stage as usize {
                continue;
            }
            self.run_stage(stage).map_err(|e| Error::Stage {
                stage: stage.name().to_string(),
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    fn stage_key(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        let cfg = match stage {
            Stage::Ingest => unreachable!("ingest is keyed on its inputs"),
            Stage::Outliers => json(&c.outliers)?,
            Stage::Augment => json(&c.augment)?,
            Stage::SelectFeatures => json(&c.features)?,
            Stage::Tune => json(&(&c.tune, &c.train.learners))?,
            Stage::Train => json(&(&c.train, &c.greedy, &c.blendnet))?,
            Stage::Evaluate => json(&c.evaluate)?,
            Stage::Report => Vec::new(),
        };
        let prev = self.keys.last().expect("previous stage ran");
        Ok(hash_parts(&[prev.as_bytes(), stage.name().as_bytes(), &cfg]))
    }

    fn load_cache<T: DeserializeOwned>(&self, stage: Stage, key: &str) -> Option<T> {
        let path = self.stage_dir(stage).join("stage.json");
        let text = fs::read(&path).ok()?;
        let head: CacheFile<serde::de::IgnoredAny> = serde_json::from_slice(&text).ok()?;
        if head.key != key {
            return None;
        }
        match serde_json::from_slice::<CacheFile<T>>(&text) {
            Ok(c) => Some(c.payload),
            Err(e) => {
                log::warn!("{stage}: unreadable cache ({e}); recomputing");
                None
            }
        }
    }

    fn store_cache<T: Serialize>(&self, stage: Stage, key: &str, payload: &T) -> Result<()> {
        let text = serde_json::to_vec(&CacheFile {
            key: key.to_string(),
            payload,
        })?;
        write(&self.stage_dir(stage).join("stage.json"), text)
    }

    fn cached_or<T, F>(&mut self, stage: Stage, key: String, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&Self) -> Result<T>,
    {
        let cached = self.load_cache(stage, &key);
        let hit = cached.is_some();
        let value = match cached {
            Some(v) => {
                log::info!("{stage}: reusing cached result");
                v
            }
            None => {
                log::info!("{stage}: running");
                let v = compute(self)?;
                self.store_cache(stage, &key, &v)?;
                v
            }
        };
        self.keys.push(key);
        self.runs.push(StageRun { stage, cached: hit });
        Ok(value)
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Ingest => {
                let (schema, data, key) = self.ingest_inputs()?;
                let cache: IngestCache = self.cached_or(stage, key, |p| p.compute_ingest(&schema, &data))?;
                self.ingest = Some(cache.ingest);
                self.holdout = Some(Holdout::new(cache.test));
            }
            Stage::Outliers => {
                let key = self.stage_key(stage)?;
                self.outliers = Some(self.cached_or(stage, key, Self::compute_outliers)?);
            }
            Stage::Augment => {
                let key = self.stage_key(stage)?;
                self.augment = Some(self.cached_or(stage, key, Self::compute_augment)?);
            }
            Stage::SelectFeatures => {
                let key = self.stage_key(stage)?;
                self.features = Some(self.cached_or(stage, key, Self::compute_features)?);
            }
            Stage::Tune => {
                let key = self.stage_key(stage)?;
                self.tune = Some(self.cached_or(stage, key, Self::compute_tune)?);
            }
            Stage::Train => {
                let key = self.stage_key(stage)?;
                self.train = Some(self.cached_or(stage, key, Self::compute_train)?);
            }
            Stage::Evaluate => {
                let key = self.stage_key(stage)?;
                self.evaluate = Some(self.cached_or(stage, key, Self::compute_evaluate)?);
            }
            Stage::Report => {
                let key = self.stage_key(stage)?;
                let reports = &self.evaluate.as_ref().expect("evaluate ran").reports;
                let dir = self.stage_dir(stage);
                write(&dir.join("summary.csv"), summary_csv(reports))?;
                write(&dir.join("summary.md"), summary_markdown(reports))?;
                self.keys.push(key);
                self.runs.push(StageRun { stage, cached: false });
            }
        }
        Ok(())
    }

    fn ingest_inputs(&self) -> Result<(Schema, Vec<u8>, String)> {
        let c = &self.config;
        let schema = match &c.paths.schema {
            Some(p) => Schema::load(p)?,
            None => synth::schema(),
        };
        let (data, source) = match (&c.paths.data, &c.synth) {
            (Some(p), _) => (fs::read(p).map_err(|e| Error::io(p, e))?, b"file".to_vec()),
            (None, Some(s)) => {
                let cfg = synth::SynthConfig {
                    seed: c.seed,
                    ..s.clone()
                };
                (synth::generate_csv(&cfg)?.into_bytes(), json(&cfg)?)
            }
            (None, None) => return Err(Error::Config("no data source".into())),
        };
        let key = hash_parts(&[
            b"ingest",
            &source,
            &data,
            schema.render().as_bytes(),
            &json(&(&c.label, &c.split, c.seed))?,
        ]);
        Ok((schema, data, key))
    }

    fn compute_ingest(&self, schema: &Schema, data: &[u8]) -> Result<IngestCache> {
        let c = &self.config;
        let dir = self.stage_dir(Stage::Ingest);
        if c.paths.data.is_none() {
            write(&dir.join("synthetic.csv"), data)?;
        }
        let raw = dataset::ingest_reader(data, schema, &c.label)?;
        let (clean, dropped) = dataset::drop_missing(&raw)?;
        let enc = dataset::encode(&clean)?;
        let mut split = dataset::stratified_split(&enc.y, c.split.test_fraction, c.seed)?;
        split.train_indices.sort_unstable();
        split.test_indices.sort_unstable();
        let train = enc.select_rows(&split.train_indices);
        let test = enc.select_rows(&split.test_indices);
        write(&dir.join("split.txt"), split.render())?;
        write(&dir.join("train.csv"), train.to_csv()?)?;
        let count = |y: &[u8], l: u8| y.iter().filter(|&&v| v == l).count();
        write(
            &dir.join("summary.toml"),
            format!(
                "rows_read = {}\nrows_dropped = {}\nretained_fraction = {}\nfeatures = {}\ntrain_rows = {}\ntest_rows = {}\ntrain_class0 = {}\ntrain_class1 = {}\n",
                raw.n_rows(),
                raw.n_rows() - clean.n_rows(),
                dropped.retained_fraction(),
                enc.feature_names.len(),
                train.n_rows(),
                test.n_rows(),
                count(&train.y, 0),
                count(&train.y, 1),
            ),
        )?;
        Ok(IngestCache {
            ingest: IngestOut { train, split, dropped },
            test,
        })
    }

    fn numeric_columns(&self) -> Vec<(usize, String)> {
        let train = &self.ingest.as_ref().expect("ingest ran").train;
        train
            .numeric_columns()
            .into_iter()
            .map(|j| (j, train.feature_names[j].clone()))
            .collect()
    }

    fn compute_outliers(&self) -> Result<OutliersOut> {
        let train = &self.ingest.as_ref().expect("ingest ran").train;
        let dir = self.stage_dir(Stage::Outliers);
        let out = match self.config.outliers.scope {
            OutlierScope::Off => OutliersOut {
                x: train.x.clone(),
                model: None,
                flagged: 0,
            },
            OutlierScope::TrainFitted => {
                let (x, model, records) =
                    OutlierModel::fit(&train.x, &self.numeric_columns(), &self.config.outliers.bcp_hi)?;
                write(&dir.join("flags.csv"), outlier::flags_csv(&records))?;
                OutliersOut {
                    x,
                    model: Some(model),
                    flagged: records.len(),
                }
            }
        };
        write(
            &dir.join("train_corrected.csv"),
            matrix_csv(&train.feature_names, &out.x, &train.y, None)?,
        )?;
        Ok(out)
    }

    fn compute_augment(&self) -> Result<AugmentOut> {
        let c = &self.config.augment;
        let train = &self.ingest.as_ref().expect("ingest ran").train;
        let x = &self.outliers.as_ref().expect("outliers ran").x;
        let numeric: Vec<usize> = self.numeric_columns().into_iter().map(|(j, _)| j).collect();
        let (quantile, xq) = if c.quantile {
            let (q, z) = augment::quantile_fit_transform(x, &numeric);
            (Some(q), z)
        } else {
            (None, x.clone())
        };
        let plan = AugmentationPlan::new(
            &train.y,
            c.ratio,
            c.noise_scale,
            derive_seed(self.config.seed, "augment"),
        )?;
        let noisy: Vec<usize> = numeric
            .iter()
            .copied()
            .filter(|&j| {
                let mut col = x.column(j);
                col.sort_by(f64::total_cmp);
                col.dedup();
                col.len() >= c.noise_min_distinct
            })
            .collect();
        let b = augment::balance(&xq, &train.y, &plan, &noisy)?;
        let dir = self.stage_dir(Stage::Augment);
        write(
            &dir.join("train_augmented.csv"),
            matrix_csv(&train.feature_names, &b.x, &b.y, Some(&b.synthetic))?,
        )?;
        write(
            &dir.join("plan.toml"),
            toml::to_string(&plan).map_err(|e| Error::Artifact(e.to_string()))?,
        )?;
        Ok(AugmentOut {
            quantile,
            plan,
            x: b.x,
            y: b.y,
            source: b.source,
            synthetic: b.synthetic,
        })
    }

    fn compute_features(&self) -> Result<FeaturesOut> {
        let c = &self.config.features;
        let names = &self.ingest.as_ref().expect("ingest ran").train.feature_names;
        let aug = self.augment.as_ref().expect("augment ran");
        let seed = derive_seed(self.config.seed, "features");
        let k = c.k.min(names.len());
        let mut selection = match c.aggregate {
            Aggregate::Single => features::rfe(&aug.x, &aug.y, names, &c.estimator, k, seed)?,
            Aggregate::RankSum => {
                let imps = [EstimatorConfig::default(), EstimatorConfig::ert()]
                    .iter()
                    .map(|e| features::estimator_importance(e, &aug.x, &aug.y, seed))
                    .collect::<Result<Vec<_>>>()?;
                let ranking = features::rank_sum(names, &imps)?;
                SelectionResult {
                    selected: ranking[..k].to_vec(),
                    elimination_order: ranking.iter().rev().cloned().collect(),
                    cv_scores: Default::default(),
                }
            }
        };
        if c.cv_curve {
            let k_range: Vec<usize> = (1..=names.len()).collect();
            selection.cv_scores =
                features::cv_score_vs_k(&aug.x, &aug.y, names, &c.estimator, &k_range, c.cv_folds, seed)?;
        }
        let columns = selection
            .selected
            .iter()
            .map(|n| {
                names
                    .iter()
                    .position(|m| m == n)
                    .expect("selected names come from the header")
            })
            .collect();
        let dir = self.stage_dir(Stage::SelectFeatures);
        write(&dir.join("selected.txt"), selection.selected.join("\n") + "\n")?;
        write(
            &dir.join("elimination_order.txt"),
            selection.elimination_order.join("\n") + "\n",
        )?;
        if c.cv_curve {
            write(
                &dir.join("cv_scores.csv"),
                features::cv_scores_csv(&selection.cv_scores),
            )?;
        }
        Ok(FeaturesOut { selection, columns })
    }

    fn selected_train(&self) -> (Matrix, &AugmentOut) {
        let aug = self.augment.as_ref().expect("augment ran");
        let cols = &self.features.as_ref().expect("select-features ran").columns;
        (aug.x.select_columns(cols), aug)
    }

    fn compute_tune(&self) -> Result<TuneOut> {
        let c = &self.config.tune;
        let (x, aug) = self.selected_train();
        // Fitness is scored on real rows only: a synthetic row and its source
        // on opposite sides of a fold would leak.
        let mut rows: Vec<usize> = (0..aug.y.len()).filter(|&i| !aug.synthetic[i]).collect();
        if let Some(max) = c.max_rows.filter(|&m| m < rows.len()) {
            let y_real: Vec<u8> = rows.iter().map(|&i| aug.y[i]).collect();
            let part = dataset::stratified_split(
                &y_real,
                max as f64 / rows.len() as f64,
                derive_seed(self.config.seed, "tune-rows"),
            )?;
            let mut keep = part.test_indices;
            keep.sort_unstable();
            rows = keep.into_iter().map(|i| rows[i]).collect();
        }
        let xt = x.select_rows(&rows);
        let yt: Vec<u8> = rows.iter().map(|&i| aug.y[i]).collect();
        let dir = self.stage_dir(Stage::Tune);
        let mut specs = Vec::new();
        let mut outcomes = Vec::new();
        for kind in ModelKind::ALL {
            if !c.models.contains(&kind) {
                specs.push(ClassifierSpec::reference(kind));
                continue;
            }
            let swarm = pso::SwarmConfig {
                seed: derive_seed(self.config.seed, &format!("tune-{kind}")),
                ..c.swarm.clone()
            };
            let space = learners::search_space(kind);
            let outcome = pso::tune_model(kind, &xt, &yt, &space, &swarm, c.cv_folds, &self.config.train.learners)?;
            log::info!("tune {kind}: cv auc {:.4}", outcome.cv_auc);
            write(&dir.join(format!("{}.spec", kind.name())), outcome.spec.to_kv())?;
            write(
                &dir.join(format!("{}_trace.csv", kind.name())),
                pso::trace_csv(&outcome.trace),
            )?;
            specs.push(outcome.spec.clone());
            outcomes.push(outcome);
        }
        Ok(TuneOut { specs, outcomes })
    }

    fn compute_train(&self) -> Result<TrainOut> {
        let c = &self.config;
        let (x, aug) = self.selected_train();
        let specs = &self.tune.as_ref().expect("tune ran").specs;
        let names: Vec<String> = specs.iter().map(|s| s.kind.display_name().to_string()).collect();
        let opts = &c.train.learners;
        let dir = self.stage_dir(Stage::Train);

        let wants = |e: EnsembleKind| c.train.ensembles.contains(&e);
        let need_weights = wants(EnsembleKind::Greedy) || wants(EnsembleKind::Stack);
        let mut greedy = None;
        let mut blend = None;
        if need_weights {
            let held = ensemble::grouped_folds(&aug.y, &aug.source, c.train.oof_folds, derive_seed(c.seed, "oof"))?;
            let oof = ensemble::out_of_fold(specs, &x, &aug.y, &held, derive_seed(c.seed, "oof"), opts)?;
            let real: Vec<usize> = (0..aug.y.len()).filter(|&i| !aug.synthetic[i]).collect();
            let bundle = PredictionBundle::new(
                names.clone(),
                oof.probs.iter().map(|p| real.iter().map(|&i| p[i]).collect()).collect(),
                real.iter().map(|&i| aug.y[i]).collect(),
            )?;
            let g = ensemble::greedy_weights(&bundle, &c.greedy)?;
            write(&dir.join("weights.csv"), g.weights.to_csv(&names))?;
            if wants(EnsembleKind::Stack) {
                let plain = ensemble::plain_average(&oof.probs)?;
                let weighted = ensemble::weighted_average(&oof.probs, &g.weights.weights)?;
                let meta = ensemble::stack_meta_features(&oof.probs, &plain, &weighted)?;
                let cfg = blendnet::BlendNetConfig {
                    seed: derive_seed(c.seed, "blendnet"),
                    ..c.blendnet.clone()
                };
                let mut net = blendnet::build(meta.cols(), &cfg)?;
                net.train(&meta, &aug.y)?;
                write(&dir.join("blendnet.json"), net.to_json()?)?;
                write(&dir.join("blendnet_trace.csv"), net.trace_csv())?;
                blend = Some(net);
            }
            greedy = Some(g);
        }

        let bases = par::map_slice(specs, |s| {
            learners::fit_with(s, &x, &aug.y, derive_seed(c.seed, &format!("final-{}", s.kind)), opts)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for m in &bases {
            write(
                &dir.join("models").join(format!("{}.json", m.spec.kind.name())),
                m.to_json()?,
            )?;
        }
        Ok(TrainOut {
            names,
            bases,
            greedy,
            blendnet: blend,
        })
    }

    /// Applies the training-fitted transforms to the test rows.
    fn prepare_test(&self, test: &EncodedMatrix) -> Result<(Matrix, Vec<outlier::FlagRecord>)> {
        let (x, records) = match &self.outliers.as_ref().expect("outliers ran").model {
            Some(m) => m.apply(&test.x)?,
            None => (test.x.clone(), Vec::new()),
        };
        let x = match &self.augment.as_ref().expect("augment ran").quantile {
            Some(q) => q.transform(&x),
            None => x,
        };
        let cols = &self.features.as_ref().expect("select-features ran").columns;
        Ok((x.select_columns(cols), records))
    }

    fn compute_evaluate(&self) -> Result<EvaluateOut> {
        let c = &self.config;
        let test = self.holdout.as_ref().expect("ingest ran").open(Stage::Evaluate)?;
        let (x, records) = self.prepare_test(test)?;
        let trained = self.train.as_ref().expect("train ran");
        let y = &test.y;
        let settings = &c.evaluate;
        let seed = derive_seed(c.seed, "bootstrap");
        let dir = self.stage_dir(Stage::Evaluate);
        if self.outliers.as_ref().is_some_and(|o| o.model.is_some()) {
            write(&dir.join("test_flags.csv"), outlier::flags_csv(&records))?;
        }

        let probs = trained
            .bases
            .iter()
            .map(|m| m.predict_proba(&x))
            .collect::<Result<Vec<_>>>()?;
        let mut scored: Vec<(String, Vec<f64>, Option<Vec<u8>>)> = trained
            .names
            .iter()
            .zip(&probs)
            .map(|(n, p)| (n.clone(), p.clone(), None))
            .collect();
        let plain = ensemble::plain_average(&probs)?;
        let weighted = match &trained.greedy {
            Some(g) => Some(ensemble::weighted_average(&probs, &g.weights.weights)?),
            None => None,
        };
        for e in EnsembleKind::ALL {
            if !c.train.ensembles.contains(&e) {
                continue;
            }
            let name = e.report_name().to_string();
            match e {
                EnsembleKind::Vote => {
                    let labels: Vec<Vec<u8>> = probs
                        .iter()
                        .map(|p| p.iter().map(|&v| u8::from(v >= settings.threshold)).collect())
                        .collect();
                    let votes = ensemble::majority_vote(&labels)?;
                    scored.push((name, ensemble::vote_fraction(&labels)?, Some(votes)));
                }
                EnsembleKind::Average => scored.push((name, plain.clone(), None)),
                EnsembleKind::Greedy => scored.push((name, weighted.clone().expect("greedy weights trained"), None)),
                EnsembleKind::Stack => {
                    let w = weighted.as_ref().expect("greedy weights trained");
                    let meta = ensemble::stack_meta_features(&probs, &plain, w)?;
                    let net = trained.blendnet.as_ref().expect("blendnet trained");
                    scored.push((name, net.predict_proba(&meta)?, None));
                }
            }
        }

        let mut reports = Vec::with_capacity(scored.len());
        for (name, p, labels) in &scored {
            let r = metrics::evaluate(name, y, p, labels.as_deref(), settings, seed)?;
            let s = slug(name);
            write(&dir.join(format!("{s}.toml")), r.to_text()?)?;
            write(
                &dir.join(format!("{s}_roc.csv")),
                metrics::roc_csv(r.roc.as_ref().expect("evaluate fills the curve")),
            )?;
            write(
                &dir.join(format!("{s}_calibration.csv")),
                metrics::calibration_csv(r.calibration.as_ref().expect("evaluate fills the curve")),
            )?;
            reports.push(r);
        }
        Ok(EvaluateOut { reports })
    }
}

/// Validates `config` and runs all stages up to `last`.
pub fn run_pipeline(config: PipelineConfig, last: Stage) -> Result<Pipeline> {
    let mut p = Pipeline::new(config)?;
    p.run_until(last)?;
    Ok(p)
}
