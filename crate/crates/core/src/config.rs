//! Pipeline configuration, read from TOML with one table per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment;
use crate::blendnet::BlendNetConfig;
use crate::dataset::LabelMapping;
use crate::ensemble::GreedyConfig;
use crate::error::{Error, Result};
use crate::features::{EstimatorConfig, EstimatorKind};
use crate::learners::{FitOptions, ModelKind};
use crate::metrics::EvalSettings;
use crate::outlier::BcpHiConfig;
use crate::pso::SwarmConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Loan CSV. When absent, `[synth]` must be present.
    pub data: Option<PathBuf>,
    /// Column schema; the bundled loan schema is used when absent.
    pub schema: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: None,
            schema: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierScope {
    /// Segment and fence on training rows; correct test rows with the fences.
    TrainFitted,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierStageConfig {
    pub scope: OutlierScope,
    #[serde(flatten)]
    pub bcp_hi: BcpHiConfig,
}

impl Default for OutlierStageConfig {
    fn default() -> Self {
        OutlierStageConfig {
            scope: OutlierScope::TrainFitted,
            bcp_hi: BcpHiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub ratio: f64,
    pub noise_scale: f64,
    pub quantile: bool,
    /// Numeric columns with fewer distinct training values are copied into
    /// synthetic rows without noise.
    pub noise_min_distinct: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            ratio: 1.5,
            noise_scale: 0.05,
            quantile: true,
            noise_min_distinct: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Ranking of the configured estimator alone.
    Single,
    /// Rank-sum of the GB and ERT rankings.
    RankSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub k: usize,
    pub estimator: EstimatorConfig,
    pub aggregate: Aggregate,
    /// Compute the accuracy-versus-k curve.
    pub cv_curve: bool,
    pub cv_folds: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            k: 10,
            estimator: EstimatorConfig::default(),
            aggregate: Aggregate::Single,
            cv_curve: true,
            cv_folds: 5,
        }
    }
}

impl FeatureConfig {
    pub fn set_estimator(&mut self, kind: EstimatorKind) {
        if self.estimator.kind != kind {
            self.estimator = match kind {
                EstimatorKind::Gb => EstimatorConfig::default(),
                EstimatorKind::Ert => EstimatorConfig::ert(),
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    /// Models to tune; the rest train with their reference values.
    pub models: Vec<ModelKind>,
    pub cv_folds: usize,
    /// Stratified cap on the rows used for fitness evaluation.
    pub max_rows: Option<usize>,
    pub swarm: SwarmConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            models: ModelKind::ALL.to_vec(),
            cv_folds: 5,
            max_rows: None,
            swarm: SwarmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Vote,
    Average,
    Greedy,
    Stack,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 4] = [
        EnsembleKind::Vote,
        EnsembleKind::Average,
        EnsembleKind::Greedy,
        EnsembleKind::Stack,
    ];

    pub fn report_name(self) -> &'static str {
        match self {
            EnsembleKind::Vote => "Voting",
            EnsembleKind::Average => "Averaging",
            EnsembleKind::Greedy => "GreedyWeighted",
            EnsembleKind::Stack => "BlendNetStack",
        }
    }
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vote" => Ok(EnsembleKind::Vote),
            "average" => Ok(EnsembleKind::Average),
            "greedy" => Ok(EnsembleKind::Greedy),
            "stack" => Ok(EnsembleKind::Stack),
            other => Err(Error::invalid(format!(
                "unknown ensemble {other:?} (expected vote, average, greedy or stack)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ensembles: Vec<EnsembleKind>,
    /// Folds for the out-of-fold predictions behind the weights and the
    /// meta-learner.
    pub oof_folds: usize,
    pub learners: FitOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ensembles: EnsembleKind::ALL.to_vec(),
            oof_folds: 5,
            learners: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub label: LabelMapping,
    pub split: SplitConfig,
    pub outliers: OutlierStageConfig,
    pub augment: AugmentConfig,
    pub features: FeatureConfig,
    pub tune: TuneConfig,
    pub train: TrainConfig,
    pub greedy: GreedyConfig,
    pub blendnet: BlendNetConfig,
    pub evaluate: EvalSettings,
    /// Generator settings used when `paths.data` is absent.
    pub synth: Option<SynthConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            paths: Paths::default(),
            label: LabelMapping::default(),
            split: SplitConfig::default(),
            outliers: OutlierStageConfig::default(),
            augment: AugmentConfig::default(),
            features: FeatureConfig::default(),
            tune: TuneConfig::default(),
            train: TrainConfig::default(),
            greedy: GreedyConfig::default(),
            blendnet: BlendNetConfig::default(),
            evaluate: EvalSettings::default(),
            synth: None,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_relative(dir);
        }
        Ok(config)
    }

    /// Makes relative paths relative to `dir`.
    pub fn resolve_relative(&mut self, dir: &Path) {
        let out = Some(&mut self.paths.out_dir);
        for p in [self.paths.data.as_mut(), self.paths.schema.as_mut(), out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks values and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        match (&self.paths.data, &self.synth) {
            (None, None) => {
                return Err(Error::Config(
                    "paths.data is not set and no [synth] table is given".into(),
                ))
            }
            (Some(p), _) if !p.is_file() => {
                return Err(Error::Config(format!("data file {} does not exist", p.display())))
            }
            _ => {}
        }
        if let Some(p) = &self.paths.schema {
            if !p.is_file() {
                return Err(Error::Config(format!("schema file {} does not exist", p.display())));
            }
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config("split.test_fraction must lie in (0, 1)".into()));
        }
        augment::AugmentationPlan::from_counts([1, 1], self.augment.ratio, self.augment.noise_scale, 0)
            .map_err(|e| Error::Config(format!("augment: {e}")))?;
        if self.features.k == 0 {
            return Err(Error::Config("features.k must be at least 1".into()));
        }
        if self.features.cv_folds < 2 || self.tune.cv_folds < 2 || self.train.oof_folds < 2 {
            return Err(Error::Config("fold counts must be at least 2".into()));
        }
        if self.tune.max_rows.is_some_and(|m| m < 20) {
            return Err(Error::Config("tune.max_rows must be at least 20".into()));
        }
        if self.train.learners.mlp_max_iter == 0 {
            return Err(Error::Config("train.learners.mlp_max_iter must be positive".into()));
        }
        if self.train.ensembles.is_empty() {
            return Err(Error::Config("train.ensembles must name at least one ensemble".into()));
        }
        if self.tune.swarm.particles == 0 {
            return Err(Error::Config("tune.swarm.particles must be at least 1".into()));
        }
        self.greedy.validate()?;
        self.blendnet.validate()?;
        if !(self.evaluate.threshold > 0.0 && self.evaluate.threshold < 1.0) {
            return Err(Error::Config("evaluate.threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
