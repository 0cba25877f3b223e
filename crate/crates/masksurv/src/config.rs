//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! profile = "toy"            # or "paper"
//! time_units = ["1m", "1y", "2y"]
//! horizon_months = 72
//! folds = 5
//! parallel_folds = 1
//!
//! [data]
//! path = "cohort.csv"        # relative to this file
//!
//! # or, instead of `path`:
//! [data.generator]
//! n = 500
//! coefficients = [1.0, -0.75, 0.5, 0.0]
//! baseline_scale = 0.0153
//! weibull_shape = 1.2
//! missing_rate = 0.3
//! censoring_rate = 0.01
//!
//! [model]                    # overrides of the profile's architecture
//! n_layers = 2
//!
//! [trainer]                  # overrides of the profile's schedule
//! learning_rate = 1e-3
//! w1 = 1.0
//! w2 = 1.0
//!
//! [baselines]
//! models = ["cox", "mlp"]
//! imputers = ["mean", "knn"]
//! knn_neighbors = 5
//! mlp_hidden = [128, 128]
//! cox_max_iter = 100
//!
//! [attribution]
//! max_patients = 50
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use masksurv_core::baselines::{CoxConfig, MlpConfig};
use masksurv_core::dataset::{CategoricalSpec, GeneratorSpec};
use masksurv_core::imputation::ImputeStrategy;
use masksurv_core::loss::LossWeights;
use masksurv_core::train::TrainConfig;
use masksurv_core::SurvivalModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 2 layers, 4 heads, width 32, short schedule.
    #[default]
    Toy,
    /// 12 layers, 17 heads, FFN 3072, up to 1500 epochs.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Toy => "toy",
            Profile::Paper => "paper",
        })
    }
}

/// A discretization unit such as `1m`, `1y` or `2y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TimeUnit {
    pub label: String,
    pub months: f64,
}

impl FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Usage(format!("time unit `{s}`: expected <count>m or <count>y, e.g. 1m, 1y, 2y"));
        let (count, per) = match s.chars().last() {
            Some('m') => (&s[..s.len() - 1], 1.0),
            Some('y') => (&s[..s.len() - 1], 12.0),
            _ => return Err(bad()),
        };
        let count: f64 = count.parse().map_err(|_| bad())?;
        if !(count > 0.0) || !count.is_finite() {
            return Err(bad());
        }
        Ok(TimeUnit {
            label: s.to_string(),
            months: count * per,
        })
    }
}

impl TryFrom<String> for TimeUnit {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TimeUnit> for String {
    fn from(u: TimeUnit) -> String {
        u.label
    }
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    /// Defaults to the run's master seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub spec: GeneratorSpec,
}

impl Default for GeneratorConfig {
    /// Strong-signal cohort with 30% MCAR missingness.
    fn default() -> Self {
        GeneratorConfig {
            n: 500,
            seed: None,
            spec: GeneratorSpec {
                coefficients: vec![1.0, -0.75, 0.5, 0.0],
                categorical: vec![CategoricalSpec {
                    name: "stage".into(),
                    levels: vec!["I".into(), "II".into(), "III".into()],
                    effects: vec![0.0, 0.4, 0.8],
                }],
                baseline_scale: 0.0153,
                weibull_shape: 1.2,
                missing_rate: 0.3,
                censoring_rate: 0.01,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub model_dim: Option<usize>,
    pub ffn_hidden: Option<usize>,
    pub layer_norm_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerOverrides {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub lr_patience: Option<usize>,
    pub lr_decay: Option<f64>,
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub sigma: Option<f64>,
    pub min_improvement: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineModel {
    Cox,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputerName {
    Mean,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub models: Vec<BaselineModel>,
    pub imputers: Vec<ImputerName>,
    pub knn_neighbors: usize,
    pub mlp_hidden: Vec<usize>,
    pub cox_max_iter: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            models: vec![BaselineModel::Cox, BaselineModel::Mlp],
            imputers: vec![ImputerName::Mean, ImputerName::Knn],
            knn_neighbors: masksurv_core::imputation::DEFAULT_NEIGHBORS,
            mlp_hidden: vec![128, 128],
            cox_max_iter: 100,
        }
    }
}

impl BaselineConfig {
    pub fn strategy(&self, imputer: ImputerName) -> ImputeStrategy {
        match imputer {
            ImputerName::Mean => ImputeStrategy::Mean,
            ImputerName::Knn => ImputeStrategy::Knn {
                k: self.knn_neighbors,
            },
        }
    }

    pub fn cox(&self) -> CoxConfig {
        CoxConfig {
            max_iter: self.cox_max_iter,
            ..CoxConfig::default()
        }
    }

    pub fn mlp(&self, n_features: usize, n_bins: usize, seed: u64) -> MlpConfig {
        MlpConfig {
            hidden: self.mlp_hidden.clone(),
            ..MlpConfig::default_for(n_features, n_bins, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionConfig {
    /// Patients explained by `attribute`, taken in file order.
    pub max_patients: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig { max_patients: 50 }
    }
}

fn default_units() -> Vec<TimeUnit> {
    ["1m", "1y", "2y"].iter().map(|s| s.parse().expect("valid")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub time_units: Vec<TimeUnit>,
    pub horizon_months: f64,
    pub folds: usize,
    /// Folds trained at once; 1 runs them sequentially.
    pub parallel_folds: usize,
    pub data: DataConfig,
    pub model: ModelOverrides,
    pub trainer: TrainerOverrides,
    pub baselines: BaselineConfig,
    pub attribution: AttributionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            profile: Profile::Toy,
            time_units: default_units(),
            horizon_months: 72.0,
            folds: 5,
            parallel_folds: 1,
            data: DataConfig::default(),
            model: ModelOverrides::default(),
            trainer: TrainerOverrides::default(),
            baselines: BaselineConfig::default(),
            attribution: AttributionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative data path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(p) = cfg.data.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Report(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Usage(m));
        if self.time_units.is_empty() {
            return usage("at least one time unit is required".into());
        }
        if !(self.horizon_months > 0.0) {
            return usage(format!("horizon_months = {}", self.horizon_months));
        }
        if self.folds < 2 {
            return usage(format!("folds = {}; need at least 2", self.folds));
        }
        if self.parallel_folds == 0 {
            return usage("parallel_folds must be at least 1".into());
        }
        if self.data.path.is_some() && self.data.generator.is_some() {
            return usage("data: give either `path` or `generator`, not both".into());
        }
        if self.baselines.knn_neighbors == 0 {
            return usage("baselines.knn_neighbors must be at least 1".into());
        }
        Ok(())
    }

    pub fn generator(&self) -> GeneratorConfig {
        self.data.generator.clone().unwrap_or_default()
    }

    pub fn generator_seed(&self) -> u64 {
        self.generator().seed.unwrap_or(self.seed)
    }

    /// Profile architecture for `n_features` inputs and `n_bins` outputs,
    /// with config overrides applied.
    pub fn model_config(&self, n_features: usize, n_bins: usize, seed: u64) -> SurvivalModelConfig {
        let mut c = match self.profile {
            Profile::Toy => SurvivalModelConfig::toy(n_features, n_bins, seed),
            Profile::Paper => SurvivalModelConfig::paper(n_features, n_bins, seed),
        };
        let o = &self.model;
        c.n_layers = o.n_layers.unwrap_or(c.n_layers);
        c.n_heads = o.n_heads.unwrap_or(c.n_heads);
        c.model_dim = o.model_dim.unwrap_or(c.model_dim);
        c.ffn_hidden = o.ffn_hidden.unwrap_or(c.ffn_hidden);
        c.layer_norm_eps = o.layer_norm_eps.unwrap_or(c.layer_norm_eps);
        c
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut c = match self.profile {
            Profile::Toy => TrainConfig::toy(),
            Profile::Paper => TrainConfig::default(),
        };
        let o = &self.trainer;
        c.batch_size = o.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = o.learning_rate.unwrap_or(c.learning_rate);
        c.max_epochs = o.max_epochs.unwrap_or(c.max_epochs);
        c.early_stop_patience = o.early_stop_patience.unwrap_or(c.early_stop_patience);
        c.lr_patience = o.lr_patience.unwrap_or(c.lr_patience);
        c.lr_decay = o.lr_decay.unwrap_or(c.lr_decay);
        c.sigma = o.sigma.unwrap_or(c.sigma);
        c.min_improvement = o.min_improvement.unwrap_or(c.min_improvement);
        c.weights = LossWeights {
            w1: o.w1.unwrap_or(c.weights.w1),
            w2: o.w2.unwrap_or(c.weights.w2),
        };
        c.seed = seed;
        c.validate().map_err(|e| Error::Usage(format!("trainer: {e}")))?;
        Ok(c)
    }
}
