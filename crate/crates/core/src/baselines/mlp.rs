//! DeepHit-style multilayer perceptron with a softmax hazard head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedCohort, FeatureRow};
use crate::error::{Error, Result};
use crate::nn::{xavier_uniform, HazardModel, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub n_features: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl MlpConfig {
    /// Two hidden layers of 128 ReLU units.
    pub fn default_for(n_features: usize, n_bins: usize, seed: u64) -> Self {
        MlpConfig {
            hidden: vec![128, 128],
            n_features,
            n_bins,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHazardModel {
    config: MlpConfig,
    params: ParamStore,
}

impl MlpHazardModel {
    pub fn new(config: MlpConfig) -> Result<Self> {
        if config.n_features == 0 || config.n_bins < 2 || config.hidden.contains(&0) {
            return Err(Error::Configuration(format!("invalid MLP shape {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut fan_in = config.n_features;
        for (l, &h) in config.hidden.iter().enumerate() {
            params.push(format!("hidden.{l}.weight"), xavier_uniform(&mut rng, fan_in, h));
            params.push(format!("hidden.{l}.bias"), Tensor::zeros(&[h]));
            fan_in = h;
        }
        params.push("head.weight", xavier_uniform(&mut rng, fan_in, config.n_bins));
        params.push("head.bias", Tensor::zeros(&[config.n_bins]));
        Ok(MlpHazardModel { config, params })
    }

    /// Rebuilds a model from its config and a stored parameter set.
    pub fn from_parts(config: MlpConfig, params: &ParamStore) -> Result<Self> {
        let mut m = MlpHazardModel::new(config)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }
}

impl HazardModel for MlpHazardModel {
    fn n_bins(&self) -> usize {
        self.config.n_bins
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn hazard_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &[Var],
        row: FeatureRow<'_>,
    ) -> Result<Var> {
        if row.values.len() != self.config.n_features {
            return Err(Error::Contract(format!(
                "row has {} features, MLP expects {}",
                row.values.len(),
                self.config.n_features
            )));
        }
        if !self.accepts(row) {
            return Err(Error::Contract("MLP input has missing cells (impute first)".into()));
        }
        let mut h = tape.constant(Tensor::row(row.values.to_vec()));
        let n_hidden = self.config.hidden.len();
        for l in 0..n_hidden {
            h = tape.matmul(h, params[2 * l])?;
            h = tape.add(h, params[2 * l + 1])?;
            h = tape.relu(h);
        }
        let logits = tape.matmul(h, params[2 * n_hidden])?;
        let logits = tape.add(logits, params[2 * n_hidden + 1])?;
        tape.softmax_with_mask(logits, None)
    }

    fn accepts(&self, row: FeatureRow<'_>) -> bool {
        row.available.iter().all(|&a| a)
    }
}

/// Builds the MLP and trains it with the shared loop.
pub fn fit_mlp_deephit(
    train_set: &EncodedCohort,
    val_set: &EncodedCohort,
    config: MlpConfig,
    train_config: &TrainConfig,
) -> Result<(MlpHazardModel, TrainOutcome)> {
    if train_set.has_missing() || val_set.has_missing() {
        return Err(Error::Contract("MLP baseline needs fully imputed cohorts".into()));
    }
    let mut model = MlpHazardModel::new(config)?;
    let outcome = train(&mut model, train_set, val_set, train_config)?;
    Ok((model, outcome))
}
