//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `MSURVCKP` |
//! | 4     | format version (`u32`) |
//! | 8     | metadata length `m` (`u64`) |
//! | m     | UTF-8 JSON [`Metadata`] |
//! | rest  | every tensor's `f64` values in metadata order |
//!
//! Values are stored as raw IEEE-754 bytes, so loading reproduces the saved
//! model bit for bit.

use std::path::Path;

use masksurv_core::baselines::{MlpConfig, MlpHazardModel};
use masksurv_core::dataset::{CohortTable, EncodedCohort, Preprocessor};
use masksurv_core::imputation::ImputerState;
use masksurv_core::{EncoderModel, HazardModel, ParamStore, SurvivalModelConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TimeUnit;
use crate::error::{in_module, Error, Result};

pub const MAGIC: &[u8; 8] = b"MSURVCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Transformer { config: SurvivalModelConfig },
    Mlp { config: MlpConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub model: ModelSpec,
    pub preprocessor: Preprocessor,
    pub imputer: Option<ImputerState>,
    pub time_unit: TimeUnit,
    /// Training-cohort mean CIF, the empty-coalition value for attribution.
    pub baseline_cif: Vec<f64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Transformer(EncoderModel),
    Mlp(MlpHazardModel),
}

impl TrainedModel {
    pub fn as_model(&self) -> &dyn HazardModel {
        match self {
            TrainedModel::Transformer(m) => m,
            TrainedModel::Mlp(m) => m,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainedModel::Transformer(_) => "transformer",
            TrainedModel::Mlp(_) => "mlp",
        }
    }

    fn spec(&self) -> ModelSpec {
        match self {
            TrainedModel::Transformer(m) => ModelSpec::Transformer {
                config: m.config().clone(),
            },
            TrainedModel::Mlp(m) => ModelSpec::Mlp {
                config: m.config().clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub preprocessor: Preprocessor,
    pub imputer: Option<ImputerState>,
    pub time_unit: TimeUnit,
    pub baseline_cif: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Encodes `table` exactly as the training data was: preprocessing,
    /// then imputation if the model was fitted on imputed data. Patients
    /// with no observed feature are left empty, as in cross-validation.
    pub fn encode(&self, table: &CohortTable) -> Result<EncodedCohort> {
        let mut enc = self.preprocessor.apply(table).map_err(in_module("dataset"))?;
        let Some(imp) = &self.imputer else {
            return Ok(enc);
        };
        let rows: Vec<usize> = (0..enc.len()).filter(|&i| enc.has_any_feature(i)).collect();
        let filled = imp.transform(&enc.subset(&rows)).map_err(in_module("imputation"))?;
        let w = enc.width;
        for (k, &i) in rows.iter().enumerate() {
            enc.values[i * w..(i + 1) * w].copy_from_slice(&filled.values[k * w..(k + 1) * w]);
            enc.available[i * w..(i + 1) * w].copy_from_slice(&filled.available[k * w..(k + 1) * w]);
        }
        Ok(enc)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.as_model().params();
        let meta = Metadata {
            model: self.model.spec(),
            preprocessor: self.preprocessor.clone(),
            imputer: self.imputer.clone(),
            time_unit: self.time_unit.clone(),
            baseline_cif: self.baseline_cif.clone(),
            tensors: params
                .names()
                .iter()
                .zip(params.tensors())
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * params.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, this build reads {FORMAT_VERSION}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < meta_len {
            return Err(bad("truncated metadata"));
        }
        let meta: Metadata =
            serde_json::from_slice(&body[..meta_len]).map_err(|e| bad(format!("metadata: {e}")))?;
        let mut data = body[meta_len..].chunks_exact(8);
        if !data.remainder().is_empty() {
            return Err(bad("tensor section is not a whole number of f64 values"));
        }
        let mut params = ParamStore::new();
        for entry in &meta.tensors {
            let n: usize = entry.shape.iter().product();
            let values: Vec<f64> = data
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if values.len() != n {
                return Err(bad(format!("tensor `{}` is truncated", entry.name)));
            }
            let t = Tensor::new(entry.shape.clone(), values).map_err(in_module("checkpoint"))?;
            params.push(entry.name.clone(), t);
        }
        if data.next().is_some() {
            return Err(bad("trailing tensor data"));
        }
        let model = match meta.model {
            ModelSpec::Transformer { config } => TrainedModel::Transformer(
                EncoderModel::from_parts(config, &params).map_err(in_module("checkpoint"))?,
            ),
            ModelSpec::Mlp { config } => TrainedModel::Mlp(
                MlpHazardModel::from_parts(config, &params).map_err(in_module("checkpoint"))?,
            ),
        };
        Ok(Checkpoint {
            model,
            preprocessor: meta.preprocessor,
            imputer: meta.imputer,
            time_unit: meta.time_unit,
            baseline_cif: meta.baseline_cif,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
