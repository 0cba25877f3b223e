//! Run manifests: resolved configuration, input hash, timestamps and the
//! architectures actually instantiated.

use std::fs;
use std::path::Path;

use masksurv_core::encoder::Architecture;
use masksurv_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPlan {
    pub time_unit: String,
    pub unit_months: f64,
    pub n_bins: usize,
    pub architecture: Architecture,
    pub trainer: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub dry_run: bool,
    pub config: RunConfig,
    /// `sha256:<hex>` of the input cohort CSV bytes.
    pub input_hash: String,
    pub input: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub plans: Vec<UnitPlan>,
    /// Documented assumptions that shape the outputs.
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("sha256:{:x}", Sha256::digest(bytes))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, input: &str, input_bytes: &[u8], dry_run: bool) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed: config.seed,
            dry_run,
            config: config.clone(),
            input_hash: sha256_hex(input_bytes),
            input: input.into(),
            started_at: now(),
            finished_at: None,
            plans: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(Error::io(&path))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
    }

    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished_at = Some(now());
        self.write(dir)
    }
}
