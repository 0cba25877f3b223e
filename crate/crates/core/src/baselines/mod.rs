//! Comparison models fitted on imputed cohorts.

mod cox;
mod mlp;

pub use cox::{bin_edges, breslow_partial_loglik, fit_cox, fit_cox_cohort, CoxConfig, CoxModel};
pub use mlp::{fit_mlp_deephit, MlpConfig, MlpHazardModel};
