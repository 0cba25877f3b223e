//! Weibull proportional-hazards cohorts with independent exponential
//! censoring and MCAR missingness.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Cell, CohortTable, Column};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    pub levels: Vec<String>,
    /// Log-hazard contribution of each level; drawn uniformly.
    pub effects: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// One coefficient per standard-normal continuous feature `x1..xp`.
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub categorical: Vec<CategoricalSpec>,
    /// Weibull scale λ in `S(t|x) = exp(−λ t^ρ e^{βᵀx})`, time in months.
    pub baseline_scale: f64,
    /// Weibull shape ρ.
    pub weibull_shape: f64,
    /// Per-feature MCAR missingness probability.
    pub missing_rate: f64,
    /// Rate (per month) of the independent exponential censoring clock; 0 disables it.
    pub censoring_rate: f64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Parameter(format!(
                "missing rate {} must lie in [0, 1)",
                self.missing_rate
            )));
        }
        if !(self.baseline_scale > 0.0) || !(self.weibull_shape > 0.0) {
            return Err(Error::Parameter(
                "Weibull scale and shape must be positive".into(),
            ));
        }
        if !(self.censoring_rate >= 0.0) {
            return Err(Error::Parameter("censoring rate must be >= 0".into()));
        }
        for c in &self.categorical {
            if c.levels.is_empty() || c.levels.len() != c.effects.len() {
                return Err(Error::Parameter(format!(
                    "categorical `{}` needs one effect per level",
                    c.name
                )));
            }
        }
        if self.coefficients.is_empty() && self.categorical.is_empty() {
            return Err(Error::Parameter("generator has no features".into()));
        }
        Ok(())
    }

    pub fn columns(&self) -> Vec<Column> {
        let mut cols: Vec<Column> = (1..=self.coefficients.len())
            .map(|i| Column::continuous(format!("x{i}")))
            .collect();
        cols.extend(self.categorical.iter().map(|c| Column::categorical(c.name.clone())));
        cols
    }

    /// Inverse-CDF draw of the event time given the linear predictor.
    pub fn event_time(&self, linear_predictor: f64, unit_exponential: f64) -> f64 {
        let rate = self.baseline_scale * libm::exp(linear_predictor);
        libm::pow(unit_exponential / rate, 1.0 / self.weibull_shape)
    }

    /// Draws the complete (unmasked) covariates of one patient and returns
    /// them with the linear predictor.
    pub fn draw_covariates<R: Rng>(&self, rng: &mut R) -> (Vec<Cell>, f64) {
        let mut cells = Vec::with_capacity(self.coefficients.len() + self.categorical.len());
        let mut eta = 0.0;
        for &b in &self.coefficients {
            let x: f64 = StandardNormal.sample(rng);
            eta += b * x;
            cells.push(Cell::Value(x));
        }
        for c in &self.categorical {
            let k = rng.random_range(0..c.levels.len());
            eta += c.effects[k];
            cells.push(Cell::Level(c.levels[k].clone()));
        }
        (cells, eta)
    }
}

/// Draws `n` patients. Bit-reproducible for a fixed `seed`.
pub fn generate_synthetic(n: usize, spec: &GeneratorSpec, seed: u64) -> Result<CohortTable> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Parameter("cohort size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut cells, eta) = spec.draw_covariates(&mut rng);
        let e: f64 = Exp1.sample(&mut rng);
        let t_event = spec.event_time(eta, e);
        let t_censor = if spec.censoring_rate > 0.0 {
            let c: f64 = Exp1.sample(&mut rng);
            c / spec.censoring_rate
        } else {
            f64::INFINITY
        };
        for cell in &mut cells {
            if rng.random::<f64>() < spec.missing_rate {
                *cell = Cell::Missing;
            }
        }
        rows.push(cells);
        if t_event <= t_censor {
            times.push(t_event);
            events.push(true);
        } else {
            times.push(t_censor);
            events.push(false);
        }
    }
    CohortTable::new(spec.columns(), rows, times, events)
}
