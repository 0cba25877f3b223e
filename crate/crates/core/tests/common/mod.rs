#![allow(dead_code)]

use masksurv_core::dataset::{
    fit_apply_preprocessor, generate_synthetic, CategoricalSpec, EncodedCohort, GeneratorSpec,
};

pub fn spec(coefficients: Vec<f64>, missing_rate: f64) -> GeneratorSpec {
    GeneratorSpec {
        coefficients,
        categorical: vec![CategoricalSpec {
            name: "stage".into(),
            levels: vec!["I".into(), "II".into(), "III".into()],
            effects: vec![0.0, 0.4, 0.8],
        }],
        baseline_scale: 0.0153,
        weibull_shape: 1.2,
        missing_rate,
        censoring_rate: 0.01,
    }
}

/// Generates and encodes a cohort with statistics fitted on itself.
pub fn encoded(n: usize, spec: &GeneratorSpec, seed: u64, unit_months: f64) -> EncodedCohort {
    let table = generate_synthetic(n, spec, seed).unwrap();
    fit_apply_preprocessor(&table, &table, unit_months, 72.0).unwrap().0
}

/// Small deterministic LCG in [0, 1) for fixtures that need no distribution.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next() * n as f64) as usize % n
    }
}
