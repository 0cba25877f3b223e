//! Exact Shapley attribution by evaluating the model on masked coalitions of
//! original features.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedCohort, FeatureGroup, FeatureRow};
use crate::error::{Error, Result};
use crate::nn::HazardModel;

/// Largest number of available features enumerated exactly.
pub const MAX_EXACT_FEATURES: usize = 20;

/// `|S|!(d-|S|-1)!/d!` for every coalition size `|S|` in `0..d`.
fn coalition_weights(d: usize) -> Vec<f64> {
    // 1 / (d * C(d-1, s))
    let mut out = Vec::with_capacity(d);
    let mut binom = 1.0;
    for s in 0..d {
        out.push(1.0 / (d as f64 * binom));
        binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
    }
    out
}

/// Exact Shapley values for `players` players whose vector-valued game is
/// `value(mask)`, with `mask[k]` marking player `k` present. Returns a
/// `players × T` row-major table.
pub fn shapley_values<F>(players: usize, mut value: F) -> Result<Vec<f64>>
where
    F: FnMut(&[bool]) -> Result<Vec<f64>>,
{
    if players > MAX_EXACT_FEATURES {
        return Err(Error::Complexity {
            features: players,
            limit: MAX_EXACT_FEATURES,
        });
    }
    if players == 0 {
        return Ok(Vec::new());
    }
    let n_sets = 1usize << players;
    let mut mask = vec![false; players];
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(n_sets);
    for set in 0..n_sets {
        for (k, m) in mask.iter_mut().enumerate() {
            *m = set >> k & 1 == 1;
        }
        values.push(value(&mask)?);
    }
    let t = values[0].len();
    if values.iter().any(|v| v.len() != t) {
        return Err(Error::Contract("coalition values differ in length".into()));
    }
    let w = coalition_weights(players);
    let mut phi = vec![0.0; players * t];
    for set in 0..n_sets {
        let size = set.count_ones() as usize;
        for k in 0..players {
            if set >> k & 1 == 1 {
                continue;
            }
            let with = &values[set | 1 << k];
            let without = &values[set];
            for s in 0..t {
                phi[k * t + s] += w[size] * (with[s] - without[s]);
            }
        }
    }
    Ok(phi)
}

/// Shapley values of one patient's CIF over the feature groups. Features
/// missing in the patient get zero; the empty coalition scores `empty_value`.
/// Returns a `groups × T` table.
pub fn explain_row<M: HazardModel + ?Sized>(
    model: &M,
    row: FeatureRow<'_>,
    groups: &[FeatureGroup],
    empty_value: &[f64],
) -> Result<Vec<f64>> {
    let t = model.n_bins();
    if empty_value.len() != t {
        return Err(Error::Contract(format!(
            "empty-coalition value has length {}, expected {t}",
            empty_value.len()
        )));
    }
    let players: Vec<usize> = (0..groups.len())
        .filter(|&g| groups[g].columns().all(|c| row.available[c]))
        .collect();
    let mut masked = vec![false; row.available.len()];
    let local = shapley_values(players.len(), |mask| {
        if mask.iter().all(|&m| !m) {
            return Ok(empty_value.to_vec());
        }
        masked.iter_mut().for_each(|a| *a = false);
        for (k, &g) in players.iter().enumerate() {
            if mask[k] {
                for c in groups[g].columns() {
                    masked[c] = true;
                }
            }
        }
        model.predict_cif(FeatureRow {
            values: row.values,
            available: &masked,
        })
    })?;
    let mut phi = vec![0.0; groups.len() * t];
    for (k, &g) in players.iter().enumerate() {
        phi[g * t..(g + 1) * t].copy_from_slice(&local[k * t..(k + 1) * t]);
    }
    Ok(phi)
}

/// Mean CIF over the rows the model can score; the empty-coalition value.
pub fn mean_cif<M: HazardModel + ?Sized>(model: &M, cohort: &EncodedCohort) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.n_bins()];
    let mut n = 0usize;
    for i in 0..cohort.len() {
        let row = cohort.row(i);
        if !model.accepts(row) {
            continue;
        }
        for (a, f) in acc.iter_mut().zip(model.predict_cif(row)?) {
            *a += f;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Contract("no scorable patient for the baseline CIF".into()));
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub features: Vec<String>,
    pub n_patients: usize,
    pub n_bins: usize,
    /// Row-major `patients × features × T`.
    pub phi: Vec<f64>,
    /// Value assigned to the empty coalition.
    pub empty_coalition: Vec<f64>,
    pub summary: Vec<FeatureImportance>,
}

impl AttributionReport {
    pub fn phi_at(&self, patient: usize, feature: usize, t: usize) -> f64 {
        self.phi[(patient * self.features.len() + feature) * self.n_bins + t]
    }
}

/// Mean `|φ|` per feature over patients and times, largest first, ties by name.
pub fn summarize(phi: &[f64], features: &[String], n_bins: usize) -> Result<Vec<FeatureImportance>> {
    let stride = features.len() * n_bins;
    if stride == 0 || phi.is_empty() || phi.len() % stride != 0 {
        return Err(Error::Contract(format!(
            "phi of length {} does not tile {} features × {n_bins} bins",
            phi.len(),
            features.len()
        )));
    }
    let n = phi.len() / stride;
    let mut out: Vec<FeatureImportance> = features
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let total: f64 = (0..n)
                .flat_map(|p| {
                    let base = p * stride + f * n_bins;
                    phi[base..base + n_bins].iter()
                })
                .map(|v| libm::fabs(*v))
                .sum();
            FeatureImportance {
                feature: name.clone(),
                mean_abs_phi: total / (n * n_bins) as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(out)
}

/// Attribution for every patient of `cohort` the model can score. Rows the
/// model rejects get zero attribution.
pub fn attribute<M: HazardModel + ?Sized>(
    model: &M,
    cohort: &EncodedCohort,
    empty_value: &[f64],
) -> Result<AttributionReport> {
    let t = model.n_bins();
    let mut phi = Vec::with_capacity(cohort.len() * cohort.groups.len() * t);
    for i in 0..cohort.len() {
        let row = cohort.row(i);
        if cohort.has_any_feature(i) && model.accepts(row) {
            phi.extend(explain_row(model, row, &cohort.groups, empty_value)?);
        } else {
            phi.resize(phi.len() + cohort.groups.len() * t, 0.0);
        }
    }
    let features: Vec<String> = cohort.groups.iter().map(|g| g.name.clone()).collect();
    let summary = summarize(&phi, &features, t)?;
    Ok(AttributionReport {
        features,
        n_patients: cohort.len(),
        n_bins: t,
        phi,
        empty_coalition: empty_value.to_vec(),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Average marginal contribution over all orderings.
    fn permutation_oracle(d: usize, v: &dyn Fn(&[bool]) -> f64) -> Vec<f64> {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for k in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(k);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let all = perms((0..d).collect());
        let mut phi = vec![0.0; d];
        for order in &all {
            let mut mask = vec![false; d];
            for &k in order {
                let before = v(&mask);
                mask[k] = true;
                phi[k] += v(&mask) - before;
            }
        }
        phi.iter().map(|p| p / all.len() as f64).collect()
    }

    fn game(mask: &[bool]) -> f64 {
        let x = |k: usize| mask[k] as u8 as f64;
        1.5 * x(0) - 0.5 * x(1) + 2.0 * x(0) * x(2) + 0.25 * x(1) * x(2) * x(0)
    }

    #[test]
    fn matches_permutation_oracle() {
        let phi = shapley_values(3, |m| Ok(vec![game(m)])).unwrap();
        let oracle = permutation_oracle(3, &game);
        for k in 0..3 {
            assert!((phi[k] - oracle[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn efficiency_and_null_player() {
        let v = |m: &[bool]| (m[0] as u8 as f64) * 3.0 + (m[1] as u8 as f64) * (m[0] as u8 as f64);
        let phi = shapley_values(3, |m| Ok(vec![v(m)])).unwrap();
        assert!((phi.iter().sum::<f64>() - (v(&[true; 3]) - v(&[false; 3]))).abs() < 1e-12);
        assert!(phi[2].abs() < 1e-15);
    }

    #[test]
    fn complexity_limit() {
        let r = shapley_values(21, |_| Ok(vec![0.0]));
        assert_eq!(
            r.unwrap_err(),
            Error::Complexity {
                features: 21,
                limit: MAX_EXACT_FEATURES
            }
        );
    }

    #[test]
    fn summary_ties_sort_by_name() {
        let names = vec![String::from("b"), String::from("a")];
        let s = summarize(&[0.0, 0.0], &names, 1).unwrap();
        assert_eq!(s[0].feature, "a");
        let s = summarize(&[-0.3, 0.2], &names, 1).unwrap();
        assert_eq!(s[0].feature, "b");
        assert_eq!(s[0].mean_abs_phi, 0.3);
    }

    #[test]
    fn weights_sum_to_one_over_sets() {
        // Σ_s C(d-1, s) w(s) = 1
        let d = 6;
        let w = coalition_weights(d);
        let mut binom = 1.0;
        let mut total = 0.0;
        for (s, ws) in w.iter().enumerate() {
            total += binom * ws;
            binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
        }
        assert!((total - 1.0).abs() < 1e-14);
    }
}
