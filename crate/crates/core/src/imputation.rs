//! Mean/mode and k-nearest-neighbour imputers for the baseline pipelines.
//!
//! Both work on encoded cohorts one original feature at a time, so the
//! one-hot block of a categorical feature is filled as a unit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedCohort, FeatureGroup};
use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum ImputeStrategy {
    Mean,
    Knn { k: usize },
}

impl ImputeStrategy {
    pub fn knn() -> Self {
        ImputeStrategy::Knn {
            k: DEFAULT_NEIGHBORS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ImputeStrategy::Mean => "mean",
            ImputeStrategy::Knn { .. } => "knn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerState {
    pub strategy: ImputeStrategy,
    groups: Vec<FeatureGroup>,
    width: usize,
    /// Column means, and the one-hot of the mode for categorical groups.
    fill: Vec<f64>,
    /// Training rows retained for neighbour search.
    train_values: Vec<f64>,
    train_available: Vec<bool>,
}

fn level_of(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
        .0
}

/// Most frequent level; ties go to the lowest level index.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

pub fn fit(strategy: ImputeStrategy, train: &EncodedCohort) -> Result<ImputerState> {
    if let ImputeStrategy::Knn { k } = strategy {
        if k == 0 {
            return Err(Error::Parameter("kNN imputer needs k >= 1".into()));
        }
    }
    let mut fill = vec![0.0; train.width];
    for (gi, g) in train.groups.iter().enumerate() {
        let rows: Vec<usize> = (0..train.len()).filter(|&i| train.group_available(i, gi)).collect();
        if rows.is_empty() {
            return Err(Error::Fit(format!("feature `{}` has no available training cell", g.name)));
        }
        if g.categorical {
            let mut counts = vec![0usize; g.width];
            for &i in &rows {
                counts[level_of(&train.row(i).values[g.columns()])] += 1;
            }
            fill[g.start + majority(&counts)] = 1.0;
        } else {
            let sum: f64 = rows.iter().map(|&i| train.row(i).values[g.start]).sum();
            fill[g.start] = sum / rows.len() as f64;
        }
    }
    let (train_values, train_available) = match strategy {
        ImputeStrategy::Mean => (Vec::new(), Vec::new()),
        ImputeStrategy::Knn { .. } => (train.values.clone(), train.available.clone()),
    };
    Ok(ImputerState {
        strategy,
        groups: train.groups.clone(),
        width: train.width,
        fill,
        train_values,
        train_available,
    })
}

impl ImputerState {
    pub fn fill_values(&self) -> &[f64] {
        &self.fill
    }

    /// nan-aware Euclidean distance: squared differences over coordinates
    /// available in both rows, rescaled by `width / shared`. `None` when no
    /// coordinate is shared.
    pub fn distance(&self, a: &[f64], a_avail: &[bool], b: &[f64], b_avail: &[bool]) -> Option<f64> {
        let mut shared = 0usize;
        let mut acc = 0.0;
        for c in 0..self.width {
            if a_avail[c] && b_avail[c] {
                shared += 1;
                let d = a[c] - b[c];
                acc += d * d;
            }
        }
        (shared > 0).then(|| libm::sqrt(acc * self.width as f64 / shared as f64))
    }

    pub fn transform(&self, cohort: &EncodedCohort) -> Result<EncodedCohort> {
        if cohort.width != self.width || cohort.groups != self.groups {
            return Err(Error::Imputation("column layout differs from the fitted one".into()));
        }
        let mut out = cohort.clone();
        let n_train = self.train_values.len() / self.width.max(1);
        for i in 0..cohort.len() {
            let missing: Vec<usize> = (0..self.groups.len())
                .filter(|&g| !cohort.group_available(i, g))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let row = cohort.row(i);
            let base = i * self.width;
            match self.strategy {
                ImputeStrategy::Mean => {
                    for &g in &missing {
                        for c in self.groups[g].columns() {
                            out.values[base + c] = self.fill[c];
                            out.available[base + c] = true;
                        }
                    }
                }
                ImputeStrategy::Knn { k } => {
                    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n_train);
                    for t in 0..n_train {
                        let r = t * self.width..(t + 1) * self.width;
                        if let Some(d) = self.distance(
                            row.values,
                            row.available,
                            &self.train_values[r.clone()],
                            &self.train_available[r],
                        ) {
                            dist.push((d, t));
                        }
                    }
                    if dist.is_empty() {
                        return Err(Error::Imputation(format!(
                            "row {i} shares no observed coordinate with any training row"
                        )));
                    }
                    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    for &g in &missing {
                        let grp = &self.groups[g];
                        let donors: Vec<usize> = dist
                            .iter()
                            .map(|&(_, t)| t)
                            .filter(|&t| self.train_available[t * self.width + grp.start])
                            .take(k)
                            .collect();
                        if donors.is_empty() {
                            return Err(Error::Imputation(format!(
                                "row {i}: no comparable training row observes `{}`",
                                grp.name
                            )));
                        }
                        let cell = |t: usize, c: usize| self.train_values[t * self.width + c];
                        if grp.categorical {
                            let mut counts = vec![0usize; grp.width];
                            for &t in &donors {
                                let vals: Vec<f64> = grp.columns().map(|c| cell(t, c)).collect();
                                counts[level_of(&vals)] += 1;
                            }
                            let pick = majority(&counts);
                            for (o, c) in grp.columns().enumerate() {
                                out.values[base + c] = if o == pick { 1.0 } else { 0.0 };
                            }
                        } else {
                            let sum: f64 = donors.iter().map(|&t| cell(t, grp.start)).sum();
                            out.values[base + grp.start] = sum / donors.len() as f64;
                        }
                        for c in grp.columns() {
                            out.available[base + c] = true;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
