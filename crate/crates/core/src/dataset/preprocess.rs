use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Cell, CohortTable, ColumnKind};
use crate::error::{Error, Result};

/// Fitted encoding for one original feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroupEncoding {
    Continuous { name: String, mean: f64, std: f64 },
    Categorical { name: String, levels: Vec<String> },
}

impl GroupEncoding {
    pub fn name(&self) -> &str {
        match self {
            GroupEncoding::Continuous { name, .. } | GroupEncoding::Categorical { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            GroupEncoding::Continuous { .. } => 1,
            GroupEncoding::Categorical { levels, .. } => levels.len(),
        }
    }
}

/// Post-encoding columns `start..start + width` that came from one original feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub categorical: bool,
    pub start: usize,
    pub width: usize,
}

impl FeatureGroup {
    pub fn columns(&self) -> core::ops::Range<usize> {
        self.start..self.start + self.width
    }
}

/// z-score and one-hot statistics fitted on training rows, plus the time
/// discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub groups: Vec<GroupEncoding>,
    pub unit_months: f64,
    pub horizon_months: f64,
    pub n_bins: usize,
}

/// A borrowed view of one encoded patient.
#[derive(Debug, Clone, Copy)]
pub struct FeatureRow<'a> {
    pub values: &'a [f64],
    pub available: &'a [bool],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedCohort {
    /// Row-major `N × width`; missing cells hold 0.
    pub values: Vec<f64>,
    pub available: Vec<bool>,
    pub width: usize,
    pub groups: Vec<FeatureGroup>,
    pub time_bin: Vec<usize>,
    pub event: Vec<bool>,
    /// Observed time, truncated at the horizon.
    pub survival_months: Vec<f64>,
    pub n_bins: usize,
    pub unit_months: f64,
}

impl EncodedCohort {
    pub fn len(&self) -> usize {
        self.time_bin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_bin.is_empty()
    }

    pub fn row(&self, i: usize) -> FeatureRow<'_> {
        let r = i * self.width..(i + 1) * self.width;
        FeatureRow {
            values: &self.values[r.clone()],
            available: &self.available[r],
        }
    }

    /// Per-patient availability of each original feature.
    pub fn group_available(&self, i: usize, g: usize) -> bool {
        self.available[i * self.width + self.groups[g].start]
    }

    pub fn subset(&self, index: &[usize]) -> EncodedCohort {
        let mut values = Vec::with_capacity(index.len() * self.width);
        let mut available = Vec::with_capacity(index.len() * self.width);
        for &i in index {
            let r = self.row(i);
            values.extend_from_slice(r.values);
            available.extend_from_slice(r.available);
        }
        EncodedCohort {
            values,
            available,
            width: self.width,
            groups: self.groups.clone(),
            time_bin: index.iter().map(|&i| self.time_bin[i]).collect(),
            event: index.iter().map(|&i| self.event[i]).collect(),
            survival_months: index.iter().map(|&i| self.survival_months[i]).collect(),
            n_bins: self.n_bins,
            unit_months: self.unit_months,
        }
    }

    /// Whether any original feature is available for patient `i`.
    pub fn has_any_feature(&self, i: usize) -> bool {
        self.row(i).available.iter().any(|&a| a)
    }

    pub fn has_missing(&self) -> bool {
        self.available.iter().any(|&a| !a)
    }
}

/// Number of bins `horizon / unit`; the unit must divide the horizon.
pub(crate) fn bin_count(unit_months: f64, horizon_months: f64) -> Result<usize> {
    if !(unit_months > 0.0) || !(horizon_months > 0.0) {
        return Err(Error::Parameter(format!(
            "unit {unit_months} and horizon {horizon_months} must be positive"
        )));
    }
    let ratio = horizon_months / unit_months;
    let n = libm::round(ratio);
    if libm::fabs(ratio - n) > 1e-9 * ratio.max(1.0) || n < 1.0 {
        return Err(Error::Parameter(format!(
            "unit {unit_months} months does not divide horizon {horizon_months} months"
        )));
    }
    Ok(n as usize)
}

impl Preprocessor {
    /// Fits statistics on `train`. Means and standard deviations use only
    /// available cells; levels are the sorted distinct training values.
    pub fn fit(train: &CohortTable, unit_months: f64, horizon_months: f64) -> Result<Self> {
        let n_bins = bin_count(unit_months, horizon_months)?;
        let mut groups = Vec::with_capacity(train.columns().len());
        for (c, col) in train.columns().iter().enumerate() {
            match col.kind {
                ColumnKind::Continuous => {
                    let vals: Vec<f64> = train
                        .rows()
                        .iter()
                        .filter_map(|r| match r[c] {
                            Cell::Value(v) => Some(v),
                            _ => None,
                        })
                        .collect();
                    if vals.is_empty() {
                        return Err(Error::DegenerateColumn(col.name.clone()));
                    }
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = libm::sqrt(var);
                    if !(std > 1e-12 * libm::fabs(mean).max(1.0)) {
                        return Err(Error::DegenerateColumn(col.name.clone()));
                    }
                    groups.push(GroupEncoding::Continuous {
                        name: col.name.clone(),
                        mean,
                        std,
                    });
                }
                ColumnKind::Categorical => {
                    let levels: BTreeSet<&str> = train
                        .rows()
                        .iter()
                        .filter_map(|r| match &r[c] {
                            Cell::Level(s) => Some(s.as_str()),
                            _ => None,
                        })
                        .collect();
                    if levels.is_empty() {
                        return Err(Error::DegenerateColumn(col.name.clone()));
                    }
                    groups.push(GroupEncoding::Categorical {
                        name: col.name.clone(),
                        levels: levels.into_iter().map(String::from).collect(),
                    });
                }
            }
        }
        Ok(Preprocessor {
            groups,
            unit_months,
            horizon_months,
            n_bins,
        })
    }

    pub fn width(&self) -> usize {
        self.groups.iter().map(GroupEncoding::width).sum()
    }

    pub fn feature_groups(&self) -> Vec<FeatureGroup> {
        let mut start = 0;
        self.groups
            .iter()
            .map(|g| {
                let fg = FeatureGroup {
                    name: g.name().into(),
                    categorical: matches!(g, GroupEncoding::Categorical { .. }),
                    start,
                    width: g.width(),
                };
                start += g.width();
                fg
            })
            .collect()
    }

    /// Time bin and event after truncation at the horizon.
    pub fn discretize(&self, survival_months: f64, event: bool) -> (usize, bool) {
        if survival_months >= self.horizon_months {
            return (self.n_bins - 1, false);
        }
        let s = libm::floor(survival_months / self.unit_months) as usize;
        (s.min(self.n_bins - 1), event)
    }

    pub fn apply(&self, table: &CohortTable) -> Result<EncodedCohort> {
        if table.columns().len() != self.groups.len() {
            return Err(Error::Encoding(format!(
                "{} columns, preprocessor fitted on {}",
                table.columns().len(),
                self.groups.len()
            )));
        }
        for (col, g) in table.columns().iter().zip(&self.groups) {
            let kind_ok = matches!(
                (col.kind, g),
                (ColumnKind::Continuous, GroupEncoding::Continuous { .. })
                    | (ColumnKind::Categorical, GroupEncoding::Categorical { .. })
            );
            if col.name != g.name() || !kind_ok {
                return Err(Error::Encoding(format!(
                    "column `{}` does not match fitted feature `{}`",
                    col.name,
                    g.name()
                )));
            }
        }
        let width = self.width();
        let n = table.len();
        let mut values = vec![0.0; n * width];
        let mut available = vec![false; n * width];
        for (r, row) in table.rows().iter().enumerate() {
            let mut offset = r * width;
            for (cell, g) in row.iter().zip(&self.groups) {
                match (g, cell) {
                    (_, Cell::Missing) => {}
                    (GroupEncoding::Continuous { mean, std, .. }, Cell::Value(v)) => {
                        values[offset] = (v - mean) / std;
                        available[offset] = true;
                    }
                    (GroupEncoding::Categorical { name, levels }, Cell::Level(s)) => {
                        let k = levels.iter().position(|l| l == s).ok_or_else(|| {
                            Error::Encoding(format!(
                                "row {r}: category `{s}` of `{name}` unseen in training"
                            ))
                        })?;
                        values[offset + k] = 1.0;
                        for a in &mut available[offset..offset + levels.len()] {
                            *a = true;
                        }
                    }
                    _ => {
                        return Err(Error::Encoding(format!(
                            "row {r}: cell {cell:?} does not fit `{}`",
                            g.name()
                        )))
                    }
                }
                offset += g.width();
            }
        }
        let mut time_bin = Vec::with_capacity(n);
        let mut event = Vec::with_capacity(n);
        for (&s, &k) in table.survival_months().iter().zip(table.events()) {
            let (bin, ev) = self.discretize(s, k);
            time_bin.push(bin);
            event.push(ev);
        }
        Ok(EncodedCohort {
            values,
            available,
            width,
            groups: self.feature_groups(),
            time_bin,
            event,
            survival_months: table
                .survival_months()
                .iter()
                .map(|&s| s.min(self.horizon_months))
                .collect(),
            n_bins: self.n_bins,
            unit_months: self.unit_months,
        })
    }
}

/// Fits on `train` and encodes both tables with the training statistics.
pub fn fit_apply_preprocessor(
    train: &CohortTable,
    eval: &CohortTable,
    unit_months: f64,
    horizon_months: f64,
) -> Result<(EncodedCohort, EncodedCohort, Preprocessor)> {
    let pre = Preprocessor::fit(train, unit_months, horizon_months)?;
    let tr = pre.apply(train)?;
    let ev = pre.apply(eval)?;
    Ok((tr, ev, pre))
}
