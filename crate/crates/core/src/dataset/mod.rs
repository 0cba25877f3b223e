//! Cohort tables, preprocessing, synthetic cohorts and stratified splits.

mod folds;
mod preprocess;
mod synthetic;

pub use folds::{stratified_holdout, stratified_kfold, FoldSplit, VALIDATION_FRACTION};
pub use preprocess::{
    fit_apply_preprocessor, EncodedCohort, FeatureGroup, FeatureRow, GroupEncoding, Preprocessor,
};
pub use synthetic::{generate_synthetic, CategoricalSpec, GeneratorSpec};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Missing,
    Value(f64),
    Level(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Raw per-patient records: one cell per column (possibly missing), the
/// observed survival time in months and the event indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    columns: Vec<Column>,
    rows: Vec<Vec<Cell>>,
    survival_months: Vec<f64>,
    event: Vec<bool>,
}

impl CohortTable {
    pub fn new(
        columns: Vec<Column>,
        rows: Vec<Vec<Cell>>,
        survival_months: Vec<f64>,
        event: Vec<bool>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", c.name)));
            }
        }
        if rows.len() != survival_months.len() || rows.len() != event.len() {
            return Err(Error::Schema(format!(
                "{} rows, {} survival times, {} event flags",
                rows.len(),
                survival_months.len(),
                event.len()
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::Schema(format!(
                    "row {r}: {} cells for {} columns",
                    row.len(),
                    columns.len()
                )));
            }
            for (cell, col) in row.iter().zip(&columns) {
                let ok = match (col.kind, cell) {
                    (_, Cell::Missing) => true,
                    (ColumnKind::Continuous, Cell::Value(v)) => v.is_finite(),
                    (ColumnKind::Categorical, Cell::Level(_)) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Schema(format!(
                        "row {r}, column `{}`: cell {:?} does not fit kind {:?}",
                        col.name, cell, col.kind
                    )));
                }
            }
            let s = survival_months[r];
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Schema(format!("row {r}: survival time {s} must be >= 0")));
            }
        }
        Ok(CohortTable {
            columns,
            rows,
            survival_months,
            event,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn survival_months(&self) -> &[f64] {
        &self.survival_months
    }

    pub fn events(&self) -> &[bool] {
        &self.event
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_missing()).count()
    }

    pub fn subset(&self, index: &[usize]) -> CohortTable {
        CohortTable {
            columns: self.columns.clone(),
            rows: index.iter().map(|&i| self.rows[i].clone()).collect(),
            survival_months: index.iter().map(|&i| self.survival_months[i]).collect(),
            event: index.iter().map(|&i| self.event[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn duplicate_column_rejected() {
        let r = CohortTable::new(
            vec![Column::continuous("age"), Column::continuous("age")],
            vec![],
            vec![],
            vec![],
        );
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn negative_survival_rejected() {
        let r = CohortTable::new(
            vec![Column::continuous("age")],
            vec![vec![Cell::Value(1.0)]],
            vec![-1.0],
            vec![true],
        );
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let r = CohortTable::new(
            vec![Column::continuous("age")],
            vec![vec![Cell::Level("M".into())]],
            vec![1.0],
            vec![true],
        );
        assert!(matches!(r, Err(Error::Schema(_))));
    }
}
