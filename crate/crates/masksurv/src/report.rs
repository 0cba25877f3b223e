//! Files written into a run directory. Everything here is a pure function of
//! the results, so equal results give byte-equal files.

use std::fs;
use std::path::Path;

use masksurv_core::attribution::AttributionReport;
use masksurv_core::train::EpochRecord;
use serde::Serialize;

use crate::experiment::{pooled_errors, Ablation, AggregateRow, CrossValidation, FoldReport};
use crate::error::{Error, Result};

pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const AGGREGATE_LONG_CSV: &str = "aggregate_long.csv";
pub const ERROR_BY_TIME_CSV: &str = "error_by_time.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_FOLDS_CSV: &str = "ablation_folds.csv";
pub const ATTRIBUTION_CSV: &str = "attribution_long.csv";
pub const ATTRIBUTION_JSON: &str = "attribution_summary.json";

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Report(format!("{}: {e}", path.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

/// `mean ± se` of a concordance in percent, two decimals.
pub fn percent_cell(mean: f64, se: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * se)
}

/// Rows model × imputer, one column per time unit.
pub fn aggregate_table(rows: &[AggregateRow], units: &[String]) -> Vec<Vec<String>> {
    let mut header = vec!["model".to_string(), "imputer".to_string()];
    header.extend(units.iter().cloned());
    let mut out = vec![header];
    let mut seen: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.model.as_str(), r.imputer.as_str());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let mut line = vec![r.model.clone(), r.imputer.clone()];
        for u in units {
            let cell = rows
                .iter()
                .find(|x| (x.model.as_str(), x.imputer.as_str()) == key && &x.time_unit == u)
                .map_or_else(String::new, |x| percent_cell(x.mean_ct, x.se_ct));
            line.push(cell);
        }
        out.push(line);
    }
    out
}

pub fn write_curves(path: &Path, curves: &[EpochRecord]) -> Result<()> {
    write_rows(path, curves)
}

#[derive(Serialize)]
struct FoldFile<'a> {
    fold: usize,
    reports: Vec<&'a FoldReport>,
}

fn write_folds(dir: &Path, reports: &[FoldReport], folds: usize, curve_tag: &dyn Fn(&FoldReport) -> String) -> Result<()> {
    for k in 0..folds {
        let file = FoldFile {
            fold: k,
            reports: reports.iter().filter(|r| r.fold == k).collect(),
        };
        write_json(&dir.join(format!("fold_{k}.json")), &file)?;
    }
    let curves = dir.join("curves");
    if reports.iter().any(|r| !r.curves.is_empty()) {
        fs::create_dir_all(&curves).map_err(Error::io(&curves))?;
    }
    for r in reports.iter().filter(|r| !r.curves.is_empty()) {
        write_curves(&curves.join(format!("{}_fold{}.csv", curve_tag(r), r.fold)), &r.curves)?;
    }
    Ok(())
}

pub fn write_cross_validation(dir: &Path, cv: &CrossValidation) -> Result<()> {
    write_folds(dir, &cv.reports, cv.folds, &|r| {
        format!("{}_{}_{}", r.model, r.imputer, r.time_unit)
    })?;
    let units: Vec<String> = cv.units.iter().map(|u| u.label.clone()).collect();
    let path = dir.join(AGGREGATE_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for line in aggregate_table(&cv.aggregate, &units) {
        w.write_record(&line).map_err(csv_err(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;
    write_rows(&dir.join(AGGREGATE_LONG_CSV), &cv.aggregate)?;
    write_rows(&dir.join(ERROR_BY_TIME_CSV), pooled_errors(&cv.reports))
}

#[derive(Serialize)]
struct AblationFoldRow<'a> {
    w1: f64,
    w2: f64,
    time_unit: &'a str,
    fold: usize,
    test_ct_index: f64,
    best_epoch: Option<usize>,
    epochs_run: Option<usize>,
    best_val_loss: Option<f64>,
    best_val_l1: Option<f64>,
    best_val_l2: Option<f64>,
}

pub fn write_ablation(dir: &Path, ab: &Ablation) -> Result<()> {
    write_folds(dir, &ab.reports, ab.folds, &|r| {
        format!("w{}-{}_{}", r.weights.w1, r.weights.w2, r.time_unit)
    })?;
    write_rows(&dir.join(ABLATION_CSV), &ab.arms)?;
    write_rows(
        &dir.join(ABLATION_FOLDS_CSV),
        ab.reports.iter().map(|r| AblationFoldRow {
            w1: r.weights.w1,
            w2: r.weights.w2,
            time_unit: &r.time_unit,
            fold: r.fold,
            test_ct_index: r.test_ct_index,
            best_epoch: r.best_epoch,
            epochs_run: r.epochs_run,
            best_val_loss: r.best_val_loss,
            best_val_l1: r.best_val_l1,
            best_val_l2: r.best_val_l2,
        }),
    )
}

#[derive(Serialize)]
struct PhiRow<'a> {
    patient: usize,
    feature: &'a str,
    time: usize,
    phi: f64,
}

#[derive(Serialize)]
struct AttributionSummary<'a> {
    time_unit: &'a str,
    n_patients: usize,
    n_bins: usize,
    /// Cohort row ids of the explained patients.
    patients: &'a [usize],
    empty_coalition: &'a [f64],
    empty_coalition_note: &'static str,
    features_missing_note: &'static str,
    importance: &'a [masksurv_core::attribution::FeatureImportance],
}

pub fn write_attribution(dir: &Path, report: &AttributionReport, patients: &[usize], time_unit: &str) -> Result<()> {
    let mut rows = Vec::with_capacity(report.phi.len());
    for (p, &id) in patients.iter().enumerate() {
        for (f, name) in report.features.iter().enumerate() {
            for t in 0..report.n_bins {
                rows.push(PhiRow {
                    patient: id,
                    feature: name,
                    time: t,
                    phi: report.phi_at(p, f, t),
                });
            }
        }
    }
    write_rows(&dir.join(ATTRIBUTION_CSV), rows)?;
    write_json(
        &dir.join(ATTRIBUTION_JSON),
        &AttributionSummary {
            time_unit,
            n_patients: report.n_patients,
            n_bins: report.n_bins,
            patients,
            empty_coalition: &report.empty_coalition,
            empty_coalition_note: "v(empty) is the mean predicted CIF over the training cohort; the model cannot score a patient with no features",
            features_missing_note: "features missing for a patient are absent players and get phi = 0",
            importance: &report.summary,
        },
    )
}
