//! Cross-validation, loss ablation and single-model training over a cohort.

use std::fmt;

use masksurv_core::attribution::mean_cif;
use masksurv_core::baselines::{bin_edges, fit_cox_cohort, fit_mlp_deephit, CoxConfig, MlpConfig};
use masksurv_core::dataset::{stratified_holdout, stratified_kfold, CohortTable, EncodedCohort, FoldSplit, Preprocessor};
use masksurv_core::imputation::{self, ImputerState};
use masksurv_core::loss::LossWeights;
use masksurv_core::metrics::{ct_index, RiskMatrix, Ties};
use masksurv_core::nn::cumulative;
use masksurv_core::train::{predict_hazards, train, EpochRecord, TrainConfig, TrainOutcome};
use masksurv_core::{EncoderModel, HazardModel, SurvivalModelConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, TrainedModel};
use crate::config::{BaselineModel, ImputerName, RunConfig, TimeUnit};
use crate::error::{in_module, Error, Result};
use crate::manifest::UnitPlan;

/// Loss weights `(w1, w2)` of the three ablation arms.
pub const ABLATION_ARMS: [(f64, f64); 3] = [(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Transformer,
    Cox(ImputerName),
    Mlp(ImputerName),
}

impl Pipeline {
    pub fn model(&self) -> &'static str {
        match self {
            Pipeline::Transformer => "transformer",
            Pipeline::Cox(_) => "cox",
            Pipeline::Mlp(_) => "mlp",
        }
    }

    pub fn imputer(&self) -> &'static str {
        match self {
            Pipeline::Transformer => "none",
            Pipeline::Cox(i) | Pipeline::Mlp(i) => imputer_name(*i),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.model(), self.imputer())
    }
}

fn imputer_name(i: ImputerName) -> &'static str {
    match i {
        ImputerName::Mean => "mean",
        ImputerName::Knn => "knn",
    }
}

/// The masked transformer first, then every configured baseline × imputer.
pub fn pipelines(cfg: &RunConfig) -> Vec<Pipeline> {
    let mut out = vec![Pipeline::Transformer];
    for &m in &cfg.baselines.models {
        for &i in &cfg.baselines.imputers {
            out.push(match m {
                BaselineModel::Cox => Pipeline::Cox(i),
                BaselineModel::Mlp => Pipeline::Mlp(i),
            });
        }
    }
    out
}

/// Stable per-purpose seed: the first 8 bytes of SHA-256 over the master
/// seed and the tags.
pub fn derive_seed(master: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for t in tags {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Sample mean and standard error (n − 1 denominator; 0 for one value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBin {
    /// True event bin.
    pub bin: usize,
    pub n: usize,
    /// Mean |predicted − observed| event time in months.
    pub mean_abs_error: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSeeds {
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub unit_months: f64,
    pub horizon_months: f64,
    pub n_bins: usize,
    pub n_features: usize,
    pub transformer: Option<SurvivalModelConfig>,
    pub mlp: Option<MlpConfig>,
    pub cox: Option<CoxConfig>,
    pub knn_neighbors: Option<usize>,
    pub trainer: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub model: String,
    pub imputer: String,
    pub time_unit: String,
    pub fold: usize,
    pub weights: LossWeights,
    pub test_ct_index: f64,
    pub n_test: usize,
    /// Test patients without any observed feature; no pipeline scores them.
    pub unpredictable: usize,
    /// Cohort row ids of the scored test patients.
    pub test_indices: Vec<usize>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub best_val_l1: Option<f64>,
    pub best_val_l2: Option<f64>,
    pub curves: Vec<EpochRecord>,
    pub error_by_time: Vec<ErrorBin>,
    pub cox: Option<CoxSummary>,
    pub seeds: FoldSeeds,
    pub config: ConfigSnapshot,
    /// `(true bin, |error| months)` per uncensored test patient.
    #[serde(skip)]
    pub(crate) errors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub imputer: String,
    pub time_unit: String,
    pub n_folds: usize,
    pub mean_ct: f64,
    pub se_ct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledErrorRow {
    pub model: String,
    pub imputer: String,
    pub time_unit: String,
    pub bin: usize,
    pub n: usize,
    pub mean_abs_error: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub units: Vec<TimeUnit>,
    pub folds: usize,
    /// Ordered by unit, fold, then pipeline.
    pub reports: Vec<FoldReport>,
    pub aggregate: Vec<AggregateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub w1: f64,
    pub w2: f64,
    pub time_unit: String,
    pub n_folds: usize,
    pub mean_ct: f64,
    pub se_ct: f64,
    pub mean_best_epoch: f64,
    pub mean_val_l1: f64,
    pub mean_val_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub units: Vec<TimeUnit>,
    pub folds: usize,
    pub reports: Vec<FoldReport>,
    pub arms: Vec<ArmSummary>,
}

struct FoldData {
    train: EncodedCohort,
    val: EncodedCohort,
    test: EncodedCohort,
    test_index: Vec<usize>,
    unpredictable: usize,
}

fn with_features(enc: &EncodedCohort, index: &[usize]) -> Vec<usize> {
    index.iter().copied().filter(|&i| enc.has_any_feature(i)).collect()
}

fn prepare(table: &CohortTable, split: &FoldSplit, unit: &TimeUnit, horizon: f64) -> Result<FoldData> {
    let pre = Preprocessor::fit(&table.subset(&split.train), unit.months, horizon).map_err(in_module("dataset"))?;
    let enc = pre.apply(table).map_err(in_module("dataset"))?;
    let train = with_features(&enc, &split.train);
    let val = with_features(&enc, &split.val);
    let test = with_features(&enc, &split.test);
    Ok(FoldData {
        train: enc.subset(&train),
        val: enc.subset(&val),
        test: enc.subset(&test),
        unpredictable: split.test.len() - test.len(),
        test_index: test,
    })
}

fn impute(
    strategy: imputation::ImputeStrategy,
    data: &FoldData,
) -> Result<(ImputerState, EncodedCohort, EncodedCohort, EncodedCohort)> {
    let state = imputation::fit(strategy, &data.train).map_err(in_module("imputation"))?;
    let t = |c: &EncodedCohort| state.transform(c).map_err(in_module("imputation"));
    let (tr, va, te) = (t(&data.train)?, t(&data.val)?, t(&data.test)?);
    Ok((state, tr, va, te))
}

/// Predicted event time `unit · (argmax y + 0.5)` against the observed time
/// for every uncensored patient.
fn prediction_errors(cifs: &[Vec<f64>], cohort: &EncodedCohort) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (i, cif) in cifs.iter().enumerate() {
        if !cohort.event[i] {
            continue;
        }
        let mut best = 0;
        let mut prev = 0.0;
        let mut best_mass = f64::NEG_INFINITY;
        for (t, &f) in cif.iter().enumerate() {
            if f - prev > best_mass {
                best_mass = f - prev;
                best = t;
            }
            prev = f;
        }
        let predicted = cohort.unit_months * (best as f64 + 0.5);
        out.push((cohort.time_bin[i], (predicted - cohort.survival_months[i]).abs()));
    }
    out
}

fn error_table(errors: &[(usize, f64)]) -> Vec<ErrorBin> {
    let mut bins: Vec<usize> = errors.iter().map(|e| e.0).collect();
    bins.sort_unstable();
    bins.dedup();
    bins.into_iter()
        .map(|b| {
            let v: Vec<f64> = errors.iter().filter(|e| e.0 == b).map(|e| e.1).collect();
            let (mean, se) = mean_se(&v);
            ErrorBin {
                bin: b,
                n: v.len(),
                mean_abs_error: mean,
                se,
            }
        })
        .collect()
}

fn scored(model: &dyn HazardModel, cohort: &EncodedCohort) -> Result<Vec<Vec<f64>>> {
    predict_hazards(model, cohort)
        .map_err(in_module("encoder_model"))?
        .into_iter()
        .map(|h| h.map(|h| cumulative(&h)).ok_or_else(|| Error::Report("unscorable test patient".into())))
        .collect()
}

struct Task<'a> {
    cfg: &'a RunConfig,
    unit: &'a TimeUnit,
    split: &'a FoldSplit,
    split_seed: u64,
}

impl Task<'_> {
    fn seeds(&self, p: Pipeline) -> FoldSeeds {
        let fold = self.split.fold.to_string();
        let tag = p.to_string();
        let tags = |purpose| [self.unit.label.as_str(), fold.as_str(), tag.as_str(), purpose];
        FoldSeeds {
            split: self.split_seed,
            init: derive_seed(self.cfg.seed, &tags("init")),
            shuffle: derive_seed(self.cfg.seed, &tags("shuffle")),
        }
    }

    fn run(&self, data: &FoldData, p: Pipeline, weights: Option<LossWeights>) -> Result<FoldReport> {
        let cfg = self.cfg;
        let seeds = self.seeds(p);
        let d = data.train.width;
        let n_bins = data.train.n_bins;
        let mut trainer = cfg.train_config(seeds.shuffle)?;
        if let Some(w) = weights {
            trainer.weights = w;
        }
        let mut snapshot = ConfigSnapshot {
            unit_months: self.unit.months,
            horizon_months: cfg.horizon_months,
            n_bins,
            n_features: d,
            transformer: None,
            mlp: None,
            cox: None,
            knn_neighbors: None,
            trainer: None,
        };
        if let Pipeline::Cox(ImputerName::Knn) | Pipeline::Mlp(ImputerName::Knn) = p {
            snapshot.knn_neighbors = Some(cfg.baselines.knn_neighbors);
        }
        let strategy = |i: ImputerName| cfg.baselines.strategy(i);
        let mut outcome: Option<TrainOutcome> = None;
        let mut cox = None;
        let (cifs, test) = match p {
            Pipeline::Transformer => {
                let mc = cfg.model_config(d, n_bins, seeds.init);
                let mut model = EncoderModel::new(mc.clone()).map_err(in_module("encoder_model"))?;
                outcome = Some(train(&mut model, &data.train, &data.val, &trainer).map_err(in_module("training"))?);
                snapshot.transformer = Some(mc);
                snapshot.trainer = Some(trainer);
                (scored(&model, &data.test)?, &data.test)
            }
            Pipeline::Mlp(i) => {
                let (_, tr, va, te) = impute(strategy(i), data)?;
                let mc = cfg.baselines.mlp(d, n_bins, seeds.init);
                let (model, o) =
                    fit_mlp_deephit(&tr, &va, mc.clone(), &trainer).map_err(in_module("baselines"))?;
                outcome = Some(o);
                snapshot.mlp = Some(mc);
                snapshot.trainer = Some(trainer);
                (scored(&model, &te)?, &data.test)
            }
            Pipeline::Cox(i) => {
                let (_, tr, _, te) = impute(strategy(i), data)?;
                let cc = cfg.baselines.cox();
                let model = fit_cox_cohort(&tr, cc).map_err(in_module("baselines"))?;
                let edges = bin_edges(n_bins, self.unit.months);
                let cifs = (0..te.len())
                    .map(|r| model.predict_row(te.row(r), &edges))
                    .collect::<masksurv_core::Result<Vec<_>>>()
                    .map_err(in_module("baselines"))?;
                cox = Some(CoxSummary {
                    iterations: model.iterations,
                    converged: model.converged,
                    final_loglik: *model.loglik_trace.last().expect("initial entry"),
                    beta: model.beta.clone(),
                });
                snapshot.cox = Some(cc);
                (cifs, &data.test)
            }
        };
        let risks = RiskMatrix::new(cifs.clone(), test.time_bin.clone(), test.event.clone())
            .map_err(in_module("metrics"))?;
        let ct = ct_index(&risks, Ties::Strict).map_err(in_module("metrics"))?;
        let errors = prediction_errors(&cifs, test);
        let best = outcome
            .as_ref()
            .filter(|o| o.best_epoch > 0)
            .map(|o| o.curves[o.best_epoch - 1]);
        Ok(FoldReport {
            model: p.model().into(),
            imputer: p.imputer().into(),
            time_unit: self.unit.label.clone(),
            fold: self.split.fold,
            weights: trainer.weights,
            test_ct_index: ct,
            n_test: test.len(),
            unpredictable: data.unpredictable,
            test_indices: data.test_index.clone(),
            best_epoch: outcome.as_ref().map(|o| o.best_epoch),
            epochs_run: outcome.as_ref().map(|o| o.curves.len()),
            best_val_loss: best.map(|r| r.val_loss),
            best_val_l1: best.map(|r| r.val_l1),
            best_val_l2: best.map(|r| r.val_l2),
            curves: outcome.map(|o| o.curves).unwrap_or_default(),
            error_by_time: error_table(&errors),
            cox,
            seeds,
            config: snapshot,
            errors,
        })
    }
}

fn fold_error(stage: &'static str, unit: &TimeUnit, fold: usize, pipeline: String) -> impl FnOnce(Error) -> Error {
    let unit = unit.label.clone();
    move |source| Error::Fold {
        stage,
        unit,
        fold,
        pipeline,
        source: Box::new(source),
    }
}

/// Runs `job` for every (unit, fold) on a pool of `parallel_folds` threads
/// and returns the results in (unit, fold) order.
fn over_folds<T, F>(table: &CohortTable, cfg: &RunConfig, stage: &'static str, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Task<'_>, &FoldData) -> Result<Vec<T>> + Sync,
{
    let split_seed = cfg.seed;
    let splits = stratified_kfold(table.events(), cfg.folds, split_seed)
        .map_err(in_module("dataset"))
        .map_err(|e| Error::Fold {
            stage,
            unit: "all".into(),
            fold: 0,
            pipeline: "split".into(),
            source: Box::new(e),
        })?;
    let tasks: Vec<Task<'_>> = cfg
        .time_units
        .iter()
        .flat_map(|unit| {
            splits.iter().map(move |split| Task {
                cfg,
                unit,
                split,
                split_seed,
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel_folds)
        .build()
        .map_err(|e| Error::Report(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<T>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let data = prepare(table, task.split, task.unit, cfg.horizon_months)
                    .map_err(fold_error(stage, task.unit, task.split.fold, "preprocessing".into()))?;
                job(task, &data)
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn aggregate_rows(reports: &[FoldReport], units: &[TimeUnit], order: &[(String, String)]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for (model, imputer) in order {
        for unit in units {
            let cts: Vec<f64> = reports
                .iter()
                .filter(|r| &r.model == model && &r.imputer == imputer && r.time_unit == unit.label)
                .map(|r| r.test_ct_index)
                .collect();
            let (mean, se) = mean_se(&cts);
            rows.push(AggregateRow {
                model: model.clone(),
                imputer: imputer.clone(),
                time_unit: unit.label.clone(),
                n_folds: cts.len(),
                mean_ct: mean,
                se_ct: se,
            });
        }
    }
    rows
}

/// k-fold cross-validation of every pipeline at every time unit on shared
/// folds.
pub fn cross_validate(table: &CohortTable, cfg: &RunConfig) -> Result<CrossValidation> {
    let pipes = pipelines(cfg);
    let reports = over_folds(table, cfg, "cross-validation", |task, data| {
        pipes
            .iter()
            .map(|&p| {
                task.run(data, p, None)
                    .map_err(fold_error("cross-validation", task.unit, task.split.fold, p.to_string()))
            })
            .collect()
    })?;
    let order: Vec<(String, String)> = pipes.iter().map(|p| (p.model().into(), p.imputer().into())).collect();
    let aggregate = aggregate_rows(&reports, &cfg.time_units, &order);
    Ok(CrossValidation {
        units: cfg.time_units.clone(),
        folds: cfg.folds,
        reports,
        aggregate,
    })
}

/// The transformer under each of [`ABLATION_ARMS`] on shared folds and
/// shared initial weights.
pub fn ablation(table: &CohortTable, cfg: &RunConfig) -> Result<Ablation> {
    let reports = over_folds(table, cfg, "ablation", |task, data| {
        ABLATION_ARMS
            .iter()
            .map(|&(w1, w2)| {
                let w = LossWeights { w1, w2 };
                task.run(data, Pipeline::Transformer, Some(w)).map_err(fold_error(
                    "ablation",
                    task.unit,
                    task.split.fold,
                    format!("transformer w=({w1}, {w2})"),
                ))
            })
            .collect()
    })?;
    let mut arms = Vec::new();
    for &(w1, w2) in &ABLATION_ARMS {
        for unit in &cfg.time_units {
            let rs: Vec<&FoldReport> = reports
                .iter()
                .filter(|r| r.weights.w1 == w1 && r.weights.w2 == w2 && r.time_unit == unit.label)
                .collect();
            let col = |f: &dyn Fn(&FoldReport) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
            let (mean_ct, se_ct) = mean_se(&col(&|r| Some(r.test_ct_index)));
            arms.push(ArmSummary {
                w1,
                w2,
                time_unit: unit.label.clone(),
                n_folds: rs.len(),
                mean_ct,
                se_ct,
                mean_best_epoch: mean_se(&col(&|r| r.best_epoch.map(|e| e as f64))).0,
                mean_val_l1: mean_se(&col(&|r| r.best_val_l1)).0,
                mean_val_l2: mean_se(&col(&|r| r.best_val_l2)).0,
            });
        }
    }
    Ok(Ablation {
        units: cfg.time_units.clone(),
        folds: cfg.folds,
        reports,
        arms,
    })
}

/// Pools the per-patient errors of all folds by pipeline, unit and true bin.
pub fn pooled_errors(reports: &[FoldReport]) -> Vec<PooledErrorRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in reports {
        let k = (r.model.clone(), r.imputer.clone(), r.time_unit.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::new();
    for (model, imputer, unit) in keys {
        let errors: Vec<(usize, f64)> = reports
            .iter()
            .filter(|r| r.model == model && r.imputer == imputer && r.time_unit == unit)
            .flat_map(|r| r.errors.iter().copied())
            .collect();
        for bin in error_table(&errors) {
            out.push(PooledErrorRow {
                model: model.clone(),
                imputer: imputer.clone(),
                time_unit: unit.clone(),
                bin: bin.bin,
                n: bin.n,
                mean_abs_error: bin.mean_abs_error,
                se: bin.se,
            });
        }
    }
    out
}

/// The model each time unit would instantiate, read back from a freshly
/// built network.
pub fn unit_plans(table: &CohortTable, cfg: &RunConfig) -> Result<Vec<UnitPlan>> {
    cfg.time_units
        .iter()
        .map(|unit| {
            let pre = Preprocessor::fit(table, unit.months, cfg.horizon_months).map_err(in_module("dataset"))?;
            let mc = cfg.model_config(pre.width(), pre.n_bins, 0);
            let model = EncoderModel::new(mc).map_err(in_module("encoder_model"))?;
            Ok(UnitPlan {
                time_unit: unit.label.clone(),
                unit_months: unit.months,
                n_bins: pre.n_bins,
                architecture: model.architecture(),
                trainer: cfg.train_config(0)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Transformer,
    Mlp(ImputerName),
}

/// Fits one model on a stratified train/validation split of the whole cohort.
pub fn fit_single(
    table: &CohortTable,
    cfg: &RunConfig,
    unit: &TimeUnit,
    choice: ModelChoice,
) -> Result<(Checkpoint, TrainOutcome)> {
    let (train_idx, val_idx) =
        stratified_holdout(table.events(), cfg.seed).map_err(in_module("dataset"))?;
    let pre = Preprocessor::fit(&table.subset(&train_idx), unit.months, cfg.horizon_months)
        .map_err(in_module("dataset"))?;
    let enc = pre.apply(table).map_err(in_module("dataset"))?;
    let tr = enc.subset(&with_features(&enc, &train_idx));
    let va = enc.subset(&with_features(&enc, &val_idx));
    let init = derive_seed(cfg.seed, &[&unit.label, "single", "init"]);
    let trainer = cfg.train_config(derive_seed(cfg.seed, &[&unit.label, "single", "shuffle"]))?;
    let (model, imputer, outcome, fitted_on) = match choice {
        ModelChoice::Transformer => {
            let mut m = EncoderModel::new(cfg.model_config(tr.width, tr.n_bins, init))
                .map_err(in_module("encoder_model"))?;
            let o = train(&mut m, &tr, &va, &trainer).map_err(in_module("training"))?;
            (TrainedModel::Transformer(m), None, o, tr)
        }
        ModelChoice::Mlp(i) => {
            let state = imputation::fit(cfg.baselines.strategy(i), &tr).map_err(in_module("imputation"))?;
            let tr = state.transform(&tr).map_err(in_module("imputation"))?;
            let va = state.transform(&va).map_err(in_module("imputation"))?;
            let (m, o) = fit_mlp_deephit(&tr, &va, cfg.baselines.mlp(tr.width, tr.n_bins, init), &trainer)
                .map_err(in_module("baselines"))?;
            (TrainedModel::Mlp(m), Some(state), o, tr)
        }
    };
    let baseline_cif = mean_cif(model.as_model(), &fitted_on).map_err(in_module("attribution"))?;
    Ok((
        Checkpoint {
            model,
            preprocessor: pre,
            imputer,
            time_unit: unit.clone(),
            baseline_cif,
        },
        outcome,
    ))
}
