//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use masksurv_core::attribution::attribute;
use masksurv_core::dataset::{generate_synthetic, CohortTable, Preprocessor};
use masksurv_core::gradcheck::{check_model_gradients, gradient_check};
use masksurv_core::loss::{acceptable_pairs, LossWeights};
use masksurv_core::metrics::{ct_index, RiskMatrix, Ties};
use masksurv_core::nn::cumulative;
use masksurv_core::train::{predict_hazards, TrainConfig};
use masksurv_core::{EncoderModel, Result as CoreResult, Tape, Tensor, Var};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, TrainedModel};
use crate::config::{ImputerName, Profile, RunConfig, TimeUnit};
use crate::csv_io::{read_csv, save_csv, to_csv_bytes};
use crate::error::{in_module, Error, Result};
use crate::experiment::{ablation, cross_validate, fit_single, unit_plans, ModelChoice};
use crate::manifest::RunManifest;
use crate::report::{write_ablation, write_attribution, write_cross_validation, write_curves, write_json};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;
/// Smaller step for the model: ReLU kinks sit within 1e-5 of typical
/// pre-activations often enough to bias central differences.
const MODEL_GRADCHECK_STEP: f64 = 1e-6;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const COHORT_FILE: &str = "cohort.csv";
pub const CONFIG_FILE: &str = "config.toml";

const NOTES: &[&str] = &[
    "validation loss for early stopping and LR decay is the weighted training loss on the validation split",
    "LR decay is multiplicative on plateau",
    "point prediction for error-by-time is unit * (argmax_t y_t + 0.5) months",
    "patients with no observed feature are excluded from every pipeline and counted as unpredictable",
    "z-score statistics use available training cells only; imputation works in the encoded space",
    "Ct-index gives tied risks no credit",
];

#[derive(Debug, Parser)]
#[command(name = "masksurv", version, about = "Masked-attention survival models on tabular data with missing values")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Discretization unit such as 1m, 1y, 2y; repeat for several.
    #[arg(long = "time-unit", global = true)]
    pub time_units: Vec<String>,
    /// Cohort CSV; overrides the config's data section.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write (`train`) or read (`evaluate`, `attribute`).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Resolve and record the run plan without training.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Transformer,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImputerArg {
    Mean,
    Knn,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort CSV.
    Generate {
        /// Cohort size; overrides the generator config.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit one model and write a checkpoint.
    Train {
        #[arg(long, value_enum, default_value = "transformer")]
        model: ModelArg,
        /// Imputer for the MLP.
        #[arg(long, value_enum, default_value = "mean")]
        imputer: ImputerArg,
    },
    /// Ct-index of a checkpoint on a cohort.
    Evaluate,
    /// k-fold cross-validation of the transformer and the baselines.
    Crossval,
    /// Loss ablation of the transformer.
    Ablate,
    /// Exact Shapley attribution for a checkpoint.
    Attribute {
        /// Patients explained; overrides the config.
        #[arg(long)]
        max_patients: Option<usize>,
    },
    /// Gradient checks of every primitive and of the model losses.
    Gradcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Evaluate => "evaluate",
            Command::Crossval => "crossval",
            Command::Ablate => "ablate",
            Command::Attribute { .. } => "attribute",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = g.profile {
        cfg.profile = p;
    }
    if !g.time_units.is_empty() {
        cfg.time_units = g.time_units.iter().map(|s| s.parse()).collect::<Result<Vec<TimeUnit>>>()?;
    }
    if let Some(d) = &g.data {
        cfg.data.path = Some(d.clone());
        cfg.data.generator = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The cohort, its CSV bytes for hashing, and a description of its source.
pub fn load_cohort(cfg: &RunConfig) -> Result<(CohortTable, Vec<u8>, String)> {
    match &cfg.data.path {
        Some(p) => {
            let bytes = fs::read(p).map_err(Error::io(p))?;
            let table = read_csv(bytes.as_slice()).map_err(|e| match e {
                Error::Schema(m) => Error::Schema(format!("{}: {m}", p.display())),
                other => other,
            })?;
            Ok((table, bytes, p.display().to_string()))
        }
        None => {
            let g = cfg.generator();
            let table = generate_synthetic(g.n, &g.spec, cfg.generator_seed()).map_err(in_module("dataset"))?;
            let bytes = to_csv_bytes(&table)?;
            Ok((table, bytes, format!("generator (n = {}, seed = {})", g.n, cfg.generator_seed())))
        }
    }
}

fn out_dir(g: &GlobalArgs, command: &str) -> Result<PathBuf> {
    let dir = g
        .out
        .clone()
        .ok_or_else(|| Error::Usage(format!("`{command}` needs --out <dir>")))?;
    fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    Ok(dir)
}

fn checkpoint_arg(g: &GlobalArgs, command: &str) -> Result<PathBuf> {
    g.checkpoint
        .clone()
        .ok_or_else(|| Error::Usage(format!("`{command}` needs --checkpoint <file>")))
}

/// Writes the resolved config and a manifest holding the input hash before
/// anything is computed.
fn start_run(dir: &Path, command: &str, cfg: &RunConfig, input: &str, bytes: &[u8], dry_run: bool) -> Result<RunManifest> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()?).map_err(Error::io(&path))?;
    let mut m = RunManifest::new(command, cfg, input, bytes, dry_run);
    m.notes = NOTES.iter().map(|s| s.to_string()).collect();
    m.write(dir)?;
    Ok(m)
}

fn warn_profile(cfg: &RunConfig, dry_run: bool) {
    if cfg.profile == Profile::Paper && !dry_run {
        eprintln!(
            "warning: the paper profile trains 12-layer, 17-head models for up to 1500 epochs; \
             expect many hours per fold on a CPU"
        );
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = resolve_config(g)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Generate { n } => {
            let mut cfg = cfg;
            if cfg.data.path.is_some() {
                return Err(Error::Usage("`generate` takes a generator config, not --data".into()));
            }
            if let Some(n) = n {
                let mut gen = cfg.generator();
                gen.n = *n;
                cfg.data.generator = Some(gen);
            }
            let dir = out_dir(g, name)?;
            let (table, bytes, input) = load_cohort(&cfg)?;
            let mut m = start_run(&dir, name, &cfg, &input, &bytes, false)?;
            save_csv(&table, &dir.join(COHORT_FILE))?;
            println!("wrote {} patients to {}", table.len(), dir.join(COHORT_FILE).display());
            m.finish(&dir)
        }
        Command::Train { model, imputer } => {
            warn_profile(&cfg, g.dry_run);
            let dir = out_dir(g, name)?;
            let (table, bytes, input) = load_cohort(&cfg)?;
            let mut m = start_run(&dir, name, &cfg, &input, &bytes, g.dry_run)?;
            m.plans = unit_plans(&table, &cfg)?;
            if g.dry_run {
                return m.finish(&dir);
            }
            let unit = &cfg.time_units[0];
            let choice = match model {
                ModelArg::Transformer => ModelChoice::Transformer,
                ModelArg::Mlp => ModelChoice::Mlp(match imputer {
                    ImputerArg::Mean => ImputerName::Mean,
                    ImputerArg::Knn => ImputerName::Knn,
                }),
            };
            let (ckpt, outcome) = fit_single(&table, &cfg, unit, choice)?;
            let path = g.checkpoint.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
            ckpt.save(&path)?;
            write_curves(&dir.join("curves.csv"), &outcome.curves)?;
            write_json(&dir.join("train_summary.json"), &outcome)?;
            println!(
                "{} ({unit}): best epoch {} of {}, validation loss {:.6}; checkpoint {}",
                ckpt.model.name(),
                outcome.best_epoch,
                outcome.curves.len(),
                outcome.best_val_loss,
                path.display()
            );
            m.finish(&dir)
        }
        Command::Evaluate => {
            let ckpt = Checkpoint::load(&checkpoint_arg(g, name)?)?;
            let (table, bytes, input) = load_cohort(&cfg)?;
            let mut manifest = match &g.out {
                Some(_) => {
                    let dir = out_dir(g, name)?;
                    Some((start_run(&dir, name, &cfg, &input, &bytes, false)?, dir))
                }
                None => None,
            };
            let result = evaluate(&ckpt, &table)?;
            println!(
                "ct_index {} ({} patients scored, {} unscorable, time unit {})",
                result.ct_index, result.n_scored, result.n_unscorable, result.time_unit
            );
            if let Some((m, dir)) = manifest.as_mut() {
                write_json(&dir.join("evaluation.json"), &result)?;
                m.finish(dir)?;
            }
            Ok(())
        }
        Command::Crossval => {
            warn_profile(&cfg, g.dry_run);
            let dir = out_dir(g, name)?;
            let (table, bytes, input) = load_cohort(&cfg)?;
            let mut m = start_run(&dir, name, &cfg, &input, &bytes, g.dry_run)?;
            m.plans = unit_plans(&table, &cfg)?;
            m.write(&dir)?;
            if g.dry_run {
                println!("dry run: plan for {} time unit(s) written to {}", m.plans.len(), dir.display());
                return m.finish(&dir);
            }
            let cv = cross_validate(&table, &cfg)?;
            write_cross_validation(&dir, &cv)?;
            for r in &cv.aggregate {
                println!(
                    "{:<12} {:<5} {:<4} Ct = {}",
                    r.model,
                    r.imputer,
                    r.time_unit,
                    crate::report::percent_cell(r.mean_ct, r.se_ct)
                );
            }
            m.finish(&dir)
        }
        Command::Ablate => {
            warn_profile(&cfg, g.dry_run);
            let dir = out_dir(g, name)?;
            let (table, bytes, input) = load_cohort(&cfg)?;
            let mut m = start_run(&dir, name, &cfg, &input, &bytes, g.dry_run)?;
            m.plans = unit_plans(&table, &cfg)?;
            m.write(&dir)?;
            if g.dry_run {
                return m.finish(&dir);
            }
            let ab = ablation(&table, &cfg)?;
            write_ablation(&dir, &ab)?;
            for a in &ab.arms {
                println!(
                    "w = ({}, {}) {:<4} Ct = {}  best epoch {:.1}",
                    a.w1,
                    a.w2,
                    a.time_unit,
                    crate::report::percent_cell(a.mean_ct, a.se_ct),
                    a.mean_best_epoch
                );
            }
            m.finish(&dir)
        }
        Command::Attribute { max_patients } => {
            let ckpt = Checkpoint::load(&checkpoint_arg(g, name)?)?;
            let TrainedModel::Transformer(model) = &ckpt.model else {
                return Err(Error::Usage(
                    "attribution masks feature coalitions and needs a transformer checkpoint".into(),
                ));
            };
            let dir = out_dir(g, name)?;
            let (table, bytes, input) = load_cohort(&cfg)?;
            let mut m = start_run(&dir, name, &cfg, &input, &bytes, false)?;
            let enc = ckpt.encode(&table)?;
            let limit = max_patients.unwrap_or(cfg.attribution.max_patients);
            let patients: Vec<usize> = (0..enc.len()).filter(|&i| enc.has_any_feature(i)).take(limit).collect();
            let report = attribute(model, &enc.subset(&patients), &ckpt.baseline_cif).map_err(in_module("attribution"))?;
            write_attribution(&dir, &report, &patients, &ckpt.time_unit.label)?;
            for f in &report.summary {
                println!("{:<16} mean |phi| = {:.6}", f.feature, f.mean_abs_phi);
            }
            m.finish(&dir)
        }
        Command::Gradcheck => {
            let results = gradcheck_suite(&cfg)?;
            let mut worst = 0.0f64;
            for r in &results {
                println!("{:<8} {:<24} max relative error {:.3e}", r.kind, r.name, r.max_relative_error);
                worst = worst.max(r.max_relative_error);
            }
            if let Some(dir) = &g.out {
                fs::create_dir_all(dir).map_err(Error::io(dir))?;
                let mut m = start_run(dir, name, &cfg, "gradcheck fixtures", b"", false)?;
                write_json(&dir.join("gradcheck.json"), &results)?;
                m.finish(dir)?;
            }
            if !(worst <= GRADCHECK_TOLERANCE) {
                let failed: Vec<&str> = results
                    .iter()
                    .filter(|r| !(r.max_relative_error <= GRADCHECK_TOLERANCE))
                    .map(|r| r.name.as_str())
                    .collect();
                return Err(Error::GradCheck(format!(
                    "relative error above {GRADCHECK_TOLERANCE:e} for {}",
                    failed.join(", ")
                )));
            }
            println!("all gradient checks within {GRADCHECK_TOLERANCE:e}");
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub model: String,
    pub time_unit: String,
    pub ct_index: f64,
    pub n_scored: usize,
    pub n_unscorable: usize,
}

pub fn evaluate(ckpt: &Checkpoint, table: &CohortTable) -> Result<Evaluation> {
    let enc = ckpt.encode(table)?;
    let hazards = predict_hazards(ckpt.model.as_model(), &enc).map_err(in_module("encoder_model"))?;
    let (mut cifs, mut bins, mut events) = (Vec::new(), Vec::new(), Vec::new());
    for (i, h) in hazards.iter().enumerate() {
        if let (Some(h), true) = (h, enc.has_any_feature(i)) {
            cifs.push(cumulative(h));
            bins.push(enc.time_bin[i]);
            events.push(enc.event[i]);
        }
    }
    let n_scored = cifs.len();
    let risks = RiskMatrix::new(cifs, bins, events).map_err(in_module("metrics"))?;
    let ct = ct_index(&risks, Ties::Strict).map_err(in_module("metrics"))?;
    Ok(Evaluation {
        model: ckpt.model.name().into(),
        time_unit: ckpt.time_unit.label.clone(),
        ct_index: ct,
        n_scored,
        n_unscorable: enc.len() - n_scored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub kind: &'static str,
    pub name: String,
    pub max_relative_error: f64,
}

fn fixture(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| {
            let h = (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(seed.wrapping_mul(0xbf58_476d_1ce4_e5b9));
            (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

type Probe = Box<dyn for<'p> Fn(&mut Tape<'p>, Var) -> CoreResult<Var>>;

fn weighted(t: &mut Tape<'_>, y: Var, seed: u64) -> CoreResult<Var> {
    let shape = t.value(y).shape().to_vec();
    let w = t.constant(fixture(&shape, seed));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn primitive_probes() -> Vec<(&'static str, Tensor, Probe)> {
    let x = || fixture(&[3, 4], 1);
    let mask = [true, false, true, true];
    vec![
        ("matmul", x(), Box::new(|t, v| {
            let b = t.constant(fixture(&[4, 5], 2));
            let y = t.matmul(v, b)?;
            weighted(t, y, 3)
        })),
        ("add", x(), Box::new(|t, v| {
            let b = t.constant(fixture(&[4], 4));
            let y = t.add(v, b)?;
            weighted(t, y, 5)
        })),
        ("mul", x(), Box::new(|t, v| {
            let b = t.constant(fixture(&[3, 4], 6));
            let y = t.mul(v, b)?;
            weighted(t, y, 7)
        })),
        ("scale", x(), Box::new(|t, v| {
            let y = t.scale(v, -2.5);
            weighted(t, y, 8)
        })),
        ("exp", x(), Box::new(|t, v| {
            let y = t.exp(v);
            weighted(t, y, 9)
        })),
        ("log", x(), Box::new(|t, v| {
            let y = t.affine(v, 1.0, 2.0);
            let y = t.log(y);
            weighted(t, y, 10)
        })),
        ("relu", x(), Box::new(|t, v| {
            let y = t.relu(v);
            weighted(t, y, 11)
        })),
        ("softmax", x(), Box::new(|t, v| {
            let y = t.softmax_with_mask(v, None)?;
            weighted(t, y, 12)
        })),
        ("softmax_with_mask", x(), Box::new(move |t, v| {
            let y = t.softmax_with_mask(v, Some(&mask))?;
            weighted(t, y, 13)
        })),
        ("layer_norm", x(), Box::new(|t, v| {
            let g = t.constant(fixture(&[4], 14));
            let b = t.constant(fixture(&[4], 15));
            let y = t.layer_norm(v, g, b)?;
            weighted(t, y, 16)
        })),
        ("mean_over_masked_rows", fixture(&[4, 3], 17), Box::new(move |t, v| {
            let y = t.mean_over_masked_rows(v, &mask)?;
            weighted(t, y, 18)
        })),
        ("concat", x(), Box::new(|t, v| {
            let b = t.constant(fixture(&[3, 2], 19));
            let y = t.concat_cols(&[v, b])?;
            let r = t.constant(fixture(&[1, 6], 20));
            let y = t.concat_rows(&[r, y])?;
            weighted(t, y, 21)
        })),
    ]
}

/// Every primitive on fixed inputs, then the L1, L2 and total losses through
/// the profile's transformer on an 8-patient, 6-bin batch.
pub fn gradcheck_suite(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, x, f) in primitive_probes() {
        let err = gradient_check(|t, v| f(t, v), &x, GRADCHECK_STEP).map_err(in_module("tensor_core"))?;
        out.push(CheckResult {
            kind: "op",
            name: name.into(),
            max_relative_error: err,
        });
    }
    let spec = crate::config::GeneratorConfig::default().spec;
    let mut seed = cfg.seed;
    let batch = loop {
        let table = generate_synthetic(8, &spec, seed).map_err(in_module("dataset"))?;
        let pre = Preprocessor::fit(&table, 12.0, 72.0);
        if let Ok(enc) = pre.and_then(|p| p.apply(&table)) {
            let usable = (0..enc.len()).all(|i| enc.has_any_feature(i));
            if usable && !acceptable_pairs(&enc.time_bin, &enc.event).is_empty() {
                break enc;
            }
        }
        seed = seed.wrapping_add(1);
    };
    let model = EncoderModel::new(cfg.model_config(batch.width, batch.n_bins, cfg.seed))
        .map_err(in_module("encoder_model"))?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    for (name, w1, w2) in [("L1", 1.0, 0.0), ("L2", 0.0, 1.0), ("total", 1.0, 1.0)] {
        let tc = TrainConfig {
            weights: LossWeights { w1, w2 },
            ..TrainConfig::default()
        };
        let r = check_model_gradients(&model, &batch, &rows, &tc, MODEL_GRADCHECK_STEP, cfg.seed)
            .map_err(in_module("training"))?;
        out.push(CheckResult {
            kind: "loss",
            name: name.into(),
            max_relative_error: r.max_relative_error,
        });
    }
    Ok(out)
}
