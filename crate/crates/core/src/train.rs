//! Mini-batch Adam training with plateau learning-rate decay and early
//! stopping on the validation loss.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedCohort;
use crate::error::{Error, Result};
use crate::loss::{acceptable_pairs, loss_l1, loss_l2, loss_on_tape, LossBatch, LossWeights, RANKING_SIGMA};
use crate::nn::{HazardModel, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub weights: LossWeights,
    pub sigma: f64,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            max_epochs: 1500,
            early_stop_patience: 200,
            lr_patience: 100,
            lr_decay: 0.1,
            weights: LossWeights::default(),
            sigma: RANKING_SIGMA,
            min_improvement: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule for the toy profile.
    pub fn toy() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 60,
            early_stop_patience: 15,
            lr_patience: 8,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Configuration("batch size and epoch budget must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Configuration(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Configuration(format!("lr decay {} outside (0, 1]", self.lr_decay)));
        }
        if self.early_stop_patience == 0 || self.early_stop_patience >= self.max_epochs.max(2) {
            return Err(Error::Configuration(format!(
                "early-stop patience {} must lie in [1, max_epochs)",
                self.early_stop_patience
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Configuration(format!("ranking sigma {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean weighted loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_l1: f64,
    pub val_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub curves: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Rows the model could not score and was not trained on.
    pub skipped_train: usize,
    pub skipped_val: usize,
}

/// Weighted loss and its two raw components on a whole cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortLoss {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
}

fn usable<M: HazardModel + ?Sized>(model: &M, cohort: &EncodedCohort) -> Vec<usize> {
    (0..cohort.len()).filter(|&i| model.accepts(cohort.row(i))).collect()
}

/// Evaluates the loss without recording gradients.
pub fn evaluate_loss<M: HazardModel + ?Sized>(
    model: &M,
    cohort: &EncodedCohort,
    rows: &[usize],
    weights: LossWeights,
    sigma: f64,
) -> Result<CohortLoss> {
    let hazards = rows
        .iter()
        .map(|&i| model.hazard(cohort.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let batch = LossBatch::new(
        hazards,
        rows.iter().map(|&i| cohort.time_bin[i]).collect(),
        rows.iter().map(|&i| cohort.event[i]).collect(),
    )?;
    let l1 = loss_l1(&batch);
    let l2 = loss_l2(&batch, sigma);
    Ok(CohortLoss {
        total: weights.w1 * l1 + weights.w2 * l2,
        l1,
        l2,
    })
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

impl Adam {
    fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(ADAM_BETA1, self.step as f64);
        let c2 = 1.0 - libm::pow(ADAM_BETA2, self.step as f64);
        for (k, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (libm::sqrt(vh) + ADAM_EPS);
            }
        }
    }
}

/// Weighted loss of `rows` and its gradient for every parameter tensor.
pub fn loss_gradients<M: HazardModel + ?Sized>(
    model: &M,
    cohort: &EncodedCohort,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let mut ys = Vec::with_capacity(rows.len());
    for &i in rows {
        ys.push(model.hazard_on_tape(&mut tape, &p, cohort.row(i))?);
    }
    let y = tape.concat_rows(&ys)?;
    let bins: Vec<usize> = rows.iter().map(|&i| cohort.time_bin[i]).collect();
    let events: Vec<bool> = rows.iter().map(|&i| cohort.event[i]).collect();
    let nodes = loss_on_tape(&mut tape, y, &bins, &events, cfg.weights, cfg.sigma)?;
    let loss = tape.value(nodes.total).item()?;
    let mut g = tape.backward(nodes.total)?;
    Ok((loss, p.iter().map(|&v| g.take(v)).collect()))
}

/// Trains `model` in place and leaves it holding the best-validation
/// parameters.
pub fn train<M: HazardModel + ?Sized>(
    model: &mut M,
    train_set: &EncodedCohort,
    val_set: &EncodedCohort,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for c in [train_set, val_set] {
        if c.n_bins != model.n_bins() {
            return Err(Error::Contract(format!(
                "cohort has {} bins, model predicts {}",
                c.n_bins,
                model.n_bins()
            )));
        }
    }
    let train_rows = usable(model, train_set);
    let val_rows = usable(model, val_set);
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::Contract("no scorable patient in the training or validation split".into()));
    }
    if cfg.weights.w1 == 0.0 {
        let bins: Vec<usize> = train_rows.iter().map(|&i| train_set.time_bin[i]).collect();
        let events: Vec<bool> = train_rows.iter().map(|&i| train_set.event[i]).collect();
        if acceptable_pairs(&bins, &events).is_empty() {
            return Err(Error::Configuration(
                "ranking-only loss with no acceptable pair in the training split".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params());
    let mut lr = cfg.learning_rate;
    let mut order = train_rows.clone();
    let mut curves = Vec::new();
    let mut best = model.params().clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = loss_gradients(model, train_set, chunk, cfg)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            adam.update(model.params_mut(), &grads, lr);
            loss_sum += loss;
            n_batches += 1;
        }
        let val = evaluate_loss(model, val_set, &val_rows, cfg.weights, cfg.sigma)?;
        if !val.total.is_finite() {
            return Err(Error::Divergence(format!("non-finite validation loss at epoch {epoch}")));
        }
        curves.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / n_batches as f64,
            val_loss: val.total,
            val_l1: val.l1,
            val_l2: val.l2,
        });
        if val.total < best_val - cfg.min_improvement {
            best_val = val.total;
            best_epoch = epoch;
            best.clone_from(model.params());
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_decay >= cfg.lr_patience {
                lr *= cfg.lr_decay;
                since_decay = 0;
            }
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    if best_epoch > 0 {
        model.params_mut().load_from(&best)?;
    }
    Ok(TrainOutcome {
        curves,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
        skipped_train: train_set.len() - train_rows.len(),
        skipped_val: val_set.len() - val_rows.len(),
    })
}

/// Hazards for every row of `cohort`; `None` where the model cannot score.
pub fn predict_hazards<M: HazardModel + ?Sized>(
    model: &M,
    cohort: &EncodedCohort,
) -> Result<Vec<Option<Vec<f64>>>> {
    (0..cohort.len())
        .map(|i| {
            let row = cohort.row(i);
            if model.accepts(row) {
                model.hazard(row).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}
