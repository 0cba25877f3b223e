//! Censoring-aware training loss `w1·L1 + w2·L2`.
//!
//! `L1` is the negative log-likelihood of the first hitting time: the hazard
//! at the event bin for uncensored patients, the survival `1 − F̂(s)` at the
//! last follow-up bin for censored ones. `L2` penalizes mis-ordered
//! acceptable pairs through `exp(−(F̂ᵢ(sᵢ) − F̂ⱼ(sᵢ)) / σ)`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::cumulative;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Lower clamp for log arguments.
pub const LOG_FLOOR: f64 = 1e-7;
/// Temperature of the ranking exponential.
pub const RANKING_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w1: 1.0, w2: 1.0 }
    }
}

impl LossWeights {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        let w = LossWeights { w1, w2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0) || !(self.w2 >= 0.0) {
            return Err(Error::Configuration(format!(
                "loss weights ({}, {}) must be non-negative",
                self.w1, self.w2
            )));
        }
        if self.w1 == 0.0 && self.w2 == 0.0 {
            return Err(Error::Configuration("both loss weights are zero".into()));
        }
        Ok(())
    }
}

/// Per-patient hazards with their prefix sums, bins and event flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    hazards: Vec<Vec<f64>>,
    cifs: Vec<Vec<f64>>,
    bins: Vec<usize>,
    events: Vec<bool>,
}

impl LossBatch {
    pub fn new(hazards: Vec<Vec<f64>>, bins: Vec<usize>, events: Vec<bool>) -> Result<Self> {
        if hazards.is_empty() {
            return Err(Error::Contract("empty loss batch".into()));
        }
        if hazards.len() != bins.len() || hazards.len() != events.len() {
            return Err(Error::Contract("hazards, bins and events differ in length".into()));
        }
        let t = hazards[0].len();
        for (h, &s) in hazards.iter().zip(&bins) {
            if h.len() != t || s >= t {
                return Err(Error::Contract(format!(
                    "hazard of length {} with bin {s} (T = {t})",
                    h.len()
                )));
            }
        }
        let cifs = hazards.iter().map(|h| cumulative(h)).collect();
        Ok(LossBatch {
            hazards,
            cifs,
            bins,
            events,
        })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn cif(&self, i: usize) -> &[f64] {
        &self.cifs[i]
    }
}

fn clamped_log(x: f64) -> f64 {
    libm::log(if x > LOG_FLOOR { x } else { LOG_FLOOR })
}

pub fn loss_l1(batch: &LossBatch) -> f64 {
    let mut total = 0.0;
    for i in 0..batch.len() {
        let s = batch.bins[i];
        total -= if batch.events[i] {
            clamped_log(batch.hazards[i][s])
        } else {
            clamped_log(1.0 - batch.cifs[i][s])
        };
    }
    total
}

/// Acceptable pairs `(i, j)`: `i` uncensored and `sᵢ < sⱼ`.
pub fn acceptable_pairs(bins: &[usize], events: &[bool]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..bins.len() {
        if !events[i] {
            continue;
        }
        for j in 0..bins.len() {
            if j != i && bins[i] < bins[j] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

pub fn loss_l2(batch: &LossBatch, sigma: f64) -> f64 {
    acceptable_pairs(&batch.bins, &batch.events)
        .into_iter()
        .map(|(i, j)| {
            let s = batch.bins[i];
            libm::exp(-(batch.cifs[i][s] - batch.cifs[j][s]) / sigma)
        })
        .sum()
}

pub fn total_loss(batch: &LossBatch, weights: LossWeights) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    if weights.w1 != 0.0 {
        total += weights.w1 * loss_l1(batch);
    }
    if weights.w2 != 0.0 {
        total += weights.w2 * loss_l2(batch, RANKING_SIGMA);
    }
    Ok(total)
}

/// Loss nodes recorded on a tape. A component is `None` when its weight is zero.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub l1: Option<Var>,
    pub l2: Option<Var>,
    pub total: Var,
}

/// Records the weighted loss for a `[B, T]` hazard matrix.
pub fn loss_on_tape(
    tape: &mut Tape<'_>,
    hazards: Var,
    bins: &[usize],
    events: &[bool],
    weights: LossWeights,
    sigma: f64,
) -> Result<LossNodes> {
    weights.validate()?;
    let (b, t) = tape.value(hazards).dims2()?;
    if b == 0 || b != bins.len() || b != events.len() {
        return Err(Error::Contract(format!(
            "{b} hazard rows for {} bins / {} events",
            bins.len(),
            events.len()
        )));
    }
    if let Some(&s) = bins.iter().find(|&&s| s >= t) {
        return Err(Error::Contract(format!("bin {s} outside T = {t}")));
    }
    let mut upper = alloc::vec![0.0; t * t];
    for r in 0..t {
        for c in r..t {
            upper[r * t + c] = 1.0;
        }
    }
    let upper = tape.constant(Tensor::matrix(t, t, upper)?);
    let cif = tape.matmul(hazards, upper)?;

    let l1 = if weights.w1 != 0.0 {
        let mut parts = Vec::with_capacity(2);
        let hit: Vec<usize> = (0..b).filter(|&i| events[i]).map(|i| i * t + bins[i]).collect();
        let cens: Vec<usize> = (0..b).filter(|&i| !events[i]).map(|i| i * t + bins[i]).collect();
        if !hit.is_empty() {
            let y = tape.gather(hazards, &hit)?;
            let y = tape.clamp_min(y, LOG_FLOOR);
            let y = tape.log(y);
            parts.push(tape.sum(y));
        }
        if !cens.is_empty() {
            let f = tape.gather(cif, &cens)?;
            let surv = tape.affine(f, -1.0, 1.0);
            let surv = tape.clamp_min(surv, LOG_FLOOR);
            let surv = tape.log(surv);
            parts.push(tape.sum(surv));
        }
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p)?;
        }
        Some(tape.scale(acc, -1.0))
    } else {
        None
    };

    let l2 = if weights.w2 != 0.0 {
        let pairs = acceptable_pairs(bins, events);
        if pairs.is_empty() {
            Some(tape.constant(Tensor::scalar(0.0)))
        } else {
            let own: Vec<usize> = pairs.iter().map(|&(i, _)| i * t + bins[i]).collect();
            let other: Vec<usize> = pairs.iter().map(|&(i, j)| j * t + bins[i]).collect();
            let fi = tape.gather(cif, &own)?;
            let fj = tape.gather(cif, &other)?;
            let diff = tape.sub(fi, fj)?;
            let z = tape.scale(diff, -1.0 / sigma);
            let e = tape.exp(z);
            Some(tape.sum(e))
        }
    } else {
        None
    };

    let total = match (l1, l2) {
        (Some(a), Some(b)) => {
            let a = tape.scale(a, weights.w1);
            let b = tape.scale(b, weights.w2);
            tape.add(a, b)?
        }
        (Some(a), None) => tape.scale(a, weights.w1),
        (None, Some(b)) => tape.scale(b, weights.w2),
        (None, None) => unreachable!("weights validated"),
    };
    Ok(LossNodes { l1, l2, total })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uncensored_certain_hit_is_free() {
        let b = LossBatch::new(vec![vec![0.0, 0.0, 1.0, 0.0]], vec![2], vec![true]).unwrap();
        assert_eq!(loss_l1(&b), 0.0);
    }

    #[test]
    fn censored_half_survival() {
        let b = LossBatch::new(vec![vec![0.25; 4]], vec![1], vec![false]).unwrap();
        assert_abs_diff_eq!(loss_l1(&b), 0.693147, epsilon = 1e-6);
    }

    #[test]
    fn censored_in_last_bin_hits_the_clamp() {
        let b = LossBatch::new(vec![vec![0.25; 4]], vec![3], vec![false]).unwrap();
        assert_abs_diff_eq!(loss_l1(&b), -libm::log(LOG_FLOOR), epsilon = 1e-12);
        assert_abs_diff_eq!(loss_l1(&b), 16.118, epsilon = 1e-3);
    }

    #[test]
    fn single_pair_ranking_term() {
        // F̂ᵢ(1) = 0.6, F̂ⱼ(1) = 0.2
        let b = LossBatch::new(
            vec![vec![0.3, 0.3, 0.2, 0.2], vec![0.1, 0.1, 0.4, 0.4]],
            vec![1, 3],
            vec![true, false],
        )
        .unwrap();
        assert_abs_diff_eq!(loss_l2(&b, RANKING_SIGMA), 0.018316, epsilon = 1e-6);
    }

    #[test]
    fn all_censored_has_no_pairs() {
        let b = LossBatch::new(vec![vec![0.5, 0.5]; 3], vec![0, 1, 1], vec![false; 3]).unwrap();
        assert_eq!(loss_l2(&b, RANKING_SIGMA), 0.0);
    }

    #[test]
    fn weights() {
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
        let b = LossBatch::new(
            vec![vec![0.3, 0.3, 0.2, 0.2], vec![0.1, 0.1, 0.4, 0.4]],
            vec![1, 3],
            vec![true, false],
        )
        .unwrap();
        let l1 = loss_l1(&b);
        let l2 = loss_l2(&b, RANKING_SIGMA);
        assert_eq!(total_loss(&b, LossWeights::new(1.0, 0.0).unwrap()).unwrap(), l1);
        assert_eq!(total_loss(&b, LossWeights::new(0.0, 1.0).unwrap()).unwrap(), l2);
        assert_eq!(total_loss(&b, LossWeights::default()).unwrap(), l1 + l2);
    }

    #[test]
    fn tape_matches_plain_evaluation() {
        let hazards = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.3, 0.2, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.7, 0.1, 0.1, 0.1],
        ];
        let bins = vec![1, 2, 0, 3];
        let events = vec![true, false, true, false];
        let batch = LossBatch::new(hazards.clone(), bins.clone(), events.clone()).unwrap();
        let flat: Vec<f64> = hazards.concat();
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::matrix(4, 4, flat).unwrap());
        let n = loss_on_tape(&mut tape, y, &bins, &events, LossWeights::default(), RANKING_SIGMA)
            .unwrap();
        let t1 = tape.value(n.l1.unwrap()).item().unwrap();
        let t2 = tape.value(n.l2.unwrap()).item().unwrap();
        assert_abs_diff_eq!(t1, loss_l1(&batch), epsilon = 1e-12);
        assert_abs_diff_eq!(t2, loss_l2(&batch, RANKING_SIGMA), epsilon = 1e-12);
        assert_abs_diff_eq!(
            tape.value(n.total).item().unwrap(),
            total_loss(&batch, LossWeights::default()).unwrap(),
            epsilon = 1e-12
        );
    }
}
