//! Time-dependent concordance and the Kaplan–Meier estimator.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How equal risks within an acceptable pair are credited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    /// No credit, the strict `F̂ᵢ > F̂ⱼ` indicator.
    #[default]
    Strict,
    /// Half credit.
    Half,
}

/// Predicted CIF rows with the observed bin and event of each patient.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMatrix {
    cifs: Vec<Vec<f64>>,
    bins: Vec<usize>,
    events: Vec<bool>,
}

impl RiskMatrix {
    pub fn new(cifs: Vec<Vec<f64>>, bins: Vec<usize>, events: Vec<bool>) -> Result<Self> {
        if cifs.len() != bins.len() || cifs.len() != events.len() {
            return Err(Error::Contract("risk rows, bins and events differ in length".into()));
        }
        let t = cifs.first().map_or(0, Vec::len);
        for (r, (row, &s)) in cifs.iter().zip(&bins).enumerate() {
            if row.len() != t || s >= t {
                return Err(Error::Contract(format!(
                    "row {r}: length {} with bin {s} (T = {t})",
                    row.len()
                )));
            }
            if row.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(Error::Contract(format!("row {r}: CIF is not non-decreasing")));
            }
        }
        Ok(RiskMatrix { cifs, bins, events })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Fraction of acceptable pairs `(i, j)` (i uncensored, `sᵢ < sⱼ`) with
/// `F̂(sᵢ | xᵢ) > F̂(sᵢ | xⱼ)`.
pub fn ct_index(risks: &RiskMatrix, ties: Ties) -> Result<f64> {
    let n = risks.len();
    let mut credit = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        if !risks.events[i] {
            continue;
        }
        let s = risks.bins[i];
        let own = risks.cifs[i][s];
        for j in 0..n {
            if j == i || risks.bins[j] <= s {
                continue;
            }
            pairs += 1;
            let other = risks.cifs[j][s];
            if own > other {
                credit += 1.0;
            } else if own == other && ties == Ties::Half {
                credit += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(credit / pairs as f64)
}

/// Harrell's concordance for time-invariant risk scores: higher score should
/// mean earlier event.
pub fn c_index(scores: &[f64], times: &[f64], events: &[bool], ties: Ties) -> Result<f64> {
    if scores.len() != times.len() || scores.len() != events.len() {
        return Err(Error::Contract("scores, times and events differ in length".into()));
    }
    let mut credit = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        if !events[i] {
            continue;
        }
        for j in 0..scores.len() {
            if j == i || times[j] <= times[i] {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] && ties == Ties::Half {
                credit += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(credit / pairs as f64)
}

/// Right-continuous product-limit step function. `survival[k]` holds on
/// `[times[k], times[k+1])`; before the first event time `S = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub deaths: Vec<usize>,
}

impl SurvivalCurve {
    pub fn at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&u| u <= t) {
            Some(k) => self.survival[k],
            None => 1.0,
        }
    }
}

pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    if times.is_empty() || times.len() != events.len() {
        return Err(Error::Contract("Kaplan-Meier needs matching, non-empty inputs".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut curve = SurvivalCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        deaths: Vec::new(),
    };
    let mut s = 1.0;
    let mut remaining = times.len();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut deaths = 0;
        let mut leaving = 0;
        while k < order.len() && times[order[k]] == t {
            deaths += events[order[k]] as usize;
            leaving += 1;
            k += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / remaining as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(remaining);
            curve.deaths.push(deaths);
        }
        remaining -= leaving;
    }
    Ok(curve)
}
