//! Cox proportional hazards with Breslow tie handling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedCohort, FeatureRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxConfig {
    pub max_iter: usize,
    /// Convergence threshold on the gradient's ∞-norm.
    pub tolerance: f64,
    /// ‖β‖ beyond which the fit is declared divergent (separable data).
    pub max_beta_norm: f64,
}

impl Default for CoxConfig {
    fn default() -> Self {
        CoxConfig {
            max_iter: 100,
            tolerance: 1e-6,
            max_beta_norm: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    /// Distinct event times and the Breslow cumulative baseline hazard there.
    pub baseline_times: Vec<f64>,
    pub baseline_cumhaz: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Partial log-likelihood after each accepted Newton step (first entry at β = 0).
    pub loglik_trace: Vec<f64>,
}

struct Design<'a> {
    x: &'a [f64],
    p: usize,
    times: &'a [f64],
    events: &'a [bool],
    /// Indices sorted by decreasing time.
    order: Vec<usize>,
}

impl<'a> Design<'a> {
    fn new(x: &'a [f64], p: usize, times: &'a [f64], events: &'a [bool]) -> Result<Self> {
        let n = times.len();
        if x.len() != n * p || events.len() != n {
            return Err(Error::Contract(format!(
                "design of {} values for {n} patients x {p} covariates",
                x.len()
            )));
        }
        if !events.iter().any(|&e| e) {
            return Err(Error::Fit("Cox model needs at least one event".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite covariate (impute first)".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        Ok(Design {
            x,
            p,
            times,
            events,
            order,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.times.len())
            .map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Walks tied-time groups from the latest time backwards; callers grow
    /// the risk set with each group before scoring its deaths.
    fn for_each_time_group(&self, mut visit: impl FnMut(&[usize])) {
        let mut k = 0;
        while k < self.order.len() {
            let t = self.times[self.order[k]];
            let start = k;
            while k < self.order.len() && self.times[self.order[k]] == t {
                k += 1;
            }
            visit(&self.order[start..k]);
        }
    }

    /// Log-likelihood, gradient and information matrix (negative Hessian).
    fn evaluate(&self, beta: &[f64], want_derivs: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let eta = self.eta(beta);
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; if want_derivs { p * p } else { 0 }];
        let mut ll = 0.0;
        let mut grad = vec![0.0; p];
        let mut info = vec![0.0; if want_derivs { p * p } else { 0 }];
        self.for_each_time_group(|group| {
            for &i in group {
                let w = libm::exp(eta[i] - shift);
                s0 += w;
                let xi = self.row(i);
                if want_derivs {
                    for a in 0..p {
                        s1[a] += w * xi[a];
                        for b in 0..p {
                            s2[a * p + b] += w * xi[a] * xi[b];
                        }
                    }
                }
            }
            let deaths: Vec<usize> = group.iter().copied().filter(|&i| self.events[i]).collect();
            if deaths.is_empty() {
                return;
            }
            let d = deaths.len() as f64;
            ll += deaths.iter().map(|&i| eta[i]).sum::<f64>() - d * (libm::log(s0) + shift);
            if want_derivs {
                for &i in &deaths {
                    for (g, xv) in grad.iter_mut().zip(self.row(i)) {
                        *g += xv;
                    }
                }
                for a in 0..p {
                    grad[a] -= d * s1[a] / s0;
                    for b in 0..p {
                        info[a * p + b] += d * (s2[a * p + b] / s0 - s1[a] * s1[b] / (s0 * s0));
                    }
                }
            }
        });
        (ll, grad, info)
    }

    fn breslow_baseline(&self, beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let eta = self.eta(beta);
        let mut s0 = 0.0;
        let mut steps: Vec<(f64, f64)> = Vec::new();
        self.for_each_time_group(|group| {
            for &i in group {
                s0 += libm::exp(eta[i]);
            }
            let d = group.iter().filter(|&&i| self.events[i]).count();
            if d > 0 {
                steps.push((self.times[group[0]], d as f64 / s0));
            }
        });
        steps.reverse();
        let mut acc = 0.0;
        let mut times = Vec::with_capacity(steps.len());
        let mut cum = Vec::with_capacity(steps.len());
        for (t, h) in steps {
            acc += h;
            times.push(t);
            cum.push(acc);
        }
        (times, cum)
    }
}

/// Breslow partial log-likelihood
/// `Σ_t [Σ_{i∈D_t} ηᵢ − d_t · log Σ_{j: t_j ≥ t} exp(ηⱼ)]`.
pub fn breslow_partial_loglik(
    x: &[f64],
    p: usize,
    times: &[f64],
    events: &[bool],
    beta: &[f64],
) -> Result<f64> {
    let design = Design::new(x, p, times, events)?;
    Ok(design.evaluate(beta, false).0)
}

fn solve_newton(info: &[f64], grad: &[f64], p: usize) -> Option<Vec<f64>> {
    let h = DMatrix::from_row_slice(p, p, info);
    let g = DVector::from_column_slice(grad);
    let scale = (0..p).map(|i| libm::fabs(h[(i, i)])).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let m = &h + DMatrix::identity(p, p) * ridge;
        if let Some(ch) = m.cholesky() {
            let step = ch.solve(&g);
            if step.iter().all(|v| v.is_finite()) {
                return Some(step.iter().copied().collect());
            }
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
    }
    None
}

/// Newton-Raphson with step-halving on the Breslow partial likelihood.
pub fn fit_cox(
    x: &[f64],
    p: usize,
    times: &[f64],
    events: &[bool],
    config: CoxConfig,
) -> Result<CoxModel> {
    let design = Design::new(x, p, times, events)?;
    let mut beta = vec![0.0; p];
    let (mut ll, mut grad, mut info) = design.evaluate(&beta, true);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        if grad.iter().all(|g| libm::fabs(*g) < config.tolerance) {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(step) = solve_newton(&info, &grad, p) else {
            return Err(Error::Fit("singular information matrix".into()));
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let (cand_ll, _, _) = design.evaluate(&cand, false);
            if cand_ll.is_finite() && cand_ll >= ll {
                beta = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent direction left at machine precision.
            converged = grad.iter().all(|g| libm::fabs(*g) < libm::sqrt(config.tolerance));
            break;
        }
        let norm = libm::sqrt(beta.iter().map(|b| b * b).sum());
        if norm > config.max_beta_norm {
            return Err(Error::Divergence(format!(
                "‖β‖ = {norm:.2} exceeds {} after {iterations} Newton steps (separable data?)",
                config.max_beta_norm
            )));
        }
        (ll, grad, info) = design.evaluate(&beta, true);
        trace.push(ll);
    }
    if !converged && grad.iter().all(|g| libm::fabs(*g) < config.tolerance) {
        converged = true;
    }
    let (baseline_times, baseline_cumhaz) = design.breslow_baseline(&beta);
    Ok(CoxModel {
        beta,
        baseline_times,
        baseline_cumhaz,
        iterations,
        converged,
        loglik_trace: trace,
    })
}

/// Fits on a fully imputed cohort using the horizon-truncated survival times.
pub fn fit_cox_cohort(train: &EncodedCohort, config: CoxConfig) -> Result<CoxModel> {
    if train.has_missing() {
        return Err(Error::Contract("Cox model needs a fully imputed cohort".into()));
    }
    fit_cox(
        &train.values,
        train.width,
        &train.survival_months,
        &train.event,
        config,
    )
}

impl CoxModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    /// Breslow `H₀(t)`, right-continuous, zero before the first event.
    pub fn cumulative_baseline_hazard(&self, t: f64) -> f64 {
        match self.baseline_times.iter().rposition(|&u| u <= t) {
            Some(k) => self.baseline_cumhaz[k],
            None => 0.0,
        }
    }

    /// `F̂(t) = 1 − exp(−H₀(t) · exp(βᵀx))` at each bin's right edge.
    pub fn predict_cif(&self, x: &[f64], bin_edges: &[f64]) -> Vec<f64> {
        let risk = libm::exp(self.linear_predictor(x));
        bin_edges
            .iter()
            .map(|&t| 1.0 - libm::exp(-self.cumulative_baseline_hazard(t) * risk))
            .collect()
    }

    pub fn predict_row(&self, row: FeatureRow<'_>, bin_edges: &[f64]) -> Result<Vec<f64>> {
        if row.available.iter().any(|&a| !a) {
            return Err(Error::Contract("Cox prediction needs an imputed row".into()));
        }
        Ok(self.predict_cif(row.values, bin_edges))
    }
}

/// Right edges `(t + 1) · unit` of `n_bins` bins.
pub fn bin_edges(n_bins: usize, unit_months: f64) -> Vec<f64> {
    (1..=n_bins).map(|t| t as f64 * unit_months).collect()
}
