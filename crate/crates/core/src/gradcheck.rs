//! Central-difference verification of tape gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::EncodedCohort;
use crate::error::{Error, Result};
use crate::nn::HazardModel;
use crate::train::{evaluate_loss, loss_gradients, TrainConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `|a − n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / (libm::fabs(analytic) + libm::fabs(numeric) + 1e-12)
}

fn check_step(step: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::Parameter(format!(
            "finite-difference step {step} outside [1e-6, 1e-3]"
        )));
    }
    Ok(())
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'p> Fn(&mut Tape<'p>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant_ref(x);
    let out = f(&mut tape, v)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("function value {value}")));
    }
    Ok(value)
}

/// Compares the tape gradient of `f` at `x` with central differences and
/// returns the largest per-coordinate relative error.
pub fn gradient_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: for<'p> Fn(&mut Tape<'p>, Var) -> Result<Var>,
{
    check_step(step)?;
    let analytic = {
        let mut tape = Tape::new();
        let v = tape.param(x);
        let out = f(&mut tape, v)?;
        let grads = tape.backward(out)?;
        grads.wrt(v)
    };
    if !analytic.all_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Directional variant for functions of many parameter tensors: for each
/// `(tensor, direction)` pair, compares `∇f · direction` with the central
/// difference of `f` along that direction. `f` receives the perturbed
/// parameter set; `analytic` is the gradient of `f` at the unperturbed point.
pub fn directional_check<F>(
    mut f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    directions: &[(usize, Tensor)],
    step: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    check_step(step)?;
    let mut errors = Vec::with_capacity(directions.len());
    let mut probe = params.to_vec();
    for (which, dir) in directions {
        let base = &params[*which];
        if dir.len() != base.len() {
            return Err(Error::dim("directional_check", "direction shape"));
        }
        let dot: f64 = analytic[*which]
            .data()
            .iter()
            .zip(dir.data())
            .map(|(g, d)| g * d)
            .sum();
        for ((p, b), d) in probe[*which].data_mut().iter_mut().zip(base.data()).zip(dir.data()) {
            *p = b + step * d;
        }
        let up = f(&probe)?;
        for ((p, b), d) in probe[*which].data_mut().iter_mut().zip(base.data()).zip(dir.data()) {
            *p = b - step * d;
        }
        let down = f(&probe)?;
        probe[*which] = base.clone();
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("perturbed function value".into()));
        }
        errors.push(relative_error(dot, (up - down) / (2.0 * step)));
    }
    Ok(errors)
}

/// Directional errors of one model's loss gradient, per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradientReport {
    pub tensors: Vec<(String, f64)>,
    pub max_relative_error: f64,
}

/// Checks the tape gradient of the weighted loss on `rows` against central
/// differences of the plain (tape-free) loss, along one random unit direction
/// per parameter tensor.
pub fn check_model_gradients<M: HazardModel + Clone>(
    model: &M,
    cohort: &EncodedCohort,
    rows: &[usize],
    cfg: &TrainConfig,
    step: f64,
    seed: u64,
) -> Result<ModelGradientReport> {
    check_step(step)?;
    let (_, analytic) = loss_gradients(model, cohort, rows, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<(usize, Tensor)> = model
        .params()
        .tensors()
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut d: Vec<f64> = (0..t.len()).map(|_| rng.sample(StandardNormal)).collect();
            let norm = libm::sqrt(d.iter().map(|v| v * v).sum());
            d.iter_mut().for_each(|v| *v /= norm);
            (k, Tensor::new(t.shape().to_vec(), d).expect("same shape"))
        })
        .collect();
    let mut probe = model.clone();
    let errors = directional_check(
        |params| {
            probe_params(&mut probe, params);
            Ok(evaluate_loss(&probe, cohort, rows, cfg.weights, cfg.sigma)?.total)
        },
        model.params().tensors(),
        &analytic,
        &directions,
        step,
    )?;
    let names = model.params().names();
    let tensors: Vec<(String, f64)> = errors
        .iter()
        .enumerate()
        .map(|(k, &e)| (names[k].clone(), e))
        .collect();
    let max_relative_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(ModelGradientReport {
        tensors,
        max_relative_error,
    })
}

fn probe_params<M: HazardModel>(model: &mut M, params: &[Tensor]) {
    for (dst, src) in model.params_mut().tensors_mut().iter_mut().zip(params) {
        dst.data_mut().copy_from_slice(src.data());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn polynomial_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.7, 2.5, 4.0]);
        let err = gradient_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn step_outside_range_rejected() {
        let x = Tensor::vector(vec![1.0]);
        let r = gradient_check(|t, v| Ok(t.sum(v)), &x, 0.1);
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn non_finite_value_reported() {
        let x = Tensor::vector(vec![-1.0, 2.0]);
        let r = gradient_check(
            |t, v| {
                let l = t.log(v);
                Ok(t.sum(l))
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
