//! Named parameter storage and the interface shared by every hazard network.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureRow;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Ordered, named parameter tensors. Binding to a tape registers them in
/// order, so the `i`-th returned [`Var`] is the `i`-th tensor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor with the same-named one from `other`, which must
    /// hold exactly the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Contract("parameter names differ from the model layout".into()));
        }
        for ((name, dst), src) in self.names.iter().zip(&mut self.tensors).zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::Contract(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }

    pub fn bind_frozen<'p>(&'p self, tape: &mut Tape<'p>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant_ref(t)).collect()
    }
}

/// Xavier/Glorot uniform matrix: `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized by construction")
}

/// A network mapping one encoded patient to a length-T hazard vector.
pub trait HazardModel {
    fn n_bins(&self) -> usize;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass on `tape` and returns the `[1, T]` hazard
    /// row. `params` come from binding [`HazardModel::params`] to the tape.
    fn hazard_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &[Var],
        row: FeatureRow<'_>,
    ) -> Result<Var>;

    /// Whether the model can score this patient at all.
    fn accepts(&self, row: FeatureRow<'_>) -> bool;

    fn hazard(&self, row: FeatureRow<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params().bind_frozen(&mut tape);
        let y = self.hazard_on_tape(&mut tape, &p, row)?;
        Ok(tape.value(y).data().to_vec())
    }

    fn predict_cif(&self, row: FeatureRow<'_>) -> Result<Vec<f64>> {
        Ok(cumulative(&self.hazard(row)?))
    }
}

/// Prefix sums: `F̂(s) = Σ_{t≤s} y_t`.
pub fn cumulative(hazard: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    hazard
        .iter()
        .map(|y| {
            acc += y;
            acc
        })
        .collect()
}
