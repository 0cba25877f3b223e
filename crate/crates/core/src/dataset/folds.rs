use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of each training portion held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` stratified (train, val, test) splits over patients with the given
/// event indicators. Test folds partition the cohort; each class is dealt
/// round-robin after a seeded shuffle, so per-fold class counts differ by at
/// most one and fold sizes differ by at most one. A stratified
/// [`VALIDATION_FRACTION`] of every training portion becomes validation.
pub fn stratified_kfold(events: &[bool], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Stratification(format!("k = {k}; need k >= 2")));
    }
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &e) in events.iter().enumerate() {
        classes[e as usize].push(i);
    }
    for (label, members) in ["censored", "uncensored"].iter().zip(&classes) {
        if members.len() < k {
            return Err(Error::Stratification(format!(
                "{} {label} patients for {k} folds",
                members.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: Vec<Vec<usize>> = (0..k).map(|_| Vec::new()).collect();
    let mut slot = 0;
    for members in &mut classes {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            test[slot % k].push(i);
            slot += 1;
        }
    }

    let mut splits = Vec::with_capacity(k);
    for (f, t) in test.iter_mut().enumerate() {
        t.sort_unstable();
        let mut in_test = alloc::vec![false; events.len()];
        for &i in t.iter() {
            in_test[i] = true;
        }
        let portion: Vec<usize> = (0..events.len()).filter(|&i| !in_test[i]).collect();
        let (train, val) = holdout(
            &portion,
            events,
            VALIDATION_FRACTION,
            seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(f as u64 + 1)),
        );
        splits.push(FoldSplit {
            fold: f,
            train,
            val,
            test: core::mem::take(t),
        });
    }
    Ok(splits)
}

fn holdout(pool: &[usize], events: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = pool.iter().copied().filter(|&i| events[i] == class).collect();
        members.shuffle(&mut rng);
        let n_val = libm::round(members.len() as f64 * fraction) as usize;
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Stratified `(train, val)` split of the whole cohort with a
/// [`VALIDATION_FRACTION`] validation share.
pub fn stratified_holdout(events: &[bool], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let all: Vec<usize> = (0..events.len()).collect();
    let (train, val) = holdout(&all, events, VALIDATION_FRACTION, seed);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Stratification(format!(
            "{} patients are too few for a validation split",
            events.len()
        )));
    }
    Ok((train, val))
}
