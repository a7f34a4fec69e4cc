//! Progressive incremental inclusion of augmented samples.
//!
//! At epoch `n` the training set is the original set plus a fraction
//! `1 - exp(-beta * n)` of the augmented set. The augmented set is shuffled
//! once, and each epoch takes a prefix of that order, so the included subset
//! only ever grows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Manifest, SampleRecord};

pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilSchedule {
    pub beta: f64,
    pub total_augmented: usize,
    pub ordering_seed: u64,
}

impl PilSchedule {
    pub fn new(beta: f64, total_augmented: usize, ordering_seed: u64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            beta,
            total_augmented,
            ordering_seed,
        })
    }

    /// The one-time shuffled order in which augmented samples enter.
    pub fn ordering(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.total_augmented).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.ordering_seed));
        order
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::arg(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// `1 - exp(-beta * n)`.
pub fn pil_fraction(n: i64, beta: f64) -> Result<f64> {
    if n < 0 {
        return Err(Error::arg(format!("epoch index must be >= 0, got {n}")));
    }
    check_beta(beta)?;
    Ok(-(-beta * n as f64).exp_m1())
}

pub fn pil_included_count(n: i64, schedule: &PilSchedule) -> Result<usize> {
    let f = pil_fraction(n, schedule.beta)?;
    let count = (schedule.total_augmented as f64 * f).floor() as usize;
    Ok(count.min(schedule.total_augmented))
}

/// Indices making up one epoch's training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochView {
    pub original_count: usize,
    /// Indices into the augmented set, in inclusion order.
    pub augmented: Vec<usize>,
}

impl EpochView {
    pub fn len(&self) -> usize {
        self.original_count + self.augmented.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records<'a>(&self, d_o: &'a Manifest, d_i: &'a Manifest) -> Vec<&'a SampleRecord> {
        d_o.records
            .iter()
            .chain(self.augmented.iter().map(|i| &d_i.records[*i]))
            .collect()
    }
}

/// All of `original_len` plus the first `pil_included_count(n)` entries of
/// the shuffled augmented order.
pub fn epoch_view(original_len: usize, n: i64, schedule: &PilSchedule) -> Result<EpochView> {
    let count = pil_included_count(n, schedule)?;
    let mut order = schedule.ordering();
    order.truncate(count);
    Ok(EpochView {
        original_count: original_len,
        augmented: order,
    })
}

pub fn build_epoch_dataset(d_o: &Manifest, d_i: &Manifest, n: i64, schedule: &PilSchedule) -> Result<EpochView> {
    if d_i.len() != schedule.total_augmented {
        return Err(Error::arg(format!(
            "schedule expects {} augmented records, manifest has {}",
            schedule.total_augmented,
            d_i.len()
        )));
    }
    if d_o.registry != d_i.registry {
        return Err(Error::arg("original and augmented manifests use different registries"));
    }
    epoch_view(d_o.len(), n, schedule)
}
