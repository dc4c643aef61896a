//! Subset masking: corrupt whole feature subsets of one view and record
//! which subsets were hit, so a head can be trained to predict the mask.

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{SubsetPartition, REFERENCE_SUBSETS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMethod {
    /// Masked features set to 0.
    Zero,
    /// Masked features get i.i.d. N(0, sigma²) added.
    Gaussian,
    /// Each masked feature column is permuted across the batch rows.
    Swap,
}

/// When the corruption plan of a view is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    #[default]
    PerEpoch,
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    /// Disables masked-input reconstruction and mask prediction when false.
    pub enabled: bool,
    /// Views eligible for masking; one of them is chosen per batch.
    pub target_views: Vec<usize>,
    /// Subset counts, expressed for a 23-subset partition and rescaled to
    /// other subset counts.
    pub count_choices: Vec<usize>,
    pub methods: Vec<NoiseMethod>,
    pub gaussian_sigma: f64,
    pub resample: Resample,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            target_views: vec![0],
            count_choices: vec![6, 12, 18, REFERENCE_SUBSETS],
            methods: vec![NoiseMethod::Zero, NoiseMethod::Gaussian, NoiseMethod::Swap],
            gaussian_sigma: 1.0,
            resample: Resample::PerEpoch,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self, n_views: usize) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("corruption needs at least one method".into()));
        }
        if self.count_choices.is_empty()
            || self
                .count_choices
                .iter()
                .any(|&c| c == 0 || c > REFERENCE_SUBSETS)
        {
            return Err(Error::Config(format!(
                "count choices must lie in 1..={REFERENCE_SUBSETS}: {:?}",
                self.count_choices
            )));
        }
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma > 0.0) {
            return Err(Error::Config("gaussian_sigma must be positive".into()));
        }
        if self.enabled && self.target_views.is_empty() {
            return Err(Error::Config("masking enabled with no target views".into()));
        }
        if let Some(&v) = self.target_views.iter().find(|&&v| v >= n_views) {
            return Err(Error::Config(format!("target view {v} does not exist")));
        }
        Ok(())
    }

    /// Count choices for a partition with `k` subsets: `round(k·c/23)`, at least 1.
    pub fn counts_for(&self, k: usize) -> Vec<usize> {
        self.count_choices
            .iter()
            .map(|&c| {
                if k == REFERENCE_SUBSETS {
                    c
                } else {
                    ((k * c) as f64 / REFERENCE_SUBSETS as f64).round().clamp(1.0, k as f64) as usize
                }
            })
            .collect()
    }
}

/// What to corrupt in one view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub method: NoiseMethod,
    /// Sorted subset ids.
    pub subsets: Vec<usize>,
}

/// Draws a method uniformly, a subset count uniformly from the (rescaled)
/// count choices, and that many distinct subsets uniformly.
pub fn sample_plan<R: Rng + ?Sized>(
    cfg: &CorruptionConfig,
    partition: &SubsetPartition,
    rng: &mut R,
) -> MaskPlan {
    let method = *cfg.methods.choose(rng).expect("methods non-empty");
    let k = partition.n_subsets;
    let count = *cfg.counts_for(k).choose(rng).expect("counts non-empty");
    let mut subsets = index::sample(rng, k, count).into_vec();
    subsets.sort_unstable();
    MaskPlan { method, subsets }
}

/// The outcome of corrupting one batch of one view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub view_id: String,
    pub method: NoiseMethod,
    pub masked_subsets: Vec<usize>,
    /// Length-K indicator of `masked_subsets`.
    pub mask_vector: Vec<u8>,
    /// Swap was requested on a single-row batch and zeroing was applied instead.
    pub swap_fell_back_to_zero: bool,
}

/// Applies `method` to every feature in `masked_subsets`; other features are
/// copied bit-for-bit.
pub fn corrupt<R: Rng + ?Sized>(
    batch: &Array2<f64>,
    partition: &SubsetPartition,
    method: NoiseMethod,
    masked_subsets: &[usize],
    sigma: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, MaskRecord)> {
    if batch.ncols() != partition.n_features() {
        return Err(Error::Shape(format!(
            "batch has {} features, partition of view {} covers {}",
            batch.ncols(),
            partition.view_id,
            partition.n_features()
        )));
    }
    let k = partition.n_subsets;
    let mut mask_vector = vec![0u8; k];
    for &s in masked_subsets {
        if s >= k {
            return Err(Error::Data(format!("subset {s} outside [0, {k})")));
        }
        mask_vector[s] = 1;
    }
    let fell_back = method == NoiseMethod::Swap && batch.nrows() < 2;
    let applied = if fell_back { NoiseMethod::Zero } else { method };

    let mut out = batch.clone();
    let columns: Vec<usize> = partition
        .assignment
        .iter()
        .enumerate()
        .filter(|(_, &s)| mask_vector[s] == 1)
        .map(|(j, _)| j)
        .collect();
    match applied {
        NoiseMethod::Zero => {
            for &j in &columns {
                out.column_mut(j).fill(0.0);
            }
        }
        NoiseMethod::Gaussian => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| Error::Config(format!("gaussian sigma {sigma}: {e}")))?;
                for &j in &columns {
                    for v in out.column_mut(j) {
                        *v += normal.sample(rng);
                    }
                }
            }
        }
        NoiseMethod::Swap => {
            let mut order: Vec<usize> = (0..batch.nrows()).collect();
            for &j in &columns {
                order.shuffle(rng);
                for (dst, &src) in order.iter().enumerate() {
                    out[[dst, j]] = batch[[src, j]];
                }
            }
        }
    }
    let mut masked: Vec<usize> = masked_subsets.to_vec();
    masked.sort_unstable();
    masked.dedup();
    Ok((
        out,
        MaskRecord {
            view_id: partition.view_id.clone(),
            method,
            masked_subsets: masked,
            mask_vector,
            swap_fell_back_to_zero: fell_back,
        },
    ))
}

/// The per-subset {0,1} target for the mask-prediction head.
pub fn mask_target(record: &MaskRecord) -> Vec<f64> {
    record.mask_vector.iter().map(|&m| f64::from(m)).collect()
}
