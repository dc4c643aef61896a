//! Pretext optimization, frozen-encoder downstream training, the
//! semi-supervised protocol and missing-view inference.

mod downstream;
mod pretext;
mod protocol;

use serde::{Deserialize, Serialize};

pub use downstream::{
    build_class_latent_table, class_latent_table_from, encode_views, finetune, infer_with_missing,
    predict_logits, ClassLatentTable, FinetuneOutcome, FinetuneRecord, MissingViewPolicy,
};
pub use pretext::{
    build_pretext_batch, evaluate_pretext, pretext_losses, pretrain, EpochRecord, MaskedView,
    PretextBatch, PretrainOutcome,
};
pub use protocol::{
    downstream_cell, model_config_for, pretrain_seeds, run_semi_supervised, Arm, Experiment,
    ProtocolConfig, ProtocolOutcome, ResultRow, SeedModels,
};

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

/// Optimization settings shared by the pretext and downstream stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretext_epochs: usize,
    pub downstream_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Downstream learning rate; falls back to `learning_rate`.
    pub downstream_learning_rate: Option<f64>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub label_fraction: f64,
    pub freeze_encoders: bool,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretext_epochs: 50,
            downstream_epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            downstream_learning_rate: None,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            label_fraction: 1.0,
            freeze_encoders: true,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for lr in [Some(self.learning_rate), self.downstream_learning_rate].into_iter().flatten() {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("learning rate {lr} must be finite and >= 0")));
            }
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label_fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        Ok(())
    }

    pub fn downstream_lr(&self) -> f64 {
        self.downstream_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// Tracks the best validation score and when to stop.
struct EarlyStop<T> {
    patience: usize,
    best: Option<(f64, T)>,
    since_best: usize,
}

impl<T> EarlyStop<T> {
    fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records a score; returns true when training should stop.
    fn observe(&mut self, score: f64, snapshot: impl FnOnce() -> T) -> bool {
        if self.best.as_ref().map_or(true, |(b, _)| score < *b) {
            self.best = Some((score, snapshot()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.patience > 0 && self.since_best >= self.patience
    }

    fn into_best(self) -> Option<T> {
        self.best.map(|(_, t)| t)
    }
}
