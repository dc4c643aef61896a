use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pretext::{pretrain, EpochRecord};
use super::{finetune, predict_logits, TrainConfig};
use crate::corruption::CorruptionConfig;
use crate::data::{subsample_labels, MultiOmicsDataset, Prepared};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, softmax_rows, MetricsReport};
use crate::losses::PretextLossWeights;
use crate::model::{init_model, Aggregation, Architecture, ModelConfig, ModelParameters};

/// Encoder initialization of a protocol arm; both keep encoders frozen downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    PretrainedFrozen,
    RandomFrozen,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::PretrainedFrozen, Arm::RandomFrozen];

    pub fn name(self) -> &'static str {
        match self {
            Arm::PretrainedFrozen => "pretrained_frozen",
            Arm::RandomFrozen => "random_frozen",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm `{s}` (expected pretrained_frozen or random_frozen)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.01, 0.05, 0.1, 0.5, 1.0],
            seeds: vec![0, 1, 2],
            arms: Arm::ALL.to_vec(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.seeds.is_empty() || self.arms.is_empty() {
            return Err(Error::Config("protocol needs at least one fraction, seed and arm".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!("label fraction {f} outside (0, 1]")));
        }
        Ok(())
    }
}

/// Everything a protocol run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: ModelConfig,
    pub corruption: CorruptionConfig,
    pub loss: PretextLossWeights,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
}

/// Model configuration sized for `ds`, with a mask head for every view.
pub fn model_config_for(ds: &MultiOmicsDataset, n_classes: usize, architecture: Architecture) -> ModelConfig {
    let mut cfg = ModelConfig::new(ds.dims(), n_classes, architecture);
    cfg.mask_subsets = (0..ds.n_views())
        .map(|v| Some(ds.effective_partition(v).n_subsets))
        .collect();
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub arm: Arm,
    pub fraction: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct SeedModels {
    pub seed: u64,
    pub random: ModelParameters,
    pub pretrained: Option<ModelParameters>,
    pub pretrain_log: Vec<EpochRecord>,
}

impl SeedModels {
    pub fn for_arm(&self, arm: Arm) -> &ModelParameters {
        match arm {
            Arm::RandomFrozen => &self.random,
            Arm::PretrainedFrozen => self.pretrained.as_ref().expect("pretrained when requested"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub rows: Vec<ResultRow>,
    pub models: Vec<SeedModels>,
}

/// Initializes one model per seed and, when `with_pretraining`, pretrains it.
pub fn pretrain_seeds(prepared: &Prepared, exp: &Experiment, with_pretraining: bool) -> Result<Vec<SeedModels>> {
    exp.protocol
        .seeds
        .par_iter()
        .map(|&seed| {
            let random = init_model(&exp.model, seed)?;
            let (pretrained, pretrain_log) = if with_pretraining {
                let cfg = TrainConfig {
                    seed,
                    ..exp.train.clone()
                };
                let out = pretrain(&random, prepared, &exp.corruption, &exp.loss, &cfg)?;
                (Some(out.params), out.log)
            } else {
                (None, Vec::new())
            };
            Ok(SeedModels {
                seed,
                random,
                pretrained,
                pretrain_log,
            })
        })
        .collect()
}

/// Subsamples labels, trains a fresh classifier on `encoders` and scores the test split.
pub fn downstream_cell(
    prepared: &Prepared,
    train: &TrainConfig,
    encoders: &ModelParameters,
    aggregation: Aggregation,
    fraction: f64,
    seed: u64,
) -> Result<MetricsReport> {
    let ds = &prepared.dataset;
    let split = &prepared.split;
    if split.test.is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    let labelled = subsample_labels(split, &ds.labels, fraction, seed)?;
    let params = encoders.with_classifier(aggregation, seed)?;
    let cfg = TrainConfig {
        seed,
        label_fraction: fraction,
        ..train.clone()
    };
    let tuned = finetune(&params, ds, &labelled, &split.val, &cfg)?;
    let probs = softmax_rows(&predict_logits(&tuned.params, ds, &split.test)?);
    compute_metrics(&probs, &ds.labels_at(&split.test))
}

/// One result row per (arm, fraction, seed), in that nesting order.
pub fn run_semi_supervised(prepared: &Prepared, exp: &Experiment) -> Result<ProtocolOutcome> {
    exp.protocol.validate()?;
    let needs_pretraining = exp.protocol.arms.contains(&Arm::PretrainedFrozen);
    let models = pretrain_seeds(prepared, exp, needs_pretraining)?;
    let mut cells = Vec::new();
    for &arm in &exp.protocol.arms {
        for &fraction in &exp.protocol.fractions {
            for m in &models {
                cells.push((arm, fraction, m));
            }
        }
    }
    let aggregation = exp.model.architecture.aggregation;
    let rows = cells
        .par_iter()
        .map(|&(arm, fraction, m)| {
            let metrics = downstream_cell(prepared, &exp.train, m.for_arm(arm), aggregation, fraction, m.seed)?;
            log::info!(
                "{arm} fraction {fraction} seed {}: accuracy {:.4}",
                m.seed,
                metrics.accuracy
            );
            Ok(ResultRow {
                arm,
                fraction,
                seed: m.seed,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolOutcome { rows, models })
}
