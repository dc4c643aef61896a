//! Metrics, ablations, aggregation comparison and embedding export.

mod metrics;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{argmax_rows, binary_auc, compute_metrics, softmax_rows, MetricsReport};

use crate::data::{MultiOmicsDataset, Prepared};
use crate::error::{Error, Result};
use crate::losses::LossComponent;
use crate::model::{self, Aggregation, ModelParameters};
use crate::training::{
    downstream_cell, encode_views, pretrain_seeds, run_semi_supervised, Arm, Experiment, ProtocolConfig, ResultRow,
};

/// A pretext ingredient that an ablation removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drop {
    Alignment,
    Noise,
    Distance,
    #[serde(rename = "maskpred")]
    MaskPrediction,
    /// Corruption of the target view (and with it, the weighted reconstruction).
    Masking,
}

impl Drop {
    pub const ALL: [Drop; 5] = [
        Drop::Alignment,
        Drop::Noise,
        Drop::Distance,
        Drop::MaskPrediction,
        Drop::Masking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Drop::Alignment => "alignment",
            Drop::Noise => "noise",
            Drop::Distance => "distance",
            Drop::MaskPrediction => "maskpred",
            Drop::Masking => "masking",
        }
    }

    /// The experiment with this ingredient switched off.
    pub fn apply(self, exp: &Experiment) -> Experiment {
        let mut out = exp.clone();
        match self {
            Drop::Alignment => out.loss.set_weight(LossComponent::Alignment, 0.0),
            Drop::Noise => out.loss.set_weight(LossComponent::Noise, 0.0),
            Drop::Distance => out.loss.set_weight(LossComponent::Distance, 0.0),
            Drop::MaskPrediction => out.loss.set_weight(LossComponent::MaskPrediction, 0.0),
            Drop::Masking => out.corruption.enabled = false,
        }
        out
    }
}

impl fmt::Display for Drop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Drop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Drop::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation component `{s}` (expected one of alignment, noise, distance, maskpred, masking)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `baseline` or the dropped component.
    pub variant: String,
    pub fraction: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Runs the pretrained arm for the baseline and once per dropped component.
pub fn run_ablation(prepared: &Prepared, exp: &Experiment, drops: &[Drop]) -> Result<Vec<AblationRow>> {
    let mut variants = vec![("baseline".to_owned(), exp.clone())];
    for &d in drops {
        variants.push((d.name().to_owned(), d.apply(exp)));
    }
    let mut rows = Vec::new();
    for (variant, mut e) in variants {
        e.protocol = ProtocolConfig {
            arms: vec![Arm::PretrainedFrozen],
            ..e.protocol
        };
        let out = run_semi_supervised(prepared, &e)?;
        rows.extend(out.rows.into_iter().map(|r| AblationRow {
            variant: variant.clone(),
            fraction: r.fraction,
            seed: r.seed,
            metrics: r.metrics,
        }));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRow {
    pub aggregation: Aggregation,
    pub fraction: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// One downstream run per (method, fraction, seed) on a shared pretrained model per seed.
pub fn compare_aggregation(prepared: &Prepared, exp: &Experiment, methods: &[Aggregation]) -> Result<Vec<AggregationRow>> {
    exp.protocol.validate()?;
    let models = pretrain_seeds(prepared, exp, true)?;
    let mut cells = Vec::new();
    for &method in methods {
        for &fraction in &exp.protocol.fractions {
            for m in &models {
                cells.push((method, fraction, m));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(method, fraction, m)| {
            let encoders = m.for_arm(Arm::PretrainedFrozen);
            let metrics = downstream_cell(prepared, &exp.train, encoders, method, fraction, m.seed)?;
            Ok(AggregationRow {
                aggregation: method,
                fraction,
                seed: m.seed,
                metrics,
            })
        })
        .collect()
}

/// Writes `sample_id,label,h_1..h_D` with the aggregated latents of `indices`.
pub fn export_embeddings(
    params: &ModelParameters,
    ds: &MultiOmicsDataset,
    indices: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let latents = encode_views(params, ds, indices)?;
    let agg = model::aggregate(&latents, params.config.architecture.aggregation)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["sample_id".to_owned(), "label".to_owned()];
    header.extend((1..=agg.ncols()).map(|j| format!("h_{j}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (row, &i) in agg.outer_iter().zip(indices) {
        let mut rec = vec![
            ds.sample_ids()[i].clone(),
            ds.class_names[ds.labels[i]].clone(),
        ];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

const METRIC_COLUMNS: [&str; 5] = ["accuracy", "f1", "auc", "precision", "recall"];

/// Metric values as percentages with four decimals; `NA` for an undefined AUC.
fn metric_cells(m: &MetricsReport) -> [String; 5] {
    let pct = |v: f64| format!("{:.4}", 100.0 * v);
    [
        pct(m.accuracy),
        pct(m.macro_f1),
        m.macro_auc.map_or_else(|| "NA".to_owned(), pct),
        pct(m.macro_precision),
        pct(m.macro_recall),
    ]
}

fn write_table(path: &Path, key: &str, rows: impl Iterator<Item = (String, f64, u64, MetricsReport)>) -> Result<()> {
    let mut out = format!("{key},fraction,seed,{}\n", METRIC_COLUMNS.join(","));
    for (k, fraction, seed, m) in rows {
        out.push_str(&format!("{k},{fraction},{seed},{}\n", metric_cells(&m).join(",")));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `arm,fraction,seed,accuracy,f1,auc,precision,recall`.
pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    write_table(
        path.as_ref(),
        "arm",
        rows.iter().map(|r| (r.arm.name().to_owned(), r.fraction, r.seed, r.metrics.clone())),
    )
}

pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    write_table(
        path.as_ref(),
        "variant",
        rows.iter().map(|r| (r.variant.clone(), r.fraction, r.seed, r.metrics.clone())),
    )
}

pub fn write_aggregation_csv(path: impl AsRef<Path>, rows: &[AggregationRow]) -> Result<()> {
    write_table(
        path.as_ref(),
        "aggregation",
        rows.iter().map(|r| (r.aggregation.name().to_owned(), r.fraction, r.seed, r.metrics.clone())),
    )
}

/// Mean accuracy per key over seeds, in first-seen order.
pub fn mean_accuracy<K: PartialEq + Clone>(rows: impl IntoIterator<Item = (K, f64)>) -> Vec<(K, f64)> {
    let mut acc: Vec<(K, f64, usize)> = Vec::new();
    for (k, v) in rows {
        match acc.iter_mut().find(|(key, _, _)| *key == k) {
            Some(e) => {
                e.1 += v;
                e.2 += 1;
            }
            None => acc.push((k, v, 1)),
        }
    }
    acc.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect()
}
