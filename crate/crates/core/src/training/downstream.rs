use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EarlyStop, TrainConfig};
use crate::data::MultiOmicsDataset;
use crate::error::{Error, Result};
use crate::evaluation::argmax_rows;
use crate::losses;
use crate::model::{self, Forward, ModelParameters};
use crate::optim::Optimizer;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: Option<f64>,
    pub train_accuracy: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub params: ModelParameters,
    pub log: Vec<FinetuneRecord>,
}

/// Inference-mode latents of every view for the given rows.
pub fn encode_views(params: &ModelParameters, ds: &MultiOmicsDataset, indices: &[usize]) -> Result<Vec<Array2<f64>>> {
    ds.views
        .iter()
        .enumerate()
        .map(|(v, m)| model::encode(params, v, &m.rows(indices)))
        .collect()
}

/// Classifier logits for the given rows with every view present.
pub fn predict_logits(params: &ModelParameters, ds: &MultiOmicsDataset, indices: &[usize]) -> Result<Array2<f64>> {
    let latents = encode_views(params, ds, indices)?;
    let agg = model::aggregate(&latents, params.config.architecture.aggregation)?;
    model::classify(params, &agg)
}

fn select(latents: &[Array2<f64>], rows: &[usize]) -> Vec<Array2<f64>> {
    latents.iter().map(|l| l.select(Axis(0), rows)).collect()
}

/// Classification loss and logits of one batch.
///
/// With `cached` latents the encoders are skipped; otherwise the raw views
/// of `rows` pass through the encoders in the same graph.
fn batch_loss(
    f: &mut Forward,
    ds: &MultiOmicsDataset,
    rows: &[usize],
    cached: Option<Vec<Array2<f64>>>,
    labels: &[usize],
) -> Result<crate::graph::Var> {
    let latents = match cached {
        Some(ls) => ls.into_iter().map(|l| f.constant(l)).collect::<Vec<_>>(),
        None => {
            let mut hs = Vec::with_capacity(ds.n_views());
            for (v, m) in ds.views.iter().enumerate() {
                let x = f.constant(m.rows(rows));
                hs.push(f.encode(v, x)?);
            }
            hs
        }
    };
    let agg = f.aggregate(&latents, f.params().config.architecture.aggregation)?;
    let logits = f.classify(agg)?;
    losses::classification_loss(&mut f.tape, logits, labels)
}

fn check_labels(params: &ModelParameters, labels: &[usize]) -> Result<()> {
    let c = params.config.n_classes;
    match labels.iter().find(|&&l| l >= c) {
        Some(bad) => Err(Error::Data(format!("label {bad} outside [0, {c})"))),
        None => Ok(()),
    }
}

/// Trains the classifier (and, without `freeze_encoders`, the encoders) on
/// the labelled rows. The validation rows drive early stopping.
pub fn finetune(
    params: &ModelParameters,
    ds: &MultiOmicsDataset,
    labelled: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if labelled.is_empty() {
        return Err(Error::Data("no labelled samples to finetune on".into()));
    }
    let mut params = params.clone();
    params.set_frozen(&["encoders"], cfg.freeze_encoders)?;
    params.set_frozen(&["classifier"], false)?;
    let labels = ds.labels_at(labelled);
    let val_labels = ds.labels_at(val);
    check_labels(&params, &labels)?;
    check_labels(&params, &val_labels)?;

    // encoders are constant while frozen, so their outputs can be reused
    let cache = |p: &ModelParameters, rows: &[usize]| -> Result<Option<Vec<Array2<f64>>>> {
        if cfg.freeze_encoders {
            encode_views(p, ds, rows).map(Some)
        } else {
            Ok(None)
        }
    };
    let train_latents = cache(&params, labelled)?;
    let val_latents = cache(&params, val)?;

    let mut opt = Optimizer::new(cfg.optimizer, cfg.downstream_lr())?;
    let mut stop = EarlyStop::new(cfg.patience);
    let mut log = Vec::new();
    let positions: Vec<usize> = (0..labelled.len()).collect();

    for epoch in 1..=cfg.downstream_epochs {
        let start = Instant::now();
        let mut rng = seed::rng(cfg.seed, "finetune", &[epoch as u64]);
        let mut order = positions.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&p| labelled[p]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&p| labels[p]).collect();
            let grads = {
                let mut f = Forward::training(&params);
                let cached = train_latents.as_ref().map(|ls| select(ls, chunk));
                let loss = batch_loss(&mut f, ds, &rows, cached, &batch_labels)?;
                let value = f.tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        component: "classification".into(),
                        step: Some(epoch),
                    });
                }
                loss_sum += value * chunk.len() as f64;
                f.backward(loss)
            };
            opt.step(&mut params, &grads);
        }

        let logits = |p: &ModelParameters, rows: &[usize], lat: &Option<Vec<Array2<f64>>>| -> Result<Array2<f64>> {
            match lat {
                Some(ls) => model::classify(p, &model::aggregate(ls, p.config.architecture.aggregation)?),
                None => predict_logits(p, ds, rows),
            }
        };
        let train_pred = argmax_rows(&logits(&params, labelled, &train_latents)?);
        let correct = train_pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        let val_loss = if val.is_empty() {
            None
        } else {
            let l = logits(&params, val, &val_latents)?;
            Some(losses::value::classification(&l, &val_labels)?)
        };
        let record = FinetuneRecord {
            epoch,
            loss: loss_sum / labelled.len() as f64,
            val_loss,
            train_accuracy: correct as f64 / labelled.len() as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::debug!("downstream epoch {epoch}: loss {:.6} val {:?}", record.loss, record.val_loss);
        log.push(record);
        if cfg.patience > 0 {
            if let Some(v) = val_loss {
                if stop.observe(v, || params.clone()) {
                    break;
                }
            }
        }
    }
    if let Some(best) = stop.into_best() {
        params = best;
    }
    Ok(FinetuneOutcome { params, log })
}

/// Mean latent per (class, view) over labelled training rows, with the
/// per-view mean over all of them as fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLatentTable {
    /// `means[class][view]`; the global mean for classes never observed.
    pub means: Vec<Vec<Array1<f64>>>,
    /// Whether each class had at least one labelled row.
    pub observed: Vec<bool>,
    pub global: Vec<Array1<f64>>,
}

impl ClassLatentTable {
    pub fn entry(&self, class: usize, view: usize) -> &Array1<f64> {
        &self.means[class][view]
    }
}

/// Builds the table from per-view latent batches and their labels.
pub fn class_latent_table_from(latents: &[Array2<f64>], labels: &[usize], n_classes: usize) -> Result<ClassLatentTable> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Data("class latent table needs labelled rows".into()));
    }
    if latents.iter().any(|l| l.nrows() != n) {
        return Err(Error::Shape("latent rows do not match labels".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {n_classes})")));
    }
    let global: Vec<Array1<f64>> = latents
        .iter()
        .map(|l| l.mean_axis(Axis(0)).expect("non-empty"))
        .collect();
    let mut observed = vec![false; n_classes];
    let mut means = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            log::debug!("class {c} has no labelled rows; using the global mean latent");
            means.push(global.clone());
            continue;
        }
        observed[c] = true;
        means.push(
            latents
                .iter()
                .map(|l| l.select(Axis(0), &rows).mean_axis(Axis(0)).expect("non-empty"))
                .collect(),
        );
    }
    Ok(ClassLatentTable {
        means,
        observed,
        global,
    })
}

pub fn build_class_latent_table(
    params: &ModelParameters,
    ds: &MultiOmicsDataset,
    labelled: &[usize],
) -> Result<ClassLatentTable> {
    let latents = encode_views(params, ds, labelled)?;
    class_latent_table_from(&latents, &ds.labels_at(labelled), params.config.n_classes)
}

/// How latents of absent views are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingViewPolicy {
    /// Substitute class-mean latents; the class comes from `known_labels`
    /// or from a first prediction on the available views.
    ImputeClassMean,
    /// Aggregate only the present views; concatenation fills the missing
    /// slots with the global mean latent.
    AggregateAvailable,
}

fn repeat_row(row: &Array1<f64>, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, row.len()), |(_, j)| row[j])
}

fn aggregate_available(
    params: &ModelParameters,
    present: &[(usize, Array2<f64>)],
    n: usize,
    table: &ClassLatentTable,
) -> Result<Array2<f64>> {
    let method = params.config.architecture.aggregation;
    let latents: Vec<Array2<f64>> = match method {
        model::Aggregation::Concat => (0..params.config.n_views())
            .map(|v| match present.iter().find(|(u, _)| *u == v) {
                Some((_, h)) => h.clone(),
                None => repeat_row(&table.global[v], n),
            })
            .collect(),
        _ => present.iter().map(|(_, h)| h.clone()).collect(),
    };
    model::classify(params, &model::aggregate(&latents, method)?)
}

/// Class logits for samples whose views may be missing (`None`).
pub fn infer_with_missing(
    params: &ModelParameters,
    views: &[Option<Array2<f64>>],
    table: &ClassLatentTable,
    policy: MissingViewPolicy,
    known_labels: Option<&[usize]>,
) -> Result<Array2<f64>> {
    let n_views = params.config.n_views();
    if views.len() != n_views {
        return Err(Error::Shape(format!("{} view slots for a {n_views}-view model", views.len())));
    }
    let mut present = Vec::new();
    for (v, x) in views.iter().enumerate() {
        if let Some(x) = x {
            present.push((v, model::encode(params, v, x)?));
        }
    }
    let n = present
        .first()
        .map(|(_, h)| h.nrows())
        .ok_or_else(|| Error::Data("at least one view must be present".into()))?;
    if present.iter().any(|(_, h)| h.nrows() != n) {
        return Err(Error::Shape("present views have different row counts".into()));
    }
    if table.global.len() != n_views || table.means.len() != params.config.n_classes {
        return Err(Error::Shape("class latent table does not match the model".into()));
    }
    if present.len() == n_views {
        let latents: Vec<Array2<f64>> = present.into_iter().map(|(_, h)| h).collect();
        let agg = model::aggregate(&latents, params.config.architecture.aggregation)?;
        return model::classify(params, &agg);
    }
    match policy {
        MissingViewPolicy::AggregateAvailable => aggregate_available(params, &present, n, table),
        MissingViewPolicy::ImputeClassMean => {
            let classes = match known_labels {
                Some(l) if l.len() == n => l.to_vec(),
                Some(l) => {
                    return Err(Error::Shape(format!("{} known labels for {n} samples", l.len())));
                }
                None => argmax_rows(&aggregate_available(params, &present, n, table)?),
            };
            if let Some(bad) = classes.iter().find(|&&c| c >= table.means.len()) {
                return Err(Error::Data(format!("label {bad} outside the class latent table")));
            }
            let latents: Vec<Array2<f64>> = (0..n_views)
                .map(|v| match present.iter().find(|(u, _)| *u == v) {
                    Some((_, h)) => h.clone(),
                    None => {
                        let d = table.global[v].len();
                        Array2::from_shape_fn((n, d), |(i, j)| table.entry(classes[i], v)[j])
                    }
                })
                .collect();
            let agg = model::aggregate(&latents, params.config.architecture.aggregation)?;
            model::classify(params, &agg)
        }
    }
}
