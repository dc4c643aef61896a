use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{MultiOmicsDataset, OmicsMatrix, SplitSpec};
use crate::error::{Error, Result};

/// Replaces missing entries with the mean of the observed entries of their column.
pub fn mean_impute(m: &OmicsMatrix) -> Result<OmicsMatrix> {
    let mut out = m.clone();
    for (j, mut col) in out.values.axis_iter_mut(Axis(1)).enumerate() {
        let (sum, count) = col
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
        if count == col.len() {
            continue;
        }
        if count == 0 {
            return Err(Error::Data(format!(
                "view {}: feature {} has no observed values",
                m.view_id, m.feature_ids[j]
            )));
        }
        let mean = sum / count as f64;
        col.mapv_inplace(|v| if v.is_nan() { mean } else { v });
    }
    Ok(out)
}

/// Per-feature location and scale fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance features store 1.
    pub std: Vec<f64>,
}

pub fn standardize_fit(m: &OmicsMatrix, train_indices: &[usize]) -> Result<ScalerState> {
    if train_indices.is_empty() {
        return Err(Error::Data("cannot fit a scaler on zero training rows".into()));
    }
    if let Some(&bad) = train_indices.iter().find(|&&i| i >= m.n_samples()) {
        return Err(Error::Data(format!("row index {bad} out of range")));
    }
    let rows = m.rows(train_indices);
    if rows.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(format!(
            "view {} still has missing values; impute before scaling",
            m.view_id
        )));
    }
    let n = rows.nrows() as f64;
    let mut mean = Vec::with_capacity(m.n_features());
    let mut std = Vec::with_capacity(m.n_features());
    for col in rows.axis_iter(Axis(1)) {
        let mu = col.sum() / n;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.push(mu);
        std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    Ok(ScalerState { mean, std })
}

pub fn standardize_apply(m: &OmicsMatrix, s: &ScalerState) -> Result<OmicsMatrix> {
    if s.mean.len() != m.n_features() || s.std.len() != m.n_features() {
        return Err(Error::Shape(format!(
            "scaler covers {} features, view {} has {}",
            s.mean.len(),
            m.view_id,
            m.n_features()
        )));
    }
    let mut out = m.clone();
    for ((mut col, &mu), &sd) in out.values.axis_iter_mut(Axis(1)).zip(&s.mean).zip(&s.std) {
        col.mapv_inplace(|v| (v - mu) / sd);
    }
    Ok(out)
}

/// A dataset that has been imputed and standardized with train-split statistics.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: MultiOmicsDataset,
    pub split: SplitSpec,
    pub scalers: Vec<ScalerState>,
}

pub fn prepare(ds: &MultiOmicsDataset, split: SplitSpec) -> Result<Prepared> {
    let mut views = Vec::with_capacity(ds.n_views());
    let mut scalers = Vec::with_capacity(ds.n_views());
    for m in &ds.views {
        let imputed = mean_impute(m)?;
        let scaler = standardize_fit(&imputed, &split.train)?;
        views.push(standardize_apply(&imputed, &scaler)?);
        scalers.push(scaler);
    }
    let dataset = MultiOmicsDataset::new(
        views,
        ds.labels.clone(),
        ds.class_names.clone(),
        ds.partitions.clone(),
    )?;
    Ok(Prepared {
        dataset,
        split,
        scalers,
    })
}
