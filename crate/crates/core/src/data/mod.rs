//! Aligned multi-view tables: loading, preprocessing, subset partitions,
//! synthetic generation and reproducible splits.

mod io;
mod partition;
mod preprocess;
mod split;
mod synth;

use std::collections::HashSet;

use ndarray::{Array2, Axis};

pub use io::{
    load_dataset, load_omics_matrix, load_partition, parse_labels, parse_omics_matrix,
    parse_partition, write_dataset, write_labels, write_omics_matrix, write_partition, Manifest,
    ViewEntry,
};
pub use partition::{partition_uniform, SubsetPartition, REFERENCE_SUBSETS};
pub use preprocess::{mean_impute, prepare, standardize_apply, standardize_fit, Prepared, ScalerState};
pub use split::{split, subsample_labels, SplitFractions, SplitSpec};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};

/// One omic view: rows are samples, columns are features. Missing entries are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct OmicsMatrix {
    pub view_id: String,
    pub feature_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    pub values: Array2<f64>,
}

impl OmicsMatrix {
    pub fn new(
        view_id: impl Into<String>,
        feature_ids: Vec<String>,
        sample_ids: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let view_id = view_id.into();
        if values.dim() != (sample_ids.len(), feature_ids.len()) {
            return Err(Error::Shape(format!(
                "view {view_id}: values are {:?} but there are {} samples and {} features",
                values.dim(),
                sample_ids.len(),
                feature_ids.len()
            )));
        }
        if let Some(dup) = first_duplicate(&feature_ids) {
            return Err(Error::Data(format!("view {view_id}: duplicate feature id {dup}")));
        }
        if let Some(dup) = first_duplicate(&sample_ids) {
            return Err(Error::Data(format!("view {view_id}: duplicate sample id {dup}")));
        }
        Ok(Self {
            view_id,
            feature_ids,
            sample_ids,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.values.select(Axis(0), indices)
    }
}

pub(crate) fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.iter().find(|id| !seen.insert(id.as_str())).map(String::as_str)
}

/// Views sharing one sample order, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOmicsDataset {
    pub views: Vec<OmicsMatrix>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub partitions: Vec<Option<SubsetPartition>>,
}

impl MultiOmicsDataset {
    pub fn new(
        views: Vec<OmicsMatrix>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        partitions: Vec<Option<SubsetPartition>>,
    ) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::Data("dataset needs at least one view".into()))?;
        for v in &views[1..] {
            if v.sample_ids != first.sample_ids {
                return Err(Error::Data(format!(
                    "view {} does not share the sample order of view {}",
                    v.view_id, first.view_id
                )));
            }
        }
        if labels.len() != first.n_samples() {
            return Err(Error::Data(format!(
                "{} labels for {} samples",
                labels.len(),
                first.n_samples()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!(
                "label {bad} outside [0, {})",
                class_names.len()
            )));
        }
        if partitions.len() != views.len() {
            return Err(Error::Data(format!(
                "{} partition slots for {} views",
                partitions.len(),
                views.len()
            )));
        }
        for (v, p) in views.iter().zip(&partitions) {
            if let Some(p) = p {
                if p.n_features() != v.n_features() {
                    return Err(Error::Data(format!(
                        "partition for view {} covers {} features, view has {}",
                        v.view_id,
                        p.n_features(),
                        v.n_features()
                    )));
                }
            }
        }
        Ok(Self {
            views,
            labels,
            class_names,
            partitions,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(OmicsMatrix::n_features).collect()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.views[0].sample_ids
    }

    /// The supplied partition, or a uniform one with `min(23, n_features)` subsets.
    pub fn effective_partition(&self, view: usize) -> SubsetPartition {
        match &self.partitions[view] {
            Some(p) => p.clone(),
            None => {
                let m = &self.views[view];
                let k = REFERENCE_SUBSETS.min(m.n_features()).max(1);
                partition_uniform(&m.view_id, m.n_features(), k)
                    .expect("k within [1, n_features]")
            }
        }
    }

    /// Row batches of every view at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Vec<Array2<f64>> {
        self.views.iter().map(|v| v.rows(indices)).collect()
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}
