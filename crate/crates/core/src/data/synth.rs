use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{partition_uniform, MultiOmicsDataset, OmicsMatrix, REFERENCE_SUBSETS};
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of the class-conditioned shared-latent generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    pub dims: Vec<usize>,
    pub shared_latent_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Standard deviation of the class centroids in latent space; the
    /// within-class latent spread is 1.
    pub class_separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_classes: 10,
            dims: vec![50, 40, 20],
            shared_latent_dim: 8,
            noise_sigma: 0.5,
            seed: 7,
            class_separation: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0
            || self.n_classes == 0
            || self.dims.is_empty()
            || self.dims.contains(&0)
            || self.shared_latent_dim == 0
        {
            return Err(Error::Config(format!("synthetic counts must be positive: {self:?}")));
        }
        if !(self.noise_sigma >= 0.0 && self.class_separation >= 0.0) {
            return Err(Error::Config("noise and separation must be non-negative".into()));
        }
        Ok(())
    }
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut seed::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Each sample draws a latent around its class centroid; every view is an
/// independent random linear image of that latent plus isotropic noise.
/// Classes are assigned round-robin, then shuffled.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<MultiOmicsDataset> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let latent = cfg.shared_latent_dim;

    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.n_classes).collect();
    labels.shuffle(&mut seed::rng(cfg.seed, "synth-labels", &[]));

    let centroids = normal_matrix(
        cfg.n_classes,
        latent,
        cfg.class_separation,
        &mut seed::rng(cfg.seed, "synth-centroids", &[]),
    );
    let mut z = normal_matrix(n, latent, 1.0, &mut seed::rng(cfg.seed, "synth-latent", &[]));
    for (mut row, &l) in z.outer_iter_mut().zip(&labels) {
        row += &centroids.row(l);
    }

    let sample_ids: Vec<String> = (0..n).map(|i| format!("s{i:05}")).collect();
    let mut views = Vec::with_capacity(cfg.dims.len());
    let mut partitions = Vec::with_capacity(cfg.dims.len());
    for (v, &dim) in cfg.dims.iter().enumerate() {
        let view_id = format!("view_{v}");
        let mut rng = seed::rng(cfg.seed, "synth-view", &[v as u64]);
        let map = normal_matrix(latent, dim, 1.0 / (dim as f64).sqrt(), &mut rng);
        let mut x = z.dot(&map);
        if cfg.noise_sigma > 0.0 {
            x += &normal_matrix(n, dim, cfg.noise_sigma, &mut rng);
        }
        let feature_ids = (0..dim).map(|j| format!("v{v}_f{j}")).collect();
        partitions.push(Some(partition_uniform(
            &view_id,
            dim,
            REFERENCE_SUBSETS.min(dim),
        )?));
        views.push(OmicsMatrix::new(view_id, feature_ids, sample_ids.clone(), x)?);
    }
    let class_names = (0..cfg.n_classes).map(|c| format!("class_{c:02}")).collect();
    MultiOmicsDataset::new(views, labels, class_names, partitions)
}
