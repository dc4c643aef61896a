//! Per-view encoders, all-view decoders, projection/predictor heads,
//! mask-prediction heads and the downstream classifier.
//!
//! Every network is a stack of dense layers held in a named [`Component`].
//! Component names:
//!
//! | name                         | layers                                   |
//! |------------------------------|------------------------------------------|
//! | `encoder.{v}`                | input → encoder hidden… → latent         |
//! | `adapter.{v}`, `encoder.shared` | shared-trunk variant of the encoders  |
//! | `decoder.{v}`                | latent → decoder hidden… (trunk)         |
//! | `decoder.{v}.head.{u}`       | trunk → width of view `u`                |
//! | `projection` / `projection.{v}` | latent → hidden → projection         |
//! | `predictor`                  | projection → hidden → projection         |
//! | `mask_head.{v}`              | latent → hidden → subsets of view `v`    |
//! | `classifier`                 | aggregated latent → hidden… → classes    |
//!
//! With `shared_trunk` the decoders are `decoder.shared` and `decoder.shared.head.{u}`.

mod checkpoint;
mod forward;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, StoredComponent, StoredTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{
    aggregate, classify, decode, encode, predict_mask, project, Forward, ParamGrads,
};

use crate::error::{Error, Result};
use crate::graph::Activation;
use crate::seed;

/// How per-view latents are combined before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Concat,
    Mean,
    Sum,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Concat, Aggregation::Mean, Aggregation::Sum];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Concat => "concat",
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
        }
    }

    pub fn output_width(self, n_views: usize, latent_dim: usize) -> usize {
        match self {
            Aggregation::Concat => n_views * latent_dim,
            Aggregation::Mean | Aggregation::Sum => latent_dim,
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregation `{s}` (expected concat, mean or sum)")))
    }
}

/// Data-independent architecture choices; the config-file `model` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// `None` mirrors `encoder_hidden`.
    pub decoder_hidden: Option<Vec<usize>>,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub per_view_projection: bool,
    pub predictor_hidden: usize,
    pub mask_head_hidden: usize,
    pub classifier_hidden: Vec<usize>,
    pub shared_trunk: bool,
    /// Common width the shared-trunk adapters map to; `None` uses the first
    /// encoder hidden width (or the latent width without hidden layers).
    pub adapter_width: Option<usize>,
    pub aggregation: Aggregation,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![256, 128],
            latent_dim: 64,
            decoder_hidden: None,
            projection_hidden: 64,
            projection_dim: 32,
            per_view_projection: false,
            predictor_hidden: 16,
            mask_head_hidden: 32,
            classifier_hidden: vec![],
            shared_trunk: false,
            adapter_width: None,
            aggregation: Aggregation::Concat,
            activation: Activation::Relu,
        }
    }
}

/// Full model description: architecture plus the data-derived widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dims: Vec<usize>,
    pub n_classes: usize,
    /// Subset count per view; views with `None` get no mask head.
    pub mask_subsets: Vec<Option<usize>>,
    pub architecture: Architecture,
}

impl ModelConfig {
    pub fn new(input_dims: Vec<usize>, n_classes: usize, architecture: Architecture) -> Self {
        let mask_subsets = vec![None; input_dims.len()];
        Self {
            input_dims,
            n_classes,
            mask_subsets,
            architecture,
        }
    }

    pub fn n_views(&self) -> usize {
        self.input_dims.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.architecture.latent_dim
    }

    pub fn aggregation_width(&self) -> usize {
        self.architecture
            .aggregation
            .output_width(self.n_views(), self.architecture.latent_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.architecture;
        let widths = a
            .encoder_hidden
            .iter()
            .chain(a.decoder_hidden.iter().flatten())
            .chain(&a.classifier_hidden)
            .chain(a.adapter_width.iter());
        if self.input_dims.is_empty()
            || self.input_dims.contains(&0)
            || self.n_classes == 0
            || a.latent_dim == 0
            || a.projection_dim == 0
            || a.projection_hidden == 0
            || a.predictor_hidden == 0
            || a.mask_head_hidden == 0
            || widths.into_iter().any(|&w| w == 0)
        {
            return Err(Error::Config(format!("model widths must be positive: {self:?}")));
        }
        if self.mask_subsets.len() != self.n_views() {
            return Err(Error::Config(format!(
                "{} mask subset entries for {} views",
                self.mask_subsets.len(),
                self.n_views()
            )));
        }
        if self.mask_subsets.iter().flatten().any(|&k| k == 0) {
            return Err(Error::Config("mask heads need at least one subset".into()));
        }
        Ok(())
    }

    fn decoder_hidden(&self) -> Vec<usize> {
        let a = &self.architecture;
        a.decoder_hidden
            .clone()
            .unwrap_or_else(|| a.encoder_hidden.iter().rev().copied().collect())
    }

    fn adapter_width(&self) -> usize {
        let a = &self.architecture;
        a.adapter_width
            .or_else(|| a.encoder_hidden.first().copied())
            .unwrap_or(a.latent_dim)
    }

    pub fn encoder_components(&self, view: usize) -> Vec<String> {
        if self.architecture.shared_trunk {
            vec![format!("adapter.{view}"), "encoder.shared".to_owned()]
        } else {
            vec![format!("encoder.{view}")]
        }
    }

    pub fn decoder_name(&self, source_view: usize) -> String {
        if self.architecture.shared_trunk {
            "decoder.shared".to_owned()
        } else {
            format!("decoder.{source_view}")
        }
    }

    pub fn projection_name(&self, view: usize) -> String {
        if self.architecture.per_view_projection {
            format!("projection.{view}")
        } else {
            "projection".to_owned()
        }
    }

    /// Layer widths (input first) of every component.
    pub fn layout(&self) -> BTreeMap<String, Vec<usize>> {
        let a = &self.architecture;
        let d = a.latent_dim;
        let mut out = BTreeMap::new();
        let chain = |first: usize, mid: &[usize], last: usize| {
            let mut w = vec![first];
            w.extend_from_slice(mid);
            w.push(last);
            w
        };
        if a.shared_trunk {
            let aw = self.adapter_width();
            for (v, &dim) in self.input_dims.iter().enumerate() {
                out.insert(format!("adapter.{v}"), vec![dim, aw]);
            }
            let mid = a.encoder_hidden.get(1..).unwrap_or(&[]);
            out.insert("encoder.shared".to_owned(), chain(aw, mid, d));
        } else {
            for (v, &dim) in self.input_dims.iter().enumerate() {
                out.insert(format!("encoder.{v}"), chain(dim, &a.encoder_hidden, d));
            }
        }
        let dec_hidden = self.decoder_hidden();
        let trunk_out = dec_hidden.last().copied().unwrap_or(d);
        let sources: Vec<String> = if a.shared_trunk {
            vec!["decoder.shared".to_owned()]
        } else {
            (0..self.n_views()).map(|v| format!("decoder.{v}")).collect()
        };
        for name in sources {
            if !dec_hidden.is_empty() {
                let mut w = vec![d];
                w.extend_from_slice(&dec_hidden);
                out.insert(name.clone(), w);
            }
            for (u, &dim) in self.input_dims.iter().enumerate() {
                out.insert(format!("{name}.head.{u}"), vec![trunk_out, dim]);
            }
        }
        let projection = vec![d, a.projection_hidden, a.projection_dim];
        if a.per_view_projection {
            for v in 0..self.n_views() {
                out.insert(format!("projection.{v}"), projection.clone());
            }
        } else {
            out.insert("projection".to_owned(), projection);
        }
        out.insert(
            "predictor".to_owned(),
            vec![a.projection_dim, a.predictor_hidden, a.projection_dim],
        );
        for (v, k) in self.mask_subsets.iter().enumerate() {
            if let Some(k) = k {
                out.insert(format!("mask_head.{v}"), vec![d, a.mask_head_hidden, *k]);
            }
        }
        out.insert(
            "classifier".to_owned(),
            chain(self.aggregation_width(), &a.classifier_hidden, self.n_classes),
        );
        out
    }
}

/// One dense layer: `y = x·weight + bias`, weight is `in × out`, bias `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Dense {
    /// Uniform in ±1/√fan_in for weights and biases.
    fn init(fan_in: usize, fan_out: usize, rng: &mut seed::Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..=bound));
        let bias = Array2::from_shape_simple_fn((1, fan_out), || rng.gen_range(-bound..=bound));
        Self { weight, bias }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub layers: Vec<Dense>,
    pub frozen: bool,
}

fn init_component(widths: &[usize], seed: u64, name: &str) -> Component {
    let mut rng = seed::rng(seed, &format!("init:{name}"), &[]);
    let layers = widths
        .windows(2)
        .map(|w| Dense::init(w[0], w[1], &mut rng))
        .collect();
    Component {
        layers,
        frozen: false,
    }
}

/// Weights of every component plus the configuration they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub seed: u64,
    pub components: BTreeMap<String, Component>,
}

/// Deterministic initialization. Each component draws from its own stream,
/// so its initial weights depend only on `(seed, name, widths)`.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    cfg.validate()?;
    let components = cfg
        .layout()
        .into_iter()
        .map(|(name, widths)| {
            let c = init_component(&widths, seed, &name);
            (name, c)
        })
        .collect();
    Ok(ModelParameters {
        config: cfg.clone(),
        seed,
        components,
    })
}

/// Names accepted by [`ModelParameters::set_frozen`] besides exact component names.
pub const COMPONENT_GROUPS: [&str; 6] = [
    "encoders",
    "decoders",
    "projection",
    "predictor",
    "mask_heads",
    "classifier",
];

impl ModelParameters {
    pub fn component(&self, name: &str) -> Result<&Component> {
        self.components
            .get(name)
            .ok_or_else(|| Error::Config(format!("model has no component `{name}`")))
    }

    /// Component names selected by a group name or an exact component name.
    pub fn resolve(&self, id: &str) -> Result<Vec<String>> {
        let matches = |name: &str| -> bool {
            match id {
                "encoders" => name.starts_with("encoder.") || name.starts_with("adapter."),
                "decoders" => name.starts_with("decoder."),
                "projection" => name == "projection" || name.starts_with("projection."),
                "mask_heads" => name.starts_with("mask_head."),
                _ => name == id,
            }
        };
        let names: Vec<String> = self
            .components
            .keys()
            .filter(|n| matches(n))
            .cloned()
            .collect();
        if names.is_empty() && !COMPONENT_GROUPS.contains(&id) {
            return Err(Error::Config(format!("unknown component id `{id}`")));
        }
        Ok(names)
    }

    pub fn set_frozen(&mut self, ids: &[&str], frozen: bool) -> Result<()> {
        let mut names = Vec::new();
        for id in ids {
            names.extend(self.resolve(id)?);
        }
        for name in names {
            if let Some(c) = self.components.get_mut(&name) {
                c.frozen = frozen;
            }
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.components.get(name).is_some_and(|c| c.frozen)
    }

    /// SHA-256 over the shapes and little-endian bytes of the selected components.
    pub fn checksum(&self, id: &str) -> Result<String> {
        let mut h = Sha256::new();
        for name in self.resolve(id)? {
            h.update(name.as_bytes());
            for layer in &self.components[&name].layers {
                for t in [&layer.weight, &layer.bias] {
                    h.update((t.nrows() as u64).to_le_bytes());
                    h.update((t.ncols() as u64).to_le_bytes());
                    for v in t.iter() {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Replaces the classifier with a freshly initialized one for `aggregation`.
    pub fn with_classifier(&self, aggregation: Aggregation, seed: u64) -> Result<Self> {
        let mut out = self.clone();
        out.config.architecture.aggregation = aggregation;
        let widths = out.config.layout().remove("classifier").expect("classifier in layout");
        let frozen = self.is_frozen("classifier");
        let mut classifier = init_component(&widths, seed, "classifier");
        classifier.frozen = frozen;
        out.components.insert("classifier".to_owned(), classifier);
        Ok(out)
    }

    pub fn n_parameters(&self) -> usize {
        self.components
            .values()
            .flat_map(|c| &c.layers)
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}
