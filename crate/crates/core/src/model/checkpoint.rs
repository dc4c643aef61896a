//! Self-describing JSON checkpoint.
//!
//! ```json
//! { "format": "omics-ssl-checkpoint", "version": 1, "seed": 7,
//!   "config": { ...ModelConfig... }, "run_config": { ... } | null,
//!   "components": { "encoder.0": { "frozen": true,
//!       "tensors": { "layer0.weight": { "shape": [50, 256], "data": [...] }, ... } } } }
//! ```
//!
//! Tensor data is row-major. Floats are written in shortest round-trip form,
//! so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Component, Dense, ModelConfig, ModelParameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "omics-ssl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredComponent {
    pub frozen: bool,
    pub tensors: BTreeMap<String, StoredTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    /// Resolved run configuration that produced the weights, when known.
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
    pub components: BTreeMap<String, StoredComponent>,
}

fn store(t: &Array2<f64>) -> StoredTensor {
    StoredTensor {
        shape: [t.nrows(), t.ncols()],
        data: t.iter().copied().collect(),
    }
}

impl Checkpoint {
    pub fn from_params(params: &ModelParameters, run_config: Option<serde_json::Value>) -> Self {
        let components = params
            .components
            .iter()
            .map(|(name, c)| {
                let mut tensors = BTreeMap::new();
                for (i, l) in c.layers.iter().enumerate() {
                    tensors.insert(format!("layer{i}.weight"), store(&l.weight));
                    tensors.insert(format!("layer{i}.bias"), store(&l.bias));
                }
                (
                    name.clone(),
                    StoredComponent {
                        frozen: c.frozen,
                        tensors,
                    },
                )
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            seed: params.seed,
            config: params.config.clone(),
            run_config,
            components,
        }
    }

    /// Rebuilds parameters, checking every component and shape against the config.
    pub fn to_params(&self) -> Result<ModelParameters> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let layout = self.config.layout();
        if let Some(extra) = self.components.keys().find(|k| !layout.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected component `{extra}`")));
        }
        let mut components = BTreeMap::new();
        for (name, widths) in layout {
            let stored = self
                .components
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing component `{name}`")))?;
            let n_layers = widths.len() - 1;
            if stored.tensors.len() != 2 * n_layers {
                return Err(Error::Checkpoint(format!(
                    "component `{name}` has {} tensors, expected {}",
                    stored.tensors.len(),
                    2 * n_layers
                )));
            }
            let mut layers = Vec::with_capacity(n_layers);
            for (i, w) in widths.windows(2).enumerate() {
                let weight = load(stored, &name, &format!("layer{i}.weight"), [w[0], w[1]])?;
                let bias = load(stored, &name, &format!("layer{i}.bias"), [1, w[1]])?;
                layers.push(Dense { weight, bias });
            }
            components.insert(
                name,
                Component {
                    layers,
                    frozen: stored.frozen,
                },
            );
        }
        Ok(ModelParameters {
            config: self.config.clone(),
            seed: self.seed,
            components,
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

fn load(stored: &StoredComponent, component: &str, key: &str, shape: [usize; 2]) -> Result<Array2<f64>> {
    let t = stored
        .tensors
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("component `{component}` lacks `{key}`")))?;
    if t.shape != shape {
        return Err(Error::Checkpoint(format!(
            "`{component}.{key}` has shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    if t.data.len() != shape[0] * shape[1] {
        return Err(Error::Checkpoint(format!(
            "`{component}.{key}` holds {} values for shape {shape:?}",
            t.data.len()
        )));
    }
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!("`{component}.{key}` has non-finite values")));
    }
    Ok(Array2::from_shape_vec((shape[0], shape[1]), t.data.clone()).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Architecture};

    fn params() -> ModelParameters {
        let mut cfg = ModelConfig::new(vec![8, 6, 4], 3, Architecture {
            encoder_hidden: vec![5],
            latent_dim: 4,
            ..Architecture::default()
        });
        cfg.mask_subsets = vec![Some(3), None, Some(2)];
        let mut p = init_model(&cfg, 11).unwrap();
        p.set_frozen(&["encoders"], true).unwrap();
        p
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = params();
        let ck = Checkpoint::from_params(&p, Some(serde_json::json!({"note": 1})));
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(text.as_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_params().unwrap(), p);
    }

    #[test]
    fn rejects_inconsistent_containers() {
        let ck = Checkpoint::from_params(&params(), None);

        let mut bad = ck.clone();
        bad.version = 2;
        assert!(bad.to_params().is_err());

        let mut bad = ck.clone();
        bad.components.remove("classifier");
        assert!(bad.to_params().unwrap_err().to_string().contains("missing component"));

        let mut bad = ck.clone();
        bad.components.get_mut("encoder.0").unwrap().tensors.get_mut("layer0.weight").unwrap().shape = [5, 8];
        assert!(bad.to_params().is_err());

        let mut bad = ck;
        bad.components
            .get_mut("encoder.0")
            .unwrap()
            .tensors
            .get_mut("layer0.bias")
            .unwrap()
            .data
            .pop();
        assert!(bad.to_params().is_err());

        assert!(Checkpoint::from_json(b"{\"format\":1}").is_err());
    }
}
