//! The JSON run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corruption::CorruptionConfig;
use crate::data::{generate_synthetic, load_dataset, prepare, split, MultiOmicsDataset, Prepared, SplitFractions, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::PretextLossWeights;
use crate::model::Architecture;
use crate::training::{model_config_for, Experiment, ProtocolConfig, TrainConfig};

/// Where samples come from and how they are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    /// Generated dataset, used when no manifest is given.
    pub synth: Option<SynthConfig>,
    pub split: SplitFractions,
    pub split_seed: u64,
    pub stratified: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            synth: Some(SynthConfig::default()),
            split: SplitFractions::default(),
            split_seed: 0,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: Architecture,
    pub corruption: CorruptionConfig,
    pub loss: PretextLossWeights,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and makes the manifest path absolute.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&bytes)?;
        if let Some(m) = &cfg.data.manifest {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                let joined = base.join(m);
                cfg.data.manifest = Some(fs::canonicalize(&joined).unwrap_or(joined));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.manifest, &self.data.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("data.manifest and data.synth are mutually exclusive".into()));
            }
            (None, None) => return Err(Error::Config("data needs a manifest or synth section".into())),
            (None, Some(s)) => s.validate()?,
            (Some(_), None) => {}
        }
        self.data.split.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.protocol.validate()?;
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Short content hash of the resolved configuration.
    pub fn run_id(&self) -> Result<String> {
        let canonical = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&canonical))[..12].to_owned())
    }

    pub fn load_data(&self) -> Result<MultiOmicsDataset> {
        match (&self.data.manifest, &self.data.synth) {
            (Some(m), None) => load_dataset(m),
            (None, Some(s)) => generate_synthetic(s),
            _ => Err(Error::Config("data needs exactly one of manifest or synth".into())),
        }
    }

    /// Loads, splits, imputes and standardizes the data.
    pub fn prepare(&self) -> Result<Prepared> {
        let ds = self.load_data()?;
        let s = split(&ds, self.data.split, self.data.split_seed, self.data.stratified)?;
        prepare(&ds, s)
    }

    pub fn experiment(&self, ds: &MultiOmicsDataset) -> Result<Experiment> {
        self.corruption.validate(ds.n_views())?;
        let model = model_config_for(ds, ds.n_classes(), self.model.clone());
        model.validate()?;
        Ok(Experiment {
            model,
            corruption: self.corruption.clone(),
            loss: self.loss.clone(),
            train: self.train.clone(),
            protocol: self.protocol.clone(),
        })
    }
}
