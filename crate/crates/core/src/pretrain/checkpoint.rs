use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::encoder::{Encoder, EncoderConfig};
use crate::numcore::{container, AdamState, DiffArray, ParamSet};
use crate::trajdata::Normalizer;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Encoder parameters, optimizer state and everything needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub adam: AdamState,
    pub train: TrainConfig,
    pub normalization: Normalizer,
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
}

/// The structured-text sidecar stored next to the binary parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
    pub n_locations: usize,
    pub adam_steps: u64,
    pub normalization: Normalizer,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

fn format_err(path: &Path, reason: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

impl Checkpoint {
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("toml")
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            val_loss: self.val_loss,
            seed: self.seed,
            n_locations: self.encoder.n_locations(),
            adam_steps: self.adam.step_count(),
            normalization: self.normalization,
            encoder: self.encoder.config().clone(),
            train: self.train.clone(),
        }
    }

    /// Writes the parameter container at `path` (parameters, then
    /// `adam.m.*` / `adam.v.*` moments) and the sidecar beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let params = self.encoder.params();
        let mut entries: Vec<(String, DiffArray)> = params.iter().map(|(n, a)| (n.to_owned(), a.clone())).collect();
        for (tag, moments) in [("m", self.adam.first_moment()), ("v", self.adam.second_moment())] {
            for ((name, a), m) in params.iter().zip(moments) {
                entries.push((format!("adam.{tag}.{name}"), DiffArray::new(a.shape().to_vec(), m.clone())?));
            }
        }
        container::write_entries(path, entries.iter().map(|(n, a)| (n.as_str(), a)))?;
        let meta_path = Self::sidecar_path(path);
        let text = toml::to_string(&self.meta()).map_err(|e| format_err(&meta_path, e))?;
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let meta_path = Self::sidecar_path(path);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| format_err(&meta_path, e))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(format_err(&meta_path, format!("unsupported format version {}", meta.format_version)));
        }
        let mut params = ParamSet::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (name, array) in container::read_entries(path)? {
            if let Some(rest) = name.strip_prefix("adam.m.") {
                first.push((rest.to_owned(), array.values().to_vec()));
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                second.push((rest.to_owned(), array.values().to_vec()));
            } else {
                params.insert(name, array);
            }
        }
        let names: Vec<String> = params.names().map(str::to_owned).collect();
        let ordered = |m: Vec<(String, Vec<f64>)>| -> Result<Vec<Vec<f64>>> {
            if m.iter().map(|(n, _)| n).ne(names.iter()) {
                return Err(format_err(path, "optimizer moments do not match parameters"));
            }
            Ok(m.into_iter().map(|(_, v)| v).collect())
        };
        let adam = AdamState::from_parts(meta.train.learning_rate, meta.adam_steps, ordered(first)?, ordered(second)?);
        let encoder = Encoder::from_params(meta.encoder, meta.n_locations, params)?;
        Ok(Checkpoint {
            encoder,
            adam,
            train: meta.train,
            normalization: meta.normalization,
            epoch: meta.epoch,
            val_loss: meta.val_loss,
            seed: meta.seed,
        })
    }
}
