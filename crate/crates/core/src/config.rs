//! The run configuration: one TOML document with a section per module.
//!
//! Every section is optional and falls back to the defaults of the module it
//! configures. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::DestinationConfig;
use crate::encoder::EncoderConfig;
use crate::pretrain::TrainConfig;
use crate::synthgen::SynthConfig;
use crate::trajdata::PreprocessOptions;
use crate::{Error, Result};

/// Where the input data lives. Relative paths resolve against the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw `traj_id,timestamp,lon,lat[,loc_index]` CSV; defaults to the
    /// synthetic output of the run.
    pub raw: Option<PathBuf>,
    /// Processed dataset directory; defaults to `dataset/` in the run directory.
    pub processed: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub search: bool,
    pub destination: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            search: true,
            destination: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation, sampling, and baselines. The synthetic
    /// generator has its own seed in `[synth]`.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub preprocess: PreprocessOptions,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub destination: DestinationConfig,
    pub tasks: TaskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: None,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            preprocess: PreprocessOptions::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            destination: DestinationConfig::default(),
            tasks: TaskConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        self.destination.validate()?;
        let p = &self.preprocess;
        if p.resample_interval_secs <= 0 || p.min_length < 2 || !(p.cell_size_meters > 0.0) {
            return Err(Error::Config(
                "preprocess needs a positive interval and cell size and min_length ≥ 2".into(),
            ));
        }
        if p.split_ratios.contains(&0) {
            return Err(Error::Config("split_ratios must all be positive".into()));
        }
        if let Some(g) = &p.grid {
            g.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Augmentation;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.output_dir = Some("runs/x".into());
        cfg.data.processed = Some("data/p".into());
        cfg.train.augmentation = Augmentation::Subsume;
        cfg.encoder.anchors = vec![4, 2, 1];
        cfg.preprocess.grid = Some(crate::trajdata::GridSpec::new(0.0, 0.0, 0.1, 0.1, 500.0).unwrap());
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_toml_str("seed = 1\n[train]\nbatch = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("batch") && msg.contains("line 3"), "{msg}");
        assert!(RunConfig::from_toml_str("[encoder]\nheads = 7\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\naugmentation = \"shuffle\"\n").is_err());
    }
}
