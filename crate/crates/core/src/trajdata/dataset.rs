use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    chronological_split, filter_min_length, parse_trajectories, resample, write_trajectories, DatasetSplit, GridSpec,
    Normalizer, RecordFeatures, Trajectory,
};
use crate::{Error, Result};

pub const DATASET_FILE: &str = "dataset.csv";
pub const METADATA_FILE: &str = "metadata.toml";

/// How records obtain their location index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Vocabulary {
    Grid { grid: GridSpec },
    /// Indices supplied by the input file (e.g. tower ids).
    PassThrough { n_locations: usize },
}

impl Vocabulary {
    pub fn n_locations(&self) -> usize {
        match self {
            Vocabulary::Grid { grid } => grid.n_cells(),
            Vocabulary::PassThrough { n_locations } => *n_locations,
        }
    }
}

/// Preprocessing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessOptions {
    pub resample_interval_secs: i64,
    pub min_length: usize,
    pub split_ratios: [u32; 3],
    /// Cell size used when the grid is fitted to the training split.
    pub cell_size_meters: f64,
    /// Padding around the fitted training bounding box, in degrees.
    pub grid_margin_degrees: f64,
    /// Fixed grid; overrides fitting and any `loc_index` column.
    pub grid: Option<GridSpec>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            resample_interval_secs: 60,
            min_length: 20,
            split_ratios: [8, 1, 1],
            cell_size_meters: 250.0,
            grid_margin_degrees: 0.001,
            grid: None,
        }
    }
}

/// Sidecar describing how a processed dataset was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub vocabulary: Vocabulary,
    pub normalization: Normalizer,
    pub resample_interval_secs: i64,
    pub min_length: usize,
    pub split: DatasetSplit,
}

/// Trajectories with location indices assigned, plus their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    metadata: Metadata,
    by_id: HashMap<String, usize>,
}

/// Counts from a preprocessing run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PreprocessStats {
    pub input: usize,
    pub collapsed_by_resampling: usize,
    pub too_short: usize,
    pub kept: usize,
}

impl Dataset {
    /// Resample, filter, split chronologically, assign locations and fit the
    /// time normalization on the training split.
    pub fn build(raw: Vec<Trajectory>, has_locations: bool, opts: &PreprocessOptions) -> Result<(Dataset, PreprocessStats)> {
        if opts.resample_interval_secs <= 0 {
            return Err(Error::Config("resample interval must be positive".into()));
        }
        if opts.min_length < 2 {
            return Err(Error::Config("min_length must be at least 2".into()));
        }
        let mut stats = PreprocessStats {
            input: raw.len(),
            ..Default::default()
        };
        let resampled: Vec<Trajectory> = raw.iter().filter_map(|t| resample(t, opts.resample_interval_secs)).collect();
        stats.collapsed_by_resampling = raw.len() - resampled.len();
        let before = resampled.len();
        let mut trajectories = filter_min_length(resampled, opts.min_length);
        stats.too_short = before - trajectories.len();
        stats.kept = trajectories.len();

        let split = chronological_split(&trajectories, opts.split_ratios)?;
        let index: HashMap<&str, usize> = trajectories.iter().enumerate().map(|(i, t)| (t.id(), i)).collect();
        let train: Vec<usize> = split.train.iter().map(|id| index[id.as_str()]).collect();
        drop(index);

        let vocabulary = match (opts.grid, has_locations) {
            (Some(grid), _) => {
                grid.validate()?;
                Vocabulary::Grid { grid }
            }
            (None, true) => {
                let max = trajectories.iter().flat_map(|t| t.records()).map(|r| r.loc).max().unwrap_or(0);
                Vocabulary::PassThrough { n_locations: max + 1 }
            }
            (None, false) => {
                let points = train
                    .iter()
                    .flat_map(|&i| trajectories[i].records())
                    .map(|r| (r.lon, r.lat));
                let grid = GridSpec::covering(points, opts.cell_size_meters, opts.grid_margin_degrees)?;
                Vocabulary::Grid { grid }
            }
        };
        if let Vocabulary::Grid { grid } = &vocabulary {
            for t in &mut trajectories {
                for r in t.records_mut() {
                    r.loc = grid.assign(r.lon, r.lat);
                }
            }
        }
        let normalization = Normalizer::fit(train.iter().map(|&i| &trajectories[i]))?;
        let metadata = Metadata {
            vocabulary,
            normalization,
            resample_interval_secs: opts.resample_interval_secs,
            min_length: opts.min_length,
            split,
        };
        Ok((Dataset::from_parts(trajectories, metadata)?, stats))
    }

    /// Assembles a dataset, checking that the split and locations agree with the trajectories.
    pub fn from_parts(trajectories: Vec<Trajectory>, metadata: Metadata) -> Result<Dataset> {
        let mut by_id = HashMap::with_capacity(trajectories.len());
        for (i, t) in trajectories.iter().enumerate() {
            if by_id.insert(t.id().to_owned(), i).is_some() {
                return Err(Error::Data(format!("duplicate trajectory id `{}`", t.id())));
            }
        }
        let n_loc = metadata.vocabulary.n_locations();
        if let Some(r) = trajectories.iter().flat_map(|t| t.records()).find(|r| r.loc >= n_loc) {
            return Err(Error::Data(format!("location index {} outside vocabulary of {n_loc}", r.loc)));
        }
        let s = &metadata.split;
        let listed = s.train.len() + s.validation.len() + s.test.len();
        let all_known = s.train.iter().chain(&s.validation).chain(&s.test).all(|id| by_id.contains_key(id));
        if listed != trajectories.len() || !all_known {
            return Err(Error::Data("split lists do not match the dataset's trajectories".into()));
        }
        Ok(Dataset {
            trajectories,
            metadata,
            by_id,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn n_locations(&self) -> usize {
        self.metadata.vocabulary.n_locations()
    }

    pub fn get(&self, id: &str) -> Option<&Trajectory> {
        self.by_id.get(id).map(|&i| &self.trajectories[i])
    }

    fn part(&self, ids: &[String]) -> Vec<&Trajectory> {
        ids.iter().map(|id| &self.trajectories[self.by_id[id]]).collect()
    }

    pub fn train(&self) -> Vec<&Trajectory> {
        self.part(&self.metadata.split.train)
    }

    pub fn validation(&self) -> Vec<&Trajectory> {
        self.part(&self.metadata.split.validation)
    }

    pub fn test(&self) -> Vec<&Trajectory> {
        self.part(&self.metadata.split.test)
    }

    pub fn features(&self, traj: &Trajectory) -> Vec<RecordFeatures> {
        self.metadata.normalization.features(traj)
    }

    /// Writes `dataset.csv` and `metadata.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(DATASET_FILE);
        let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        write_trajectories(std::io::BufWriter::new(file), &self.trajectories, true).map_err(|e| Error::io(&csv_path, e))?;
        let meta_path = dir.join(METADATA_FILE);
        let text = toml::to_string(&self.metadata).map_err(|e| Error::Format {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta_path = dir.join(METADATA_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let metadata: Metadata = toml::from_str(&text).map_err(|e| Error::Format {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
        let report = parse_trajectories(&dir.join(DATASET_FILE))?;
        if !report.has_locations {
            return Err(Error::Data(format!("{} lacks a loc_index column", dir.join(DATASET_FILE).display())));
        }
        Dataset::from_parts(report.trajectories, metadata)
    }
}
