//! Trajectory data model, ingestion and preprocessing.

mod dataset;
mod grid;
mod io;
mod preprocess;

pub use dataset::{Dataset, Metadata, PreprocessOptions, PreprocessStats, Vocabulary, DATASET_FILE, METADATA_FILE};
pub use grid::{GridSpec, METERS_PER_DEGREE};
pub use io::{parse_trajectories, read_trajectories, write_trajectories, ParseReport};
pub use preprocess::{
    chronological_split, filter_min_length, resample, DatasetSplit, Normalizer, RecordFeatures,
};

use crate::{Error, Result};

/// One observed presence: location index, epoch seconds, longitude, latitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitRecord {
    pub loc: usize,
    pub timestamp: i64,
    pub lon: f64,
    pub lat: f64,
}

impl VisitRecord {
    pub fn new(loc: usize, timestamp: i64, lon: f64, lat: f64) -> Self {
        VisitRecord {
            loc,
            timestamp,
            lon,
            lat,
        }
    }
}

/// Time-ordered records of one moving object. Always holds at least two records.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: String,
    records: Vec<VisitRecord>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, records: Vec<VisitRecord>) -> Result<Self> {
        let id = id.into();
        if records.len() < 2 {
            return Err(Error::Data(format!(
                "trajectory `{id}` has {} record(s), need at least 2",
                records.len()
            )));
        }
        if records.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::Data(format!("trajectory `{id}` is not time-ordered")));
        }
        for r in &records {
            if !(-180.0..=180.0).contains(&r.lon) || !(-90.0..=90.0).contains(&r.lat) {
                return Err(Error::Data(format!(
                    "trajectory `{id}` has out-of-range coordinate ({}, {})",
                    r.lon, r.lat
                )));
            }
        }
        Ok(Trajectory { id, records })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn records(&self) -> &[VisitRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn start_time(&self) -> i64 {
        self.records[0].timestamp
    }

    pub fn last(&self) -> &VisitRecord {
        self.records.last().expect("non-empty")
    }

    /// Records at the given 0-based positions, in the given order.
    pub fn subsequence(&self, positions: &[usize]) -> Result<Trajectory> {
        let records = positions.iter().map(|&p| self.records[p]).collect();
        Trajectory::new(self.id.clone(), records)
    }

    /// Everything but the final record (the destination-prediction input).
    pub fn without_last(&self) -> Result<Trajectory> {
        Trajectory::new(self.id.clone(), self.records[..self.records.len() - 1].to_vec())
    }

    pub(crate) fn records_mut(&mut self) -> &mut [VisitRecord] {
        &mut self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_enforces_invariants() {
        let r = |t| VisitRecord::new(0, t, 104.0, 30.6);
        assert!(Trajectory::new("a", vec![r(0)]).is_err());
        assert!(Trajectory::new("a", vec![r(5), r(3)]).is_err());
        assert!(Trajectory::new("a", vec![r(3), r(3)]).is_ok());
        assert!(Trajectory::new("a", vec![r(0), VisitRecord::new(0, 1, 181.0, 0.0)]).is_err());
        let t = Trajectory::new("a", vec![r(0), r(1), r(2)]).unwrap();
        assert_eq!(t.without_last().unwrap().len(), 2);
        assert_eq!(t.subsequence(&[0, 2]).unwrap().records()[1].timestamp, 2);
    }
}
