use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::{Error, Result};

/// Greedy decimation: keep the first record, then every record at least
/// `interval_secs` after the last kept one. Never interpolates.
///
/// Returns `None` when fewer than two records survive.
pub fn resample(traj: &Trajectory, interval_secs: i64) -> Option<Trajectory> {
    let interval = interval_secs.max(1);
    let mut kept = Vec::with_capacity(traj.len());
    let mut last: Option<i64> = None;
    for r in traj.records() {
        if last.is_none_or(|t| r.timestamp >= t + interval) {
            kept.push(*r);
            last = Some(r.timestamp);
        }
    }
    Trajectory::new(traj.id(), kept).ok()
}

/// Trajectories with at least `min_length` records.
pub fn filter_min_length(trajs: Vec<Trajectory>, min_length: usize) -> Vec<Trajectory> {
    trajs.into_iter().filter(|t| t.len() >= min_length).collect()
}

/// Train / validation / test trajectory ids, in chronological order of start time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Sorts by first-record timestamp (ties by id) and cuts at
/// ⌊r₁/Σr · n⌋ and ⌊(r₁+r₂)/Σr · n⌋.
pub fn chronological_split(trajs: &[Trajectory], ratios: [u32; 3]) -> Result<DatasetSplit> {
    if trajs.len() < 3 {
        return Err(Error::Data(format!("need at least 3 trajectories to split, got {}", trajs.len())));
    }
    if ratios.contains(&0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let mut order: Vec<&Trajectory> = trajs.iter().collect();
    order.sort_by(|a, b| a.start_time().cmp(&b.start_time()).then_with(|| a.id().cmp(b.id())));
    let n = order.len() as u64;
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let cut1 = (n * ratios[0] as u64 / total) as usize;
    let cut2 = (n * (ratios[0] + ratios[1]) as u64 / total) as usize;
    let ids = |s: &[&Trajectory]| s.iter().map(|t| t.id().to_owned()).collect();
    Ok(DatasetSplit {
        train: ids(&order[..cut1]),
        validation: ids(&order[cut1..cut2]),
        test: ids(&order[cut2..]),
    })
}

/// Maps timestamps to minutes since the training split's earliest record.
/// Coordinates pass through in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub epoch: i64,
    pub seconds_per_unit: f64,
}

/// Encoder input derived from one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordFeatures {
    pub loc: usize,
    pub time: f64,
    pub lon: f64,
    pub lat: f64,
}

impl Normalizer {
    pub fn fit<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let epoch = trajs
            .into_iter()
            .map(Trajectory::start_time)
            .min()
            .ok_or_else(|| Error::Data("cannot fit normalization on an empty set".into()))?;
        Ok(Normalizer {
            epoch,
            seconds_per_unit: 60.0,
        })
    }

    pub fn time(&self, timestamp: i64) -> f64 {
        (timestamp - self.epoch) as f64 / self.seconds_per_unit
    }

    pub fn invert_time(&self, t: f64) -> f64 {
        self.epoch as f64 + t * self.seconds_per_unit
    }

    pub fn features(&self, traj: &Trajectory) -> Vec<RecordFeatures> {
        traj.records()
            .iter()
            .map(|r| RecordFeatures {
                loc: r.loc,
                time: self.time(r.timestamp),
                lon: r.lon,
                lat: r.lat,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::VisitRecord;
    use super::*;
    use proptest::prelude::*;

    fn traj_at(id: &str, times: &[i64]) -> Trajectory {
        Trajectory::new(id, times.iter().map(|&t| VisitRecord::new(0, t, 104.0, 30.0)).collect()).unwrap()
    }

    fn times(t: &Trajectory) -> Vec<i64> {
        t.records().iter().map(|r| r.timestamp).collect()
    }

    #[test]
    fn greedy_resampling_traced_by_hand() {
        let t = traj_at("a", &[0, 10, 70, 130]);
        assert_eq!(times(&resample(&t, 60).unwrap()), vec![0, 70, 130]);
    }

    #[test]
    fn sparse_trajectory_is_unchanged() {
        let t = traj_at("a", &[0, 60, 200, 1000]);
        assert_eq!(resample(&t, 60).unwrap(), t);
    }

    #[test]
    fn ten_minutes_at_ten_seconds_keeps_eleven() {
        let ts: Vec<i64> = (0..=60).map(|i| i * 10).collect();
        let t = traj_at("a", &ts);
        // greedy scan keeps 0, 60, ..., 600
        let expect: Vec<i64> = (0..=600).step_by(60).collect();
        let r = resample(&t, 60).unwrap();
        assert_eq!(times(&r), expect);
        assert_eq!(r.len(), 11);
    }

    #[test]
    fn resample_collapsing_to_one_record_yields_none() {
        assert!(resample(&traj_at("a", &[0, 5, 10]), 60).is_none());
    }

    #[test]
    fn min_length_boundary_is_inclusive() {
        let mk = |n: usize| traj_at(&n.to_string(), &(0..n as i64).collect::<Vec<_>>());
        let kept = filter_min_length(vec![mk(19), mk(20), mk(21)], 20);
        let lens: Vec<usize> = kept.iter().map(Trajectory::len).collect();
        assert_eq!(lens, vec![20, 21]);
        assert_eq!(filter_min_length(vec![mk(25), mk(30)], 20).len(), 2);
    }

    #[test]
    fn synthetic_lengths_recount() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(5);
        let trajs: Vec<Trajectory> = (0..1000)
            .map(|i| {
                let n = rng.random_range(10..=40);
                traj_at(&i.to_string(), &(0..n).collect::<Vec<_>>())
            })
            .collect();
        let expected = trajs.iter().filter(|t| t.len() >= 20).count();
        assert_eq!(filter_min_length(trajs, 20).len(), expected);
    }

    fn split_sizes(n: usize) -> (usize, usize, usize) {
        let trajs: Vec<Trajectory> = (0..n).map(|i| traj_at(&format!("{i:06}"), &[i as i64, i as i64 + 1])).collect();
        let s = chronological_split(&trajs, [8, 1, 1]).unwrap();
        (s.train.len(), s.validation.len(), s.test.len())
    }

    #[test]
    fn split_sizes_follow_floor_cuts() {
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(7), (5, 1, 1));
        // floor(0.8·44551) = 35640, floor(0.9·44551) = 40095
        assert_eq!(split_sizes(44551), (35640, 4455, 4456));
    }

    #[test]
    fn split_needs_three_trajectories() {
        let trajs = vec![traj_at("a", &[0, 1]), traj_at("b", &[2, 3])];
        assert!(chronological_split(&trajs, [8, 1, 1]).is_err());
    }

    #[test]
    fn split_is_disjoint_covering_and_ordered_for_all_small_n() {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::seeded(9);
        for n in 3..=200usize {
            let mut starts: Vec<i64> = (0..n as i64).map(|i| i * 7 % 101).collect();
            starts.shuffle(&mut rng);
            let trajs: Vec<Trajectory> =
                starts.iter().enumerate().map(|(i, &s)| traj_at(&format!("{i}"), &[s, s + 1])).collect();
            let s = chronological_split(&trajs, [8, 1, 1]).unwrap();
            let start_of = |id: &String| trajs.iter().find(|t| t.id() == id).unwrap().start_time();
            let mut all: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            assert_eq!(all.len(), n);
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n, "parts overlap for n={n}");
            let max_train = s.train.iter().map(start_of).max();
            let min_val = s.validation.iter().map(start_of).min();
            let max_val = s.validation.iter().map(start_of).max();
            let min_test = s.test.iter().map(start_of).min();
            if let (Some(a), Some(b)) = (max_train, min_val) {
                assert!(a <= b);
            }
            if let (Some(a), Some(b)) = (max_val.or(max_train), min_test) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn normalization_examples() {
        let t0 = 1_541_001_600;
        let a = traj_at("a", &[t0, t0 + 3600]);
        let b = traj_at("b", &[t0 + 100, t0 + 200]);
        let n = Normalizer::fit([&a, &b]).unwrap();
        assert_eq!(n.time(t0), 0.0);
        assert_eq!(n.time(t0 + 3600), 60.0);
        let f = n.features(&a);
        assert_eq!(f[1].time, 60.0);
        assert_eq!(f[1].lon, 104.0);
    }

    proptest! {
        #[test]
        fn normalization_inverts(ts in prop::collection::vec(1_500_000_000i64..1_600_000_000, 2..20)) {
            let mut ts = ts;
            ts.sort();
            let t = traj_at("x", &ts);
            let n = Normalizer::fit([&t]).unwrap();
            for r in t.records() {
                prop_assert!((n.invert_time(n.time(r.timestamp)) - r.timestamp as f64).abs() <= 1e-9);
            }
        }

        #[test]
        fn resample_is_idempotent(gaps in prop::collection::vec(0i64..150, 1..60), interval in 1i64..200) {
            let mut t = 0;
            let ts: Vec<i64> = std::iter::once(0).chain(gaps.iter().map(|g| { t += g; t })).collect();
            let traj = traj_at("x", &ts);
            if let Some(once) = resample(&traj, interval) {
                prop_assert_eq!(resample(&once, interval), Some(once.clone()));
            }
        }
    }
}
