//! Query/positive sample construction and in-batch negative assignment.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::trajdata::Trajectory;
use crate::{exec, Error, Result};

/// Stream label for per-epoch augmentation generators.
const AUGMENT_STREAM: u64 = 0x6175_676d;
const NEGATIVE_STREAM: u64 = 0x6e65_6773;
const MAX_RETRIES: usize = 64;

/// Which pair sampler builds the contrastive views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    #[default]
    TwoHop,
    Random,
    Adjacent,
    Overlap,
    Subsume,
}

impl Augmentation {
    pub const ALL: [Augmentation; 5] = [
        Augmentation::TwoHop,
        Augmentation::Random,
        Augmentation::Adjacent,
        Augmentation::Overlap,
        Augmentation::Subsume,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::TwoHop => "two_hop",
            Augmentation::Random => "random",
            Augmentation::Adjacent => "adjacent",
            Augmentation::Overlap => "overlap",
            Augmentation::Subsume => "subsume",
        }
    }

    /// Shortest trajectory the sampler can split.
    pub fn min_length(self) -> usize {
        match self {
            Augmentation::TwoHop | Augmentation::Adjacent | Augmentation::Subsume => 4,
            Augmentation::Overlap => 3,
            Augmentation::Random => 2,
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation `{s}`")))
    }
}

/// Two views of one trajectory. Positions are 0-based indices into the source.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub source_id: String,
    pub query: Trajectory,
    pub positive: Trajectory,
    pub query_positions: Vec<usize>,
    pub positive_positions: Vec<usize>,
}

impl SamplePair {
    fn from_positions(traj: &Trajectory, q: Vec<usize>, p: Vec<usize>) -> Option<SamplePair> {
        Some(SamplePair {
            source_id: traj.id().to_owned(),
            query: traj.subsequence(&q).ok()?,
            positive: traj.subsequence(&p).ok()?,
            query_positions: q,
            positive_positions: p,
        })
    }
}

/// Odd (1st, 3rd, …) and even (2nd, 4th, …) record positions, 0-based.
/// `None` when either half would have fewer than two records.
pub fn two_hop_positions(n: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return None;
    }
    Some(((0..n).step_by(2).collect(), (1..n).step_by(2).collect()))
}

pub fn two_hop_split(traj: &Trajectory) -> Option<SamplePair> {
    let (q, p) = two_hop_positions(traj.len())?;
    SamplePair::from_positions(traj, q, p)
}

fn bernoulli_subset<R: Rng>(n: usize, keep_prob: f64, rng: &mut R) -> Option<Vec<usize>> {
    for _ in 0..MAX_RETRIES {
        let keep: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < keep_prob).collect();
        if keep.len() >= 2 {
            return Some(keep);
        }
    }
    None
}

/// Two independent Bernoulli(`keep_prob`) record subsets; a side with fewer
/// than two records is redrawn, up to a fixed retry budget.
pub fn sample_random<R: Rng>(traj: &Trajectory, keep_prob: f64, rng: &mut R) -> Option<SamplePair> {
    let n = traj.len();
    let q = bernoulli_subset(n, keep_prob, rng)?;
    let p = bernoulli_subset(n, keep_prob, rng)?;
    SamplePair::from_positions(traj, q, p)
}

/// Prefix and suffix split at a uniform cut, each side at least two records.
pub fn sample_adjacent<R: Rng>(traj: &Trajectory, rng: &mut R) -> Option<SamplePair> {
    let n = traj.len();
    if n < 4 {
        return None;
    }
    let cut = rng.random_range(2..=n - 2);
    SamplePair::from_positions(traj, (0..cut).collect(), (cut..n).collect())
}

/// Windows `[a1, b1]`, `[a2, b2]` with `a1 < a2 ≤ b1 < b2`, uniform over all
/// such quadruples.
pub fn sample_overlap<R: Rng>(traj: &Trajectory, rng: &mut R) -> Option<SamplePair> {
    let n = traj.len();
    if n < 3 {
        return None;
    }
    // Valid quadruples biject with 4-subsets x1<x2<x3<x4 of 0..=n via
    // (a1, a2, b1, b2) = (x1, x2, x3 − 1, x4 − 1).
    let mut x = index::sample(rng, n + 1, 4).into_vec();
    x.sort_unstable();
    let (a1, a2, b1, b2) = (x[0], x[1], x[2] - 1, x[3] - 1);
    SamplePair::from_positions(traj, (a1..=b1).collect(), (a2..=b2).collect())
}

/// All windows `[a, b]` within `lo..=hi` holding at least `min_len` records.
fn windows(lo: usize, hi: usize, min_len: usize) -> Vec<(usize, usize)> {
    (lo..=hi)
        .flat_map(|a| (a + min_len - 1..=hi).map(move |b| (a, b)))
        .collect()
}

/// A long window (≥ 4 records) and a shorter window (≥ 2 records) strictly
/// inside it; the long window is the query.
pub fn sample_subsume<R: Rng>(traj: &Trajectory, rng: &mut R) -> Option<SamplePair> {
    let n = traj.len();
    if n < 4 {
        return None;
    }
    let long = windows(0, n - 1, 4);
    let (a, b) = long[rng.random_range(0..long.len())];
    let inner: Vec<(usize, usize)> = windows(a, b, 2).into_iter().filter(|&w| w != (a, b)).collect();
    let (c, d) = inner[rng.random_range(0..inner.len())];
    SamplePair::from_positions(traj, (a..=b).collect(), (c..=d).collect())
}

pub fn sample<R: Rng>(aug: Augmentation, traj: &Trajectory, keep_prob: f64, rng: &mut R) -> Option<SamplePair> {
    match aug {
        Augmentation::TwoHop => two_hop_split(traj),
        Augmentation::Random => sample_random(traj, keep_prob, rng),
        Augmentation::Adjacent => sample_adjacent(traj, rng),
        Augmentation::Overlap => sample_overlap(traj, rng),
        Augmentation::Subsume => sample_subsume(traj, rng),
    }
}

/// Pairs drawn for one pass over a trajectory set.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSamples {
    pub pairs: Vec<SamplePair>,
    /// Trajectories the sampler could not split.
    pub skipped: usize,
}

/// Samples every trajectory with its own stream keyed by (seed, epoch, id),
/// so the result does not depend on thread count or set order.
pub fn sample_epoch(trajs: &[&Trajectory], aug: Augmentation, keep_prob: f64, seed: u64, epoch: u64) -> EpochSamples {
    let drawn = exec::map_slice(trajs, |t| {
        let mut r = rng::derive(seed, &[AUGMENT_STREAM, epoch, rng::label(t.id())]);
        sample(aug, t, keep_prob, &mut r)
    });
    let skipped = drawn.iter().filter(|p| p.is_none()).count();
    EpochSamples {
        pairs: drawn.into_iter().flatten().collect(),
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Query,
    Positive,
}

/// A negative: one view of another pair in the same batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NegativeRef {
    pub pair: usize,
    pub side: Side,
}

impl NegativeRef {
    /// Index into the batch's views laid out as `[q0, p0, q1, p1, …]`.
    pub fn view_index(self) -> usize {
        2 * self.pair + (self.side == Side::Positive) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub pairs: Vec<SamplePair>,
    pub negatives: Vec<Vec<NegativeRef>>,
}

/// For each of `batch_size` pairs, `n_neg` distinct views drawn uniformly
/// without replacement from the `2·(batch_size − 1)` views of other pairs.
pub fn draw_negatives<R: Rng>(batch_size: usize, n_neg: usize, rng: &mut R) -> Result<Vec<Vec<NegativeRef>>> {
    let pool = 2 * batch_size.saturating_sub(1);
    if batch_size == 0 || pool < n_neg {
        return Err(Error::Config(format!(
            "a batch of {batch_size} pairs offers {pool} negatives but {n_neg} are needed per pair; increase the batch size"
        )));
    }
    Ok((0..batch_size)
        .map(|i| {
            index::sample(rng, pool, n_neg)
                .into_iter()
                .map(|k| {
                    let j = k / 2;
                    NegativeRef {
                        pair: if j >= i { j + 1 } else { j },
                        side: if k % 2 == 0 { Side::Query } else { Side::Positive },
                    }
                })
                .collect()
        })
        .collect())
}

pub fn assign_negatives<R: Rng>(pairs: Vec<SamplePair>, n_neg: usize, rng: &mut R) -> Result<ContrastiveBatch> {
    let negatives = draw_negatives(pairs.len(), n_neg, rng)?;
    Ok(ContrastiveBatch { pairs, negatives })
}

/// Generator for the negatives of batch `batch` in epoch `epoch`.
pub fn negative_rng(seed: u64, epoch: u64, batch: u64) -> rng::Rng {
    rng::derive(seed, &[NEGATIVE_STREAM, epoch, batch])
}
