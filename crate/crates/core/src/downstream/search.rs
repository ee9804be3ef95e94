use crate::augment::two_hop_positions;
use crate::trajdata::Trajectory;
use crate::{exec, Error, Result};

use super::metrics::{rank_of, ranking, Metrics, TOP_N};

/// Candidates kept per query in [`RankingResult::top`].
pub const KEEP_TOP: usize = 20;

/// Odd-position queries and even-position candidates of the same trajectories,
/// sorted by id so candidate index order is id order.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSets {
    pub ids: Vec<String>,
    pub odd: Vec<Trajectory>,
    pub even: Vec<Trajectory>,
    /// Trajectories too short to split.
    pub skipped: usize,
}

impl SearchSets {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn build_search_sets(trajs: &[&Trajectory]) -> SearchSets {
    let mut sorted = trajs.to_vec();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    let mut sets = SearchSets {
        ids: Vec::new(),
        odd: Vec::new(),
        even: Vec::new(),
        skipped: 0,
    };
    for t in sorted {
        let split = two_hop_positions(t.len()).and_then(|(q, p)| Some((t.subsequence(&q).ok()?, t.subsequence(&p).ok()?)));
        match split {
            Some((q, p)) => {
                sets.ids.push(t.id().to_owned());
                sets.odd.push(q);
                sets.even.push(p);
            }
            None => sets.skipped += 1,
        }
    }
    sets
}

/// Per-query outcome of ranking all candidates; query `i`'s mate is candidate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    /// The first [`KEEP_TOP`] candidates of each query's ranking.
    pub top: Vec<Vec<usize>>,
    /// 1-based rank of each query's mate.
    pub ranks: Vec<usize>,
    pub metrics: Metrics,
}

/// Ranks candidates by descending score (ties by ascending index). Search
/// macro-F1 treats each query's mate as its own class and scores the top-1 hit.
pub fn rank_rows(scores: &[Vec<f64>]) -> Result<RankingResult> {
    let m = scores.len();
    if m < 2 {
        return Err(Error::Data(format!("search needs at least 2 candidates, got {m}")));
    }
    if scores.iter().any(|r| r.len() != m) {
        return Err(Error::Contract("score matrix must be square".into()));
    }
    let per_query = exec::map_indexed(m, |i| {
        let mut order = ranking(&scores[i]);
        order.truncate(KEEP_TOP);
        (rank_of(&scores[i], i), order)
    });
    let (ranks, top): (Vec<usize>, Vec<Vec<usize>>) = per_query.into_iter().unzip();
    let truth: Vec<usize> = (0..m).collect();
    let top1: Vec<usize> = top.iter().map(|t| t[0]).collect();
    let metrics = Metrics::from_ranks(&ranks, &truth, &top1);
    Ok(RankingResult { top, ranks, metrics })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dot-product search of query embeddings against candidate embeddings.
pub fn search_eval(queries: &[Vec<f64>], candidates: &[Vec<f64>]) -> Result<RankingResult> {
    if queries.len() != candidates.len() {
        return Err(Error::Contract("query and candidate sets differ in size".into()));
    }
    let scores = exec::map_slice(queries, |q| candidates.iter().map(|c| dot(q, c)).collect::<Vec<f64>>());
    rank_rows(&scores)
}

/// Dynamic time warping with Euclidean local cost and no window constraint.
pub fn dtw_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("DTW of an empty sequence".into()));
    }
    let cost = |p: (f64, f64), q: (f64, f64)| (p.0 - q.0).hypot(p.1 - q.1);
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &p in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = cost(p, b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

fn points(t: &Trajectory) -> Vec<(f64, f64)> {
    t.records().iter().map(|r| (r.lon, r.lat)).collect()
}

/// Ranks candidates by ascending DTW distance, ties by ascending index.
pub fn dtw_search_eval(sets: &SearchSets) -> Result<RankingResult> {
    let odd: Vec<Vec<(f64, f64)>> = sets.odd.iter().map(points).collect();
    let even: Vec<Vec<(f64, f64)>> = sets.even.iter().map(points).collect();
    let rows = exec::map_slice(&odd, |q| -> Result<Vec<f64>> {
        even.iter().map(|c| dtw_distance(q, c).map(|d| -d)).collect()
    });
    let scores = rows.into_iter().collect::<Result<Vec<_>>>()?;
    rank_rows(&scores)
}

/// Expected Acc@N of a uniformly random ranking over `m` candidates.
pub fn random_ranking_accuracy(m: usize) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (slot, &n) in out.iter_mut().zip(&TOP_N) {
        *slot = (n.min(m)) as f64 / m as f64;
    }
    out
}
