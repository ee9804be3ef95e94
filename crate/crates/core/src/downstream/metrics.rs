use std::collections::BTreeMap;

/// Cut-offs reported for Acc@N.
pub const TOP_N: [usize; 4] = [1, 5, 10, 20];

/// Acc@1/5/10/20 and macro-F1, all as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub acc: [f64; 4],
    pub macro_f1: f64,
    pub queries: usize,
}

impl Metrics {
    pub fn acc_at(&self, n: usize) -> Option<f64> {
        TOP_N.iter().position(|&k| k == n).map(|i| self.acc[i])
    }

    /// Metrics from the 1-based rank of each query's true answer, the true
    /// labels, and the top-1 predictions.
    pub fn from_ranks(ranks: &[usize], truth: &[usize], top1: &[usize]) -> Metrics {
        let mut acc = [0.0; 4];
        for (slot, &n) in acc.iter_mut().zip(&TOP_N) {
            *slot = accuracy_at(ranks, n);
        }
        Metrics {
            acc,
            macro_f1: macro_f1(truth, top1),
            queries: ranks.len(),
        }
    }

    /// `(key, value)` pairs in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("acc@1", self.acc[0]),
            ("acc@5", self.acc[1]),
            ("acc@10", self.acc[2]),
            ("acc@20", self.acc[3]),
            ("macro_f1", self.macro_f1),
        ]
    }
}

/// Fraction of ranks ≤ n.
pub fn accuracy_at(ranks: &[usize], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64
}

/// Unweighted mean of per-class F1 over every class that occurs as a truth
/// or a prediction.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    // class → (tp, fp, fn)
    let mut counts: BTreeMap<usize, (u64, u64, u64)> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            counts.entry(t).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(t).or_default().2 += 1;
        }
    }
    if counts.is_empty() {
        return 0.0;
    }
    let sum: f64 = counts
        .values()
        .map(|&(tp, fp, fn_)| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
        .sum();
    sum / counts.len() as f64
}

/// 1-based rank of `target` when `scores` are sorted descending with ties
/// broken by ascending index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < target))
        .count()
}

/// Indices sorted by descending score, ties by ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_example() {
        let ranks = [1, 3, 7, 25];
        assert_eq!(accuracy_at(&ranks, 1), 0.25);
        assert_eq!(accuracy_at(&ranks, 5), 0.5);
        assert_eq!(accuracy_at(&ranks, 10), 0.75);
        assert_eq!(accuracy_at(&ranks, 20), 0.75);
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2]), 1.0);
        let f = macro_f1(&[0, 0, 1, 1], &[0, 0, 0, 0]);
        assert!((f - (2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ranks_break_ties_by_index() {
        let s = [0.5, 0.9, 0.5, 0.1];
        assert_eq!(ranking(&s), vec![1, 0, 2, 3]);
        assert_eq!(rank_of(&s, 0), 2);
        assert_eq!(rank_of(&s, 2), 3);
        assert_eq!(rank_of(&s, 1), 1);
    }
}
