mod support;

use cstte::downstream::{destination_eval, dtw_distance, rank_rows, MarkovChain};
use cstte::trajdata::{chronological_split, GridSpec};
use proptest::prelude::*;

fn points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..max)
}

proptest! {
    #[test]
    fn dtw_is_symmetric_and_zero_on_self(a in points(12), b in points(12)) {
        prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(dtw_distance(&a, &b).unwrap(), dtw_distance(&b, &a).unwrap());
        prop_assert!(dtw_distance(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn accuracy_is_monotone_in_n(
        scores in prop::collection::vec(prop::collection::vec(0u8..6, 25), 1..30),
        seed in 0usize..1000,
    ) {
        let scores: Vec<Vec<f64>> = scores.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        let truth: Vec<usize> = (0..scores.len()).map(|i| (i * 7 + seed) % 25).collect();
        let m = destination_eval(&scores, &truth).unwrap();
        prop_assert!(m.acc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((0.0..=1.0).contains(&m.macro_f1));
    }

    #[test]
    fn retrieval_ranking_is_a_permutation_prefix(scores in prop::collection::vec(prop::collection::vec(-3i8..3, 24), 24)) {
        let scores: Vec<Vec<f64>> = scores.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        let r = rank_rows(&scores).unwrap();
        for (i, top) in r.top.iter().enumerate() {
            let mut seen = top.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), top.len());
            if r.ranks[i] <= top.len() {
                prop_assert_eq!(top[r.ranks[i] - 1], i);
            }
        }
    }

    #[test]
    fn markov_rows_are_distributions(walks in prop::collection::vec(prop::collection::vec(0usize..8, 2..10), 1..8)) {
        let trajs: Vec<_> = walks.iter().enumerate().map(|(i, w)| support::trajectory(&format!("w{i}"), w)).collect();
        let refs: Vec<_> = trajs.iter().collect();
        let mc = MarkovChain::fit(&refs, 8).unwrap();
        for from in 0..8 {
            let p = mc.probabilities(from);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let mut r = mc.ranked(from);
            prop_assert!(r.windows(2).all(|w| p[w[0]] >= p[w[1]]));
            r.sort_unstable();
            prop_assert_eq!(r, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn grid_indices_stay_in_range(lon in 100.0..110.0f64, lat in 25.0..35.0f64) {
        let g = GridSpec::new(104.0, 30.6, 104.1, 30.7, 250.0).unwrap();
        prop_assert!(g.assign(lon, lat) < g.n_cells());
    }

    #[test]
    fn chronological_split_partitions(n in 3usize..120, a in 1u32..10, b in 1u32..10, c in 1u32..10) {
        let trajs: Vec<_> = (0..n).map(|i| support::trajectory(&format!("t{i:03}"), &[i % 5, (i + 1) % 5])).collect();
        let s = chronological_split(&trajs, [a, b, c]).unwrap();
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
    }
}
