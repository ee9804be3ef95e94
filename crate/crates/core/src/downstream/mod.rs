//! Downstream evaluation: similar-trajectory search, destination prediction,
//! their baselines, and the shared ranking metrics.

mod destination;
mod metrics;
mod search;

pub use destination::{
    destination_eval, destination_samples, majority_rate, train_probe, train_probe_fine_tuned, DestinationConfig,
    DestinationSamples, LinearProbe, MarkovChain, MeanBaseline, ProbeReport,
};
pub use metrics::{accuracy_at, macro_f1, rank_of, ranking, Metrics, TOP_N};
pub use search::{
    build_search_sets, dtw_distance, dtw_search_eval, random_ranking_accuracy, rank_rows, search_eval, RankingResult,
    SearchSets, KEEP_TOP,
};
