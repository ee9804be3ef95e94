//! The commands behind the CLI, as library calls.
//!
//! A [`Run`] couples a [`RunConfig`] with a run directory. Every command
//! reads its inputs from and writes its outputs to that directory (unless the
//! config points elsewhere), so a directory holds everything needed to replay
//! the run: `config.toml`, the dataset, the checkpoint, the training log and
//! one report per evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::downstream::{
    self, build_search_sets, destination_samples, dtw_search_eval, majority_rate, search_eval, LinearProbe,
    MarkovChain, MeanBaseline, Metrics, ProbeReport, RankingResult, SearchSets,
};
use crate::encoder::{Encoder, EncoderConfig};
use crate::numcore::gradcheck::{self, GradCheck};
use crate::pretrain::{self, embed_dataset, Checkpoint, EmbeddingTable, EpochLog, FitOutcome, Trainer};
use crate::trajdata::{self, Dataset, Normalizer, PreprocessStats, RecordFeatures, Trajectory};
use crate::{rng, synthgen, Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const RAW_FILE: &str = "raw.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const DATASET_DIR: &str = "dataset";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EMBEDDINGS_CSV: &str = "embeddings.csv";
pub const EMBEDDINGS_BIN: &str = "embeddings.bin";

const MEAN_STREAM: u64 = 0x6d65_616e;
const RANDOM_STREAM: u64 = 0x7261_6e64;
const PROBE_INIT_STREAM: u64 = 0x6865_6164;

/// What produces the trajectory representation being evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedder {
    /// A pretrained encoder; `None` means the run's own checkpoint.
    Checkpoint(Option<PathBuf>),
    Dtw,
    Mean,
    MarkovChain,
    Random,
}

impl Embedder {
    pub fn name(&self) -> &'static str {
        match self {
            Embedder::Checkpoint(_) => "cstte",
            Embedder::Dtw => "dtw",
            Embedder::Mean => "mean",
            Embedder::MarkovChain => "mc",
            Embedder::Random => "random",
        }
    }
}

impl FromStr for Embedder {
    type Err = Error;

    /// Baseline names only; checkpoints are selected by path.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dtw" => Ok(Embedder::Dtw),
            "mean" => Ok(Embedder::Mean),
            "mc" => Ok(Embedder::MarkovChain),
            "random" => Ok(Embedder::Random),
            other => Err(Error::Config(format!(
                "unknown baseline `{other}` (expected dtw, mean, mc or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Search,
    Destination,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Search => "search",
            Task::Destination => "destination",
        }
    }
}

/// One evaluation's metrics plus task-specific counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub task: Task,
    pub embedder: String,
    pub metrics: Metrics,
    pub details: Vec<(&'static str, f64)>,
    pub seconds: f64,
}

impl Report {
    /// Human-readable report, including wall time.
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task      {}", self.task.name());
        let _ = writeln!(s, "embedder  {}", self.embedder);
        for (k, v) in self.metrics.fields() {
            let _ = writeln!(s, "{k:<9} {:.3}%", 100.0 * v);
        }
        for (k, v) in &self.details {
            let _ = writeln!(s, "{k:<9} {v}");
        }
        let _ = writeln!(s, "wall time {:.2}s", self.seconds);
        s
    }

    /// `key=value` lines with no timing, so identical runs give identical files.
    pub fn key_values(&self) -> String {
        let mut s = format!("task={}\nembedder={}\nqueries={}\n", self.task.name(), self.embedder, self.metrics.queries);
        for (k, v) in self.metrics.fields().into_iter().chain(self.details.iter().copied()) {
            let _ = writeln!(s, "{k}={v:?}");
        }
        s
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.task.name(), self.embedder)
    }

    /// Writes `<task>_<embedder>.txt` and `<task>_<embedder>.metrics` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let text = dir.join(format!("{}.txt", self.file_stem()));
        let kv = dir.join(format!("{}.metrics", self.file_stem()));
        fs::write(&text, self.text()).map_err(|e| Error::io(&text, e))?;
        fs::write(&kv, self.key_values()).map_err(|e| Error::io(&kv, e))?;
        Ok((text, kv))
    }
}

/// Number of records in a synthetic dataset written by [`Run::synth`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub trajectories: usize,
    pub records: usize,
}

fn feature_seqs(normalizer: &Normalizer, trajs: &[Trajectory]) -> Vec<Vec<RecordFeatures>> {
    trajs.iter().map(|t| normalizer.features(t)).collect()
}

fn embed_seqs(encoder: &Encoder, seqs: &[Vec<RecordFeatures>]) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&[RecordFeatures]> = seqs.iter().map(Vec::as_slice).collect();
    encoder.embed(&refs)
}

fn search_details(sets: &SearchSets) -> Vec<(&'static str, f64)> {
    vec![
        ("candidates", sets.len() as f64),
        ("skipped", sets.skipped as f64),
        ("random_acc@1", 1.0 / sets.len() as f64),
    ]
}

/// Odd/even search over `test` with a trained (or any) encoder.
pub fn search_with_encoder(encoder: &Encoder, normalizer: &Normalizer, test: &[&Trajectory]) -> Result<RankingResult> {
    let sets = build_search_sets(test);
    let q = embed_seqs(encoder, &feature_seqs(normalizer, &sets.odd))?;
    let c = embed_seqs(encoder, &feature_seqs(normalizer, &sets.even))?;
    search_eval(&q, &c)
}

fn mean_baseline(config: &EncoderConfig, n_locations: usize, seed: u64) -> Result<MeanBaseline> {
    let encoder = Encoder::new(config.clone(), n_locations, &mut rng::derive(seed, &[MEAN_STREAM]))?;
    Ok(MeanBaseline::new(encoder))
}

/// Search with mean-pooled random record encodings and an untrained projection.
pub fn search_with_mean(
    config: &EncoderConfig,
    n_locations: usize,
    normalizer: &Normalizer,
    test: &[&Trajectory],
    seed: u64,
) -> Result<RankingResult> {
    let sets = build_search_sets(test);
    let base = mean_baseline(config, n_locations, seed)?;
    let d_out = config.output_dim();
    let q = base.untrained_embeddings(&feature_seqs(normalizer, &sets.odd), d_out, &mut rng::derive(seed, &[MEAN_STREAM, 1]))?;
    let c = base.untrained_embeddings(&feature_seqs(normalizer, &sets.even), d_out, &mut rng::derive(seed, &[MEAN_STREAM, 1]))?;
    search_eval(&q, &c)
}

/// Search with independent Gaussian embeddings; the chance level.
pub fn search_with_random(test: &[&Trajectory], dim: usize, seed: u64) -> Result<RankingResult> {
    let sets = build_search_sets(test);
    let mut g = rng::derive(seed, &[RANDOM_STREAM]);
    let mut draw = || -> Vec<Vec<f64>> {
        (0..sets.len())
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut g)).collect())
            .collect()
    };
    let (q, c) = (draw(), draw());
    search_eval(&q, &c)
}

/// Destination prediction result with the majority-class reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DestinationOutcome {
    pub metrics: Metrics,
    pub majority_rate: f64,
    pub probe: Option<ProbeReport>,
    pub skipped: usize,
}

impl DestinationOutcome {
    fn details(&self) -> Vec<(&'static str, f64)> {
        let mut d = vec![("majority_rate", self.majority_rate), ("skipped", self.skipped as f64)];
        if let Some(p) = &self.probe {
            d.push(("best_epoch", p.best_epoch as f64));
            d.push(("val_acc@1", p.best_val_acc));
        }
        d
    }
}

struct DestinationSplits {
    train: downstream::DestinationSamples,
    validation: downstream::DestinationSamples,
    test: downstream::DestinationSamples,
}

fn destination_splits(dataset: &Dataset) -> Result<DestinationSplits> {
    let s = DestinationSplits {
        train: destination_samples(&dataset.train()),
        validation: destination_samples(&dataset.validation()),
        test: destination_samples(&dataset.test()),
    };
    if s.train.labels.is_empty() || s.test.labels.is_empty() {
        return Err(Error::Data("destination prediction needs trajectories of length ≥ 3 in train and test".into()));
    }
    Ok(s)
}

fn test_majority(s: &DestinationSplits) -> f64 {
    let (label, _) = majority_rate(&s.train.labels);
    s.test.labels.iter().filter(|&&l| l == label).count() as f64 / s.test.labels.len() as f64
}

/// Linear probe (or fine-tuning, if configured) on top of `encoder`.
pub fn destination_with_encoder(
    encoder: &Encoder,
    dataset: &Dataset,
    config: &crate::downstream::DestinationConfig,
    seed: u64,
) -> Result<DestinationOutcome> {
    let s = destination_splits(dataset)?;
    let norm = &dataset.metadata().normalization;
    let n = dataset.n_locations();
    let (tr, va, te) = (
        feature_seqs(norm, &s.train.inputs),
        feature_seqs(norm, &s.validation.inputs),
        feature_seqs(norm, &s.test.inputs),
    );
    let probe = LinearProbe::new(encoder.output_dim(), n, None, &mut rng::derive(seed, &[PROBE_INIT_STREAM]));
    let (logits, report) = if config.fine_tune {
        let (enc, probe, report) = downstream::train_probe_fine_tuned(
            encoder.clone(),
            probe,
            (&tr, &s.train.labels),
            (&va, &s.validation.labels),
            config,
            seed,
        )?;
        (probe.logits(&embed_seqs(&enc, &te)?)?, report)
    } else {
        let (etr, eva) = (embed_seqs(encoder, &tr)?, embed_or_empty(encoder, &va)?);
        let (probe, report) =
            downstream::train_probe(probe, (&etr, &s.train.labels), (&eva, &s.validation.labels), config, seed)?;
        (probe.logits(&embed_seqs(encoder, &te)?)?, report)
    };
    Ok(DestinationOutcome {
        metrics: downstream::destination_eval(&logits, &s.test.labels)?,
        majority_rate: test_majority(&s),
        probe: Some(report),
        skipped: s.test.skipped,
    })
}

fn embed_or_empty(encoder: &Encoder, seqs: &[Vec<RecordFeatures>]) -> Result<Vec<Vec<f64>>> {
    if seqs.is_empty() {
        Ok(Vec::new())
    } else {
        embed_seqs(encoder, seqs)
    }
}

/// Mean baseline with its projection and head trained end to end.
pub fn destination_with_mean(
    encoder_config: &EncoderConfig,
    dataset: &Dataset,
    config: &crate::downstream::DestinationConfig,
    seed: u64,
) -> Result<DestinationOutcome> {
    let s = destination_splits(dataset)?;
    let norm = &dataset.metadata().normalization;
    let n = dataset.n_locations();
    let base = mean_baseline(encoder_config, n, seed)?;
    let mean = |seqs: &[Trajectory]| -> Result<Vec<Vec<f64>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        base.mean_features(&feature_seqs(norm, seqs))
    };
    let (tr, va, te) = (mean(&s.train.inputs)?, mean(&s.validation.inputs)?, mean(&s.test.inputs)?);
    let probe = LinearProbe::new(
        encoder_config.d_l,
        n,
        Some(encoder_config.output_dim()),
        &mut rng::derive(seed, &[MEAN_STREAM, 2]),
    );
    let (probe, report) = downstream::train_probe(probe, (&tr, &s.train.labels), (&va, &s.validation.labels), config, seed)?;
    Ok(DestinationOutcome {
        metrics: downstream::destination_eval(&probe.logits(&te)?, &s.test.labels)?,
        majority_rate: test_majority(&s),
        probe: Some(report),
        skipped: s.test.skipped,
    })
}

/// First-order Markov chain fitted on the full training trajectories.
pub fn destination_with_markov(dataset: &Dataset) -> Result<DestinationOutcome> {
    let s = destination_splits(dataset)?;
    let mc = MarkovChain::fit(&dataset.train(), dataset.n_locations())?;
    Ok(DestinationOutcome {
        metrics: mc.evaluate(&s.test.inputs, &s.test.labels)?,
        majority_rate: test_majority(&s),
        probe: None,
        skipped: s.test.skipped,
    })
}

/// Pass/fail table of every finite-difference suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<GradCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GradCheck::passed)
    }

    pub fn text(&self) -> String {
        let mut s = format!("{:<28} {:>12} {:>10}  result\n", "check", "max rel err", "tolerance");
        for c in &self.checks {
            let verdict = if c.passed() { "ok" } else { "FAIL" };
            let _ = writeln!(s, "{:<28} {:>12.3e} {:>10.0e}  {verdict}", c.name, c.max_rel_error, c.tolerance);
        }
        s.push_str(if self.passed() { "PASS\n" } else { "FAIL\n" });
        s
    }
}

pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut checks = gradcheck::operator_suite(seed)?;
    checks.push(pretrain::composite_gradcheck(seed)?);
    Ok(GradcheckReport { checks })
}

/// A configuration bound to the directory its outputs go to.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: RunConfig, dir: impl Into<PathBuf>) -> Run {
        Run { config, dir: dir.into() }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn raw_path(&self) -> PathBuf {
        self.config.data.raw.as_deref().map_or_else(|| self.dir.join(RAW_FILE), |p| self.resolve(p))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.config
            .data
            .processed
            .as_deref()
            .map_or_else(|| self.dir.join(DATASET_DIR), |p| self.resolve(p))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }

    /// Creates the run directory and stores the resolved configuration in it.
    pub fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        self.config.save(&self.dir.join(CONFIG_FILE))
    }

    /// Generates the synthetic corpus as a raw CSV plus the ground-truth sidecar.
    pub fn synth(&self) -> Result<SynthSummary> {
        self.prepare()?;
        let data = synthgen::generate(&self.config.synth)?;
        let path = self.raw_path();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        trajdata::write_trajectories(std::io::BufWriter::new(file), &data.trajectories, false)
            .map_err(|e| Error::io(&path, e))?;
        data.write_ground_truth(&self.dir.join(GROUND_TRUTH_FILE))?;
        Ok(SynthSummary {
            trajectories: data.trajectories.len(),
            records: data.trajectories.iter().map(Trajectory::len).sum(),
        })
    }

    pub fn preprocess(&self) -> Result<PreprocessStats> {
        self.prepare()?;
        let raw = trajdata::parse_trajectories(&self.raw_path())?;
        let (dataset, stats) = Dataset::build(raw.trajectories, raw.has_locations, &self.config.preprocess)?;
        dataset.save(&self.dataset_dir())?;
        Ok(stats)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        Dataset::load(&self.dataset_dir())
    }

    /// Trains on the training split, early-stopping on validation loss, and
    /// writes the best checkpoint and the per-epoch log.
    pub fn pretrain(&self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<FitOutcome> {
        self.prepare()?;
        let dataset = self.load_dataset()?;
        let trainer = Trainer::from_config(
            self.config.encoder.clone(),
            dataset.n_locations(),
            self.config.train.clone(),
            dataset.metadata().normalization,
            self.config.seed,
        )?;
        let log_path = self.dir.join(TRAIN_LOG_FILE);
        let mut log = format!("{}\n", EpochLog::HEADER);
        let outcome = trainer.fit(&dataset.train(), &dataset.validation(), |e| {
            log.push_str(&e.line());
            log.push('\n');
            let _ = fs::write(&log_path, &log);
            on_epoch(e);
        })?;
        fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        outcome.best.save(&self.checkpoint_path())?;
        Ok(outcome)
    }

    fn checkpoint(&self, path: Option<&Path>) -> Result<Checkpoint> {
        let path = path.map_or_else(|| self.checkpoint_path(), |p| p.to_path_buf());
        if !path.exists() {
            return Err(Error::Data(format!("checkpoint {} does not exist", path.display())));
        }
        Checkpoint::load(&path)
    }

    /// Embeds every trajectory of the dataset and writes CSV and binary tables.
    pub fn embed(&self, checkpoint: Option<&Path>) -> Result<EmbeddingTable> {
        self.prepare()?;
        let ckpt = self.checkpoint(checkpoint)?;
        let dataset = self.load_dataset()?;
        check_vocabulary(&ckpt.encoder, &dataset)?;
        let all: Vec<&Trajectory> = dataset.trajectories().iter().collect();
        let table = embed_dataset(&ckpt.encoder, &dataset.metadata().normalization, &all)?;
        table.write_csv(&self.dir.join(EMBEDDINGS_CSV))?;
        table.write_binary(&self.dir.join(EMBEDDINGS_BIN))?;
        Ok(table)
    }

    /// Similar-trajectory search over the test split; writes the report.
    pub fn eval_search(&self, embedder: &Embedder) -> Result<Report> {
        self.prepare()?;
        let started = Instant::now();
        let dataset = self.load_dataset()?;
        let test = dataset.test();
        let sets = build_search_sets(&test);
        let norm = &dataset.metadata().normalization;
        let result = match embedder {
            Embedder::Checkpoint(p) => {
                let ckpt = self.checkpoint(p.as_deref())?;
                check_vocabulary(&ckpt.encoder, &dataset)?;
                search_with_encoder(&ckpt.encoder, norm, &test)?
            }
            Embedder::Dtw => dtw_search_eval(&sets)?,
            Embedder::Mean => search_with_mean(&self.config.encoder, dataset.n_locations(), norm, &test, self.config.seed)?,
            Embedder::Random => search_with_random(&test, self.config.encoder.output_dim(), self.config.seed)?,
            Embedder::MarkovChain => {
                return Err(Error::Config("the Markov chain baseline only applies to destination prediction".into()))
            }
        };
        let report = Report {
            task: Task::Search,
            embedder: embedder.name().to_owned(),
            metrics: result.metrics,
            details: search_details(&sets),
            seconds: started.elapsed().as_secs_f64(),
        };
        report.write(&self.dir)?;
        Ok(report)
    }

    /// Destination prediction on the test split; writes the report.
    pub fn eval_destination(&self, embedder: &Embedder) -> Result<Report> {
        self.prepare()?;
        let started = Instant::now();
        let dataset = self.load_dataset()?;
        let cfg = &self.config;
        let outcome = match embedder {
            Embedder::Checkpoint(p) => {
                let ckpt = self.checkpoint(p.as_deref())?;
                check_vocabulary(&ckpt.encoder, &dataset)?;
                destination_with_encoder(&ckpt.encoder, &dataset, &cfg.destination, cfg.seed)?
            }
            Embedder::Mean => destination_with_mean(&cfg.encoder, &dataset, &cfg.destination, cfg.seed)?,
            Embedder::MarkovChain => destination_with_markov(&dataset)?,
            Embedder::Dtw | Embedder::Random => {
                return Err(Error::Config(format!(
                    "baseline `{}` does not apply to destination prediction",
                    embedder.name()
                )))
            }
        };
        let report = Report {
            task: Task::Destination,
            embedder: embedder.name().to_owned(),
            metrics: outcome.metrics,
            details: outcome.details(),
            seconds: started.elapsed().as_secs_f64(),
        };
        report.write(&self.dir)?;
        Ok(report)
    }
}

fn check_vocabulary(encoder: &Encoder, dataset: &Dataset) -> Result<()> {
    if encoder.n_locations() != dataset.n_locations() {
        return Err(Error::Data(format!(
            "checkpoint vocabulary has {} locations but the dataset has {}",
            encoder.n_locations(),
            dataset.n_locations()
        )));
    }
    Ok(())
}
