//! Contrastive pre-training: InfoNCE over in-batch negatives, the epoch loop,
//! validation-based early stopping, checkpoints and embedding export.

mod checkpoint;
mod embeddings;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use embeddings::{embed_dataset, EmbeddingTable};

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{self, Augmentation, NegativeRef, SamplePair};
use crate::encoder::{Encoder, EncoderConfig};
use crate::numcore::gradcheck::{self, GradCheck};
use crate::numcore::{AdamState, Bound, Tape, Var};
use crate::rng;
use crate::trajdata::{Normalizer, RecordFeatures, Trajectory, VisitRecord};
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x7368_7566;
/// Epoch label reserved for the fixed validation augmentation.
const VALIDATION_EPOCH: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_neg: usize,
    pub temperature: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub augmentation: Augmentation,
    /// Keep probability of the `random` sampler.
    pub keep_prob: f64,
    /// Length-normalise embeddings before scoring.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            n_neg: 2,
            temperature: 0.07,
            max_epochs: 50,
            patience: 5,
            learning_rate: 0.001,
            augmentation: Augmentation::TwoHop,
            keep_prob: 0.5,
            cosine: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        if self.batch_size < self.n_neg + 1 {
            return fail("batch_size must be at least n_neg + 1");
        }
        if self.n_neg == 0 {
            return fail("n_neg must be positive");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return fail("keep_prob must lie in (0, 1]");
        }
        Ok(())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `−log softmax(q·k/τ)` at the positive, over the positive and the negatives.
pub fn info_nce(q: &[f64], k_pos: &[f64], k_negs: &[&[f64]], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if k_pos.len() != q.len() || k_negs.iter().any(|k| k.len() != q.len()) {
        return Err(Error::dim("info_nce", &[q.len()], &[k_pos.len()]));
    }
    let logits: Vec<f64> = std::iter::once(k_pos)
        .chain(k_negs.iter().copied())
        .map(|k| dot(q, k) / temperature)
        .collect();
    Ok(log_sum_exp(&logits) - logits[0])
}

/// InfoNCE from precomputed logits, positive first.
pub fn info_nce_from_logits(logits: &[f64]) -> f64 {
    log_sum_exp(logits) - logits[0]
}

/// Features of every view of a batch, laid out `[q0, p0, q1, p1, …]`.
pub fn view_features(pairs: &[SamplePair], normalizer: &Normalizer) -> Vec<Vec<RecordFeatures>> {
    pairs
        .iter()
        .flat_map(|p| [normalizer.features(&p.query), normalizer.features(&p.positive)])
        .collect()
}

/// Mean InfoNCE over the pairs of one batch, encoding each view once and
/// reusing view embeddings as negatives.
pub fn batch_loss(
    tape: &mut Tape,
    encoder: &Encoder,
    bound: &Bound,
    views: &[Vec<RecordFeatures>],
    negatives: &[Vec<NegativeRef>],
    config: &TrainConfig,
) -> Result<Var> {
    if views.len() != 2 * negatives.len() {
        return Err(Error::Contract("views and negatives disagree on batch size".into()));
    }
    let refs: Vec<&[RecordFeatures]> = views.iter().map(Vec::as_slice).collect();
    let mut x = encoder.forward(tape, bound, &refs)?;
    if config.cosine {
        x = tape.l2_normalize_rows(x)?;
    }
    let queries = (0..negatives.len()).map(|i| 2 * i).collect();
    let candidates = negatives
        .iter()
        .enumerate()
        .map(|(i, negs)| std::iter::once(2 * i + 1).chain(negs.iter().map(|n| n.view_index())).collect())
        .collect();
    let scores = tape.gather_dots(x, queries, candidates)?;
    let logits = tape.scale(scores, 1.0 / config.temperature)?;
    tape.cross_entropy(logits, vec![0; negatives.len()])
}

/// Splits `n` items into batches of `size`; a trailing batch too small to
/// supply `n_neg` negatives is merged into its predecessor.
fn batch_ranges(n: usize, size: usize, n_neg: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 {
        let last = out.last().unwrap().clone();
        if 2 * (last.len() - 1) < n_neg {
            out.pop();
            out.last_mut().unwrap().end = last.end;
        }
    }
    out
}

/// Counts and mean loss of one pass over a split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub pairs: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss,seconds";

    pub fn line(&self) -> String {
        format!("{},{:.6},{:.6},{:.3}", self.epoch, self.train_loss, self.val_loss, self.seconds)
    }
}

/// Patience-based early stopping on a loss to minimise.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if !(loss < b) => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Owns the parameters and optimizer of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    encoder: Encoder,
    adam: AdamState,
    config: TrainConfig,
    normalizer: Normalizer,
    seed: u64,
}

impl Trainer {
    pub fn new(encoder: Encoder, config: TrainConfig, normalizer: Normalizer, seed: u64) -> Result<Trainer> {
        config.validate()?;
        let adam = AdamState::new(encoder.params(), config.learning_rate);
        Ok(Trainer {
            encoder,
            adam,
            config,
            normalizer,
            seed,
        })
    }

    /// Fresh encoder seeded from `seed`.
    pub fn from_config(
        encoder_config: EncoderConfig,
        n_locations: usize,
        config: TrainConfig,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Trainer> {
        let encoder = Encoder::new(encoder_config, n_locations, &mut rng::derive(seed, &[0x696e_6974]))?;
        Trainer::new(encoder, config, normalizer, seed)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn pairs_for(&self, trajs: &[&Trajectory], epoch: u64) -> (Vec<SamplePair>, usize) {
        let s = augment::sample_epoch(trajs, self.config.augmentation, self.config.keep_prob, self.seed, epoch);
        (s.pairs, s.skipped)
    }

    /// One shuffled pass with an Adam step per batch. `epoch` is 1-based.
    pub fn train_epoch(&mut self, train: &[&Trajectory], epoch: usize) -> Result<EpochStats> {
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let mut order = train.to_vec();
        order.shuffle(&mut rng::derive(self.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let (pairs, skipped) = self.pairs_for(&order, epoch as u64);
        if 2 * pairs.len().saturating_sub(1) < self.config.n_neg {
            return Err(Error::Data(format!(
                "only {} usable training pairs; cannot draw {} negatives",
                pairs.len(),
                self.config.n_neg
            )));
        }
        let mut total = 0.0;
        for (b, range) in batch_ranges(pairs.len(), self.config.batch_size, self.config.n_neg).into_iter().enumerate() {
            let batch = &pairs[range];
            let negatives = augment::draw_negatives(
                batch.len(),
                self.config.n_neg,
                &mut augment::negative_rng(self.seed, epoch as u64, b as u64),
            )?;
            let views = view_features(batch, &self.normalizer);
            let mut tape = Tape::new();
            let bound = tape.bind(self.encoder.params())?;
            let loss = batch_loss(&mut tape, &self.encoder, &bound, &views, &negatives, &self.config)?;
            total += tape.value(loss)[0] * batch.len() as f64;
            tape.backward(loss)?;
            tape.accumulate_into(&bound, self.encoder.params_mut())?;
            self.adam.step(self.encoder.params_mut())?;
        }
        Ok(EpochStats {
            mean_loss: total / pairs.len() as f64,
            pairs: pairs.len(),
            skipped,
        })
    }

    /// Mean InfoNCE on a split under the fixed validation augmentation.
    pub fn evaluate_loss(&self, trajs: &[&Trajectory]) -> Result<EpochStats> {
        let (pairs, skipped) = self.pairs_for(trajs, VALIDATION_EPOCH);
        if 2 * pairs.len().saturating_sub(1) < self.config.n_neg {
            return Err(Error::Data(format!(
                "only {} usable validation pairs; cannot draw {} negatives",
                pairs.len(),
                self.config.n_neg
            )));
        }
        let mut total = 0.0;
        for (b, range) in batch_ranges(pairs.len(), self.config.batch_size, self.config.n_neg).into_iter().enumerate() {
            let batch = &pairs[range];
            let negatives = augment::draw_negatives(
                batch.len(),
                self.config.n_neg,
                &mut augment::negative_rng(self.seed, VALIDATION_EPOCH, b as u64),
            )?;
            let views = view_features(batch, &self.normalizer);
            let mut tape = Tape::new();
            let bound = tape.bind_frozen(self.encoder.params())?;
            let loss = batch_loss(&mut tape, &self.encoder, &bound, &views, &negatives, &self.config)?;
            total += tape.value(loss)[0] * batch.len() as f64;
        }
        Ok(EpochStats {
            mean_loss: total / pairs.len() as f64,
            pairs: pairs.len(),
            skipped,
        })
    }

    pub fn checkpoint(&self, epoch: usize, val_loss: f64) -> Checkpoint {
        let mut encoder = self.encoder.clone();
        encoder.params_mut().clear_grads();
        Checkpoint {
            encoder,
            adam: self.adam.clone(),
            train: self.config.clone(),
            normalization: self.normalizer,
            epoch,
            val_loss,
            seed: self.seed,
        }
    }

    /// Trains until validation InfoNCE stops improving for `patience`
    /// epochs or `max_epochs` is reached; returns the best epoch's checkpoint.
    pub fn fit(
        mut self,
        train: &[&Trajectory],
        validation: &[&Trajectory],
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<FitOutcome> {
        let mut stopper = EarlyStopper::new(self.config.patience);
        let mut best: Option<Checkpoint> = None;
        let mut log = Vec::new();
        let mut stopped_early = false;
        for epoch in 1..=self.config.max_epochs {
            let started = Instant::now();
            let train_stats = self.train_epoch(train, epoch)?;
            let val = self.evaluate_loss(validation)?.mean_loss;
            let entry = EpochLog {
                epoch,
                train_loss: train_stats.mean_loss,
                val_loss: val,
                seconds: started.elapsed().as_secs_f64(),
            };
            on_epoch(&entry);
            log.push(entry);
            match stopper.observe(epoch, val) {
                StopDecision::Improved => best = Some(self.checkpoint(epoch, val)),
                StopDecision::Continue => {}
                StopDecision::Stop => {
                    stopped_early = epoch < self.config.max_epochs;
                    break;
                }
            }
        }
        Ok(FitOutcome {
            best: best.expect("the first epoch always improves"),
            log,
            stopped_early,
        })
    }
}

/// Finite-difference check of the full encoder + InfoNCE loss with respect to
/// every encoder parameter, on a 3-pair toy batch with a small encoder.
pub fn composite_gradcheck(seed: u64) -> Result<GradCheck> {
    use rand::Rng;
    let mut r = rng::derive(seed, &[0x746f_79]);
    let enc_cfg = EncoderConfig {
        d_l: 8,
        anchors: vec![3, 2],
        heads: 2,
        ffn_hidden: 6,
        ..Default::default()
    };
    let n_loc = 5;
    let encoder = Encoder::new(enc_cfg, n_loc, &mut r)?;
    let trajs: Vec<Trajectory> = (0..3)
        .map(|i| {
            let recs = (0..6)
                .map(|k| {
                    VisitRecord::new(
                        r.random_range(0..n_loc),
                        60 * k + r.random_range(0..30),
                        0.3 * r.random::<f64>(),
                        0.3 * r.random::<f64>(),
                    )
                })
                .collect();
            Trajectory::new(format!("toy{i}"), recs)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<SamplePair> = trajs.iter().filter_map(augment::two_hop_split).collect();
    let normalizer = Normalizer {
        epoch: 0,
        seconds_per_unit: 60.0,
    };
    let views = view_features(&pairs, &normalizer);
    let negatives = augment::draw_negatives(pairs.len(), 2, &mut r)?;
    let config = TrainConfig {
        temperature: 0.5,
        ..Default::default()
    };
    let inputs: Vec<_> = encoder.params().iter().map(|(_, a)| a.clone()).collect();
    gradcheck::check(
        "encoder+info_nce",
        &inputs,
        gradcheck::STEP,
        gradcheck::TOLERANCE,
        |t, vars| batch_loss(t, &encoder, &Bound::from_vars(vars.to_vec()), &views, &negatives, &config),
    )
}
