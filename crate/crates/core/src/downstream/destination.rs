use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::numcore::{AdamState, Bound, DiffArray, ParamSet, Tape, Var};
use crate::pretrain::{EarlyStopper, StopDecision};
use crate::trajdata::{RecordFeatures, Trajectory};
use crate::{exec, rng, Error, Result};

use super::metrics::{rank_of, Metrics};

const PROBE_STREAM: u64 = 0x7072_6f62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DestinationConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy gain before stopping.
    pub patience: usize,
    /// Update the encoder together with the head instead of probing frozen embeddings.
    pub fine_tune: bool,
}

impl Default for DestinationConfig {
    fn default() -> Self {
        DestinationConfig {
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            fine_tune: false,
        }
    }
}

impl DestinationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "destination learning_rate, batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trajectories with their final record held out as the label.
#[derive(Debug, Clone, PartialEq)]
pub struct DestinationSamples {
    pub ids: Vec<String>,
    pub inputs: Vec<Trajectory>,
    pub labels: Vec<usize>,
    pub skipped: usize,
}

pub fn destination_samples(trajs: &[&Trajectory]) -> DestinationSamples {
    let mut s = DestinationSamples {
        ids: Vec::new(),
        inputs: Vec::new(),
        labels: Vec::new(),
        skipped: 0,
    };
    for t in trajs {
        match t.without_last() {
            Ok(input) => {
                s.ids.push(t.id().to_owned());
                s.labels.push(t.last().loc);
                s.inputs.push(input);
            }
            Err(_) => s.skipped += 1,
        }
    }
    s
}

/// Most frequent label and its share of `labels` (ties to the lower index).
pub fn majority_rate(labels: &[usize]) -> (usize, f64) {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let (label, n) = counts
        .into_iter()
        .fold((0, 0), |best, (l, n)| if n > best.1 { (l, n) } else { best });
    (label, if labels.is_empty() { 0.0 } else { n as f64 / labels.len() as f64 })
}

/// Ranks logits descending (ties by lower class index) against the labels.
pub fn destination_eval(logits: &[Vec<f64>], labels: &[usize]) -> Result<Metrics> {
    if logits.len() != labels.len() {
        return Err(Error::Contract("one logit row per label required".into()));
    }
    for (row, &l) in logits.iter().zip(labels) {
        if l >= row.len() {
            return Err(Error::Data(format!("label {l} outside {} classes", row.len())));
        }
    }
    let ranks: Vec<usize> = logits.iter().zip(labels).map(|(r, &l)| rank_of(r, l)).collect();
    let top1: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
    Ok(Metrics::from_ranks(&ranks, labels, &top1))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (j, &v)| if v > row[best] { j } else { best })
}

/// Linear classifier `x·W + b` over `n_classes`, optionally preceded by a
/// linear projection (`proj.*`) that is trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    params: ParamSet,
    projected: bool,
}

impl LinearProbe {
    pub fn new<R: Rng>(d_in: usize, n_classes: usize, projection: Option<usize>, rng: &mut R) -> LinearProbe {
        let mut params = ParamSet::new();
        let mut d = d_in;
        if let Some(d_out) = projection {
            params.insert("proj.w", DiffArray::uniform_init(vec![d_in, d_out], d_in, rng));
            params.insert("proj.b", DiffArray::zeros(vec![d_out]));
            d = d_out;
        }
        params.insert("head.w", DiffArray::uniform_init(vec![d, n_classes], d, rng));
        params.insert("head.b", DiffArray::zeros(vec![n_classes]));
        LinearProbe {
            params,
            projected: projection.is_some(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn n_classes(&self) -> usize {
        self.params.get("head.b").map_or(0, DiffArray::len)
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        let mut k = 0;
        if self.projected {
            let p = crate::numcore::nn::linear(tape, h, bound.var(0), bound.var(1))?;
            h = p;
            k = 2;
        }
        crate::numcore::nn::linear(tape, h, bound.var(k), bound.var(k + 1))
    }

    pub fn logits(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let d = features[0].len();
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&self.params)?;
        let x = tape.constant(vec![features.len(), d], features.concat())?;
        let y = self.forward(&mut tape, &bound, x)?;
        let c = self.n_classes();
        Ok(tape.value(y).chunks(c).map(<[f64]>::to_vec).collect())
    }
}

/// Summary of a probe training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
}

fn top1_accuracy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits.iter().zip(labels).filter(|(r, &l)| argmax(r) == l).count();
    hits as f64 / labels.len() as f64
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= n_classes) {
        Some(l) => Err(Error::Data(format!("label {l} outside vocabulary of {n_classes}"))),
        None => Ok(()),
    }
}

/// Trains a probe on fixed features with cross-entropy and Adam, keeping the
/// epoch with the best validation accuracy.
pub fn train_probe(
    mut probe: LinearProbe,
    train: (&[Vec<f64>], &[usize]),
    validation: (&[Vec<f64>], &[usize]),
    cfg: &DestinationConfig,
    seed: u64,
) -> Result<(LinearProbe, ProbeReport)> {
    cfg.validate()?;
    let (tx, ty) = train;
    if tx.is_empty() || tx.len() != ty.len() || validation.0.len() != validation.1.len() {
        return Err(Error::Data("destination training needs matching, non-empty features and labels".into()));
    }
    check_labels(ty, probe.n_classes())?;
    check_labels(validation.1, probe.n_classes())?;
    let d = tx[0].len();
    let mut adam = AdamState::new(&probe.params, cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = (probe.clone(), 0usize, 0.0);
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..tx.len()).collect();
        order.shuffle(&mut rng::derive(seed, &[PROBE_STREAM, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = tape.bind(&probe.params)?;
            let xs: Vec<f64> = batch.iter().flat_map(|&i| tx[i].iter().copied()).collect();
            let x = tape.constant(vec![batch.len(), d], xs)?;
            let logits = probe.forward(&mut tape, &bound, x)?;
            let loss = tape.cross_entropy(logits, batch.iter().map(|&i| ty[i]).collect())?;
            tape.backward(loss)?;
            tape.accumulate_into(&bound, &mut probe.params)?;
            adam.step(&mut probe.params)?;
        }
        let acc = top1_accuracy(&probe.logits(validation.0)?, validation.1);
        match stopper.observe(epoch, -acc) {
            StopDecision::Improved => best = (probe.clone(), epoch, acc),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (mut probe, best_epoch, best_val_acc) = best;
    probe.params.clear_grads();
    Ok((
        probe,
        ProbeReport {
            best_epoch,
            best_val_acc,
            epochs_run,
        },
    ))
}

/// Trains encoder and probe together on record sequences; the encoder's
/// embeddings feed the probe directly.
pub fn train_probe_fine_tuned(
    mut encoder: Encoder,
    mut probe: LinearProbe,
    train: (&[Vec<RecordFeatures>], &[usize]),
    validation: (&[Vec<RecordFeatures>], &[usize]),
    cfg: &DestinationConfig,
    seed: u64,
) -> Result<(Encoder, LinearProbe, ProbeReport)> {
    cfg.validate()?;
    let (tx, ty) = train;
    if tx.is_empty() || tx.len() != ty.len() || validation.0.len() != validation.1.len() {
        return Err(Error::Data("destination training needs matching, non-empty inputs and labels".into()));
    }
    check_labels(ty, probe.n_classes())?;
    check_labels(validation.1, probe.n_classes())?;
    let mut enc_adam = AdamState::new(encoder.params(), cfg.learning_rate);
    let mut adam = AdamState::new(&probe.params, cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = (encoder.clone(), probe.clone(), 0usize, 0.0);
    let mut epochs_run = 0;
    let val_refs: Vec<&[RecordFeatures]> = validation.0.iter().map(Vec::as_slice).collect();
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..tx.len()).collect();
        order.shuffle(&mut rng::derive(seed, &[PROBE_STREAM, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let enc_bound = tape.bind(encoder.params())?;
            let bound = tape.bind(&probe.params)?;
            let seqs: Vec<&[RecordFeatures]> = batch.iter().map(|&i| tx[i].as_slice()).collect();
            let x = encoder.forward(&mut tape, &enc_bound, &seqs)?;
            let logits = probe.forward(&mut tape, &bound, x)?;
            let loss = tape.cross_entropy(logits, batch.iter().map(|&i| ty[i]).collect())?;
            tape.backward(loss)?;
            tape.accumulate_into(&enc_bound, encoder.params_mut())?;
            tape.accumulate_into(&bound, &mut probe.params)?;
            enc_adam.step(encoder.params_mut())?;
            adam.step(&mut probe.params)?;
        }
        let emb = if val_refs.is_empty() { Vec::new() } else { encoder.embed(&val_refs)? };
        let acc = top1_accuracy(&probe.logits(&emb)?, validation.1);
        match stopper.observe(epoch, -acc) {
            StopDecision::Improved => best = (encoder.clone(), probe.clone(), epoch, acc),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (mut encoder, mut probe, best_epoch, best_val_acc) = best;
    encoder.params_mut().clear_grads();
    probe.params.clear_grads();
    Ok((
        encoder,
        probe,
        ProbeReport {
            best_epoch,
            best_val_acc,
            epochs_run,
        },
    ))
}

/// First-order location transitions with add-one smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    n_states: usize,
    /// source → (destination → count)
    counts: BTreeMap<usize, BTreeMap<usize, u64>>,
}

impl MarkovChain {
    pub fn fit(trajs: &[&Trajectory], n_states: usize) -> Result<MarkovChain> {
        let mut counts: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
        for t in trajs {
            for w in t.records().windows(2) {
                let (a, b) = (w[0].loc, w[1].loc);
                if a >= n_states || b >= n_states {
                    return Err(Error::Data(format!("location {} outside vocabulary of {n_states}", a.max(b))));
                }
                *counts.entry(a).or_default().entry(b).or_default() += 1;
            }
        }
        Ok(MarkovChain { n_states, counts })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts.get(&from).and_then(|r| r.get(&to)).copied().unwrap_or(0)
    }

    fn row_total(&self, from: usize) -> u64 {
        self.counts.get(&from).map_or(0, |r| r.values().sum())
    }

    /// P(next = j | current = from) for every j.
    pub fn probabilities(&self, from: usize) -> Vec<f64> {
        let z = (self.row_total(from) + self.n_states as u64) as f64;
        (0..self.n_states).map(|j| (self.count(from, j) + 1) as f64 / z).collect()
    }

    /// All states by descending probability, ties by ascending index.
    pub fn ranked(&self, from: usize) -> Vec<usize> {
        let mut seen: Vec<(usize, u64)> = self
            .counts
            .get(&from)
            .map(|r| r.iter().map(|(&j, &c)| (j, c)).collect())
            .unwrap_or_default();
        seen.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut out: Vec<usize> = seen.iter().map(|&(j, _)| j).collect();
        let mut is_seen = vec![false; self.n_states];
        out.iter().for_each(|&j| is_seen[j] = true);
        out.extend((0..self.n_states).filter(|&j| !is_seen[j]));
        out
    }

    /// 1-based rank of `target` in [`Self::ranked`].
    pub fn rank_of(&self, from: usize, target: usize) -> usize {
        let c = self.count(from, target);
        let row = self.counts.get(&from);
        let ahead = row.map_or(0, |r| r.iter().filter(|&(&j, &n)| n > c || (n == c && j < target)).count());
        if c > 0 {
            1 + ahead
        } else {
            // every seen state, then unseen states below target
            let seen = row.map_or(0, |r| r.len());
            let unseen_below = target - row.map_or(0, |r| r.range(..target).count());
            1 + seen + unseen_below
        }
    }

    pub fn top1(&self, from: usize) -> usize {
        self.counts
            .get(&from)
            .and_then(|r| r.iter().fold(None, |best: Option<(usize, u64)>, (&j, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((j, n)),
            }))
            .map_or(0, |(j, _)| j)
    }

    /// Predicts each input's next location from its last observed one.
    pub fn evaluate(&self, inputs: &[Trajectory], labels: &[usize]) -> Result<Metrics> {
        check_labels(labels, self.n_states)?;
        let ranks: Vec<usize> = inputs.iter().zip(labels).map(|(t, &l)| self.rank_of(t.last().loc, l)).collect();
        let top1: Vec<usize> = inputs.iter().map(|t| self.top1(t.last().loc)).collect();
        Ok(Metrics::from_ranks(&ranks, labels, &top1))
    }
}

/// Mean of frozen, randomly initialised record encodings followed by a linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanBaseline {
    encoder: Encoder,
}

impl MeanBaseline {
    pub fn new(encoder: Encoder) -> Self {
        MeanBaseline { encoder }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Mean record encoding of each sequence, [d_L] per row.
    pub fn mean_features(&self, seqs: &[Vec<RecordFeatures>]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[Vec<RecordFeatures>]> = seqs.chunks(256).collect();
        let parts = exec::map_slice(&chunks, |chunk| -> Result<Vec<Vec<f64>>> {
            let mut tape = Tape::new();
            let bound = tape.bind_frozen(self.encoder.params())?;
            let refs: Vec<&[RecordFeatures]> = chunk.iter().map(Vec::as_slice).collect();
            let (z, segments) = self.encoder.encode_records(&mut tape, &bound, &refs)?;
            let m = tape.segment_mean(z, segments)?;
            Ok(tape.value(m).chunks(self.encoder.config().d_l).map(<[f64]>::to_vec).collect())
        });
        let mut out = Vec::with_capacity(seqs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Untrained projection of mean features to `d_out`, used for search.
    pub fn untrained_embeddings<R: Rng>(&self, seqs: &[Vec<RecordFeatures>], d_out: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let d = self.encoder.config().d_l;
        let w = DiffArray::uniform_init(vec![d, d_out], d, rng);
        let means = self.mean_features(seqs)?;
        Ok(means
            .iter()
            .map(|m| {
                (0..d_out)
                    .map(|c| (0..d).map(|k| m[k] * w.values()[k * d_out + c]).sum())
                    .collect()
            })
            .collect())
    }
}
