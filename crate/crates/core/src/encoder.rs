//! Spatial-temporal record encoding and stacked induced attentive layers.
//!
//! A record `r = (l, t, c_x, c_y)` becomes
//! `z_r = E[l] + Ψ_t(t) + [Ψ_cx(c_x) ‖ Ψ_cy(c_y)]`, where each Ψ maps a scalar
//! to interleaved `cos(ω_i v), sin(ω_i v)` pairs with learnable ω. Each layer
//! then compresses the variable-length sequence onto a fixed anchor block:
//!
//! ```text
//! H   = Norm(A + Att(A, X, X))
//! out = Norm(H + FFN(H))
//! ```
//!
//! The last layer's `N_A × d_L` output, flattened row-major, is the embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::nn::{self, AttentionWeights, FeedForwardWeights};
use crate::numcore::{Bound, DiffArray, ParamSet, Segment, Tape, Var};
use crate::trajdata::RecordFeatures;
use crate::{exec, Error, Result};

/// Sequences per tape when embedding with frozen parameters.
const EMBED_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Latent width d_L.
    pub d_l: usize,
    /// Anchor lengths N_A of the stacked layers, first to last.
    pub anchors: Vec<usize>,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub layer_norm_eps: f64,
    pub use_location: bool,
    pub use_time: bool,
    pub use_coords: bool,
    /// Adds the fixed sinusoidal encoding of each record's sequence position.
    pub positional_encoding: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_l: 64,
            anchors: vec![2],
            heads: 8,
            ffn_hidden: 128,
            layer_norm_eps: 1e-5,
            use_location: true,
            use_time: true,
            use_coords: true,
            positional_encoding: false,
        }
    }
}

/// Named encoding ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// No location embedding.
    Discrete,
    /// No Ψ encodings; positional encoding instead.
    Continuous,
    Time,
    Coordinate,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::Discrete,
        Ablation::Continuous,
        Ablation::Time,
        Ablation::Coordinate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::Discrete => "-discrete",
            Ablation::Continuous => "-continuous",
            Ablation::Time => "-time",
            Ablation::Coordinate => "-coordinate",
        }
    }

    pub fn apply(self, base: &EncoderConfig) -> EncoderConfig {
        let mut c = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::Discrete => c.use_location = false,
            Ablation::Continuous => {
                c.use_time = false;
                c.use_coords = false;
                c.positional_encoding = true;
            }
            Ablation::Time => c.use_time = false,
            Ablation::Coordinate => c.use_coords = false,
        }
        c
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_l == 0 || !self.d_l.is_multiple_of(4) {
            return fail(format!("d_l must be a positive multiple of 4 (got {})", self.d_l));
        }
        if self.heads == 0 || !self.d_l.is_multiple_of(self.heads) {
            return fail(format!("d_l {} is not divisible into {} heads", self.d_l, self.heads));
        }
        if self.anchors.is_empty() || self.anchors.contains(&0) {
            return fail(format!("anchor lengths must be non-empty and positive (got {:?})", self.anchors));
        }
        if self.ffn_hidden == 0 {
            return fail("ffn_hidden must be positive".into());
        }
        if !(self.layer_norm_eps >= 0.0) {
            return fail("layer_norm_eps must be non-negative".into());
        }
        if !(self.use_location || self.use_time || self.use_coords || self.positional_encoding) {
            return fail("every input feature is disabled".into());
        }
        Ok(())
    }

    /// d_O = last N_A · d_L.
    pub fn output_dim(&self) -> usize {
        self.anchors.last().copied().unwrap_or(0) * self.d_l
    }

    pub fn time_width(&self) -> usize {
        self.d_l
    }

    pub fn coord_width(&self) -> usize {
        self.d_l / 2
    }
}

/// Initial frequencies ω_i = 1 / 10000^(2i/d_v), i = 0..d_v/2.
pub fn frequency_ladder(d_v: usize) -> Vec<f64> {
    (0..d_v / 2)
        .map(|i| 1.0 / 10000f64.powf(2.0 * i as f64 / d_v as f64))
        .collect()
}

/// Fixed sinusoidal position encoding: even columns sin, odd columns cos.
pub fn positional_row(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|c| {
            let angle = pos as f64 / 10000f64.powf((c - c % 2) as f64 / d as f64);
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn layer_names(i: usize) -> impl Fn(&str) -> String {
    move |suffix| format!("layer{i}.{suffix}")
}

/// Encoder parameters plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    n_locations: usize,
    params: ParamSet,
}

impl Encoder {
    /// Fresh parameters: uniform ±√(1/fan_in) tables and projections,
    /// zero biases, unit norm gains, ladder-initialised frequencies.
    pub fn new<R: Rng>(config: EncoderConfig, n_locations: usize, rng: &mut R) -> Result<Encoder> {
        config.validate()?;
        if n_locations == 0 {
            return Err(Error::Config("location vocabulary is empty".into()));
        }
        let d = config.d_l;
        let mut p = ParamSet::new();
        p.insert("loc_emb", DiffArray::uniform_init(vec![n_locations, d], d, rng));
        let omega = |w: usize| DiffArray::new(vec![w / 2], frequency_ladder(w)).expect("non-empty ladder");
        p.insert("psi_t.omega", omega(config.time_width()));
        p.insert("psi_cx.omega", omega(config.coord_width()));
        p.insert("psi_cy.omega", omega(config.coord_width()));
        for (i, &na) in config.anchors.iter().enumerate() {
            let n = layer_names(i);
            p.insert(n("anchor"), DiffArray::uniform_init(vec![na, d], d, rng));
            for proj in ["q", "k", "v", "o"] {
                p.insert(n(&format!("attn.w{proj}")), DiffArray::uniform_init(vec![d, d], d, rng));
                p.insert(n(&format!("attn.b{proj}")), DiffArray::zeros(vec![d]));
            }
            let h = config.ffn_hidden;
            p.insert(n("ffn.w1"), DiffArray::uniform_init(vec![d, h], d, rng));
            p.insert(n("ffn.b1"), DiffArray::zeros(vec![h]));
            p.insert(n("ffn.w2"), DiffArray::uniform_init(vec![h, d], h, rng));
            p.insert(n("ffn.b2"), DiffArray::zeros(vec![d]));
            for norm in ["norm1", "norm2"] {
                p.insert(n(&format!("{norm}.gain")), DiffArray::filled(vec![d], 1.0));
                p.insert(n(&format!("{norm}.bias")), DiffArray::zeros(vec![d]));
            }
        }
        Ok(Encoder {
            config,
            n_locations,
            params: p,
        })
    }

    /// Rebuilds an encoder around loaded parameters, checking every name and shape.
    pub fn from_params(config: EncoderConfig, n_locations: usize, params: ParamSet) -> Result<Encoder> {
        let template = Encoder::new(config, n_locations, &mut crate::rng::seeded(0))?;
        let expected: Vec<(&str, &[usize])> = template.params.iter().map(|(n, a)| (n, a.shape())).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(n, a)| (n, a.shape())).collect();
        if expected != got {
            let missing: Vec<&str> = expected.iter().filter(|e| !got.contains(e)).map(|e| e.0).collect();
            return Err(Error::Data(format!(
                "parameters do not match the encoder configuration (mismatched: {missing:?})"
            )));
        }
        Ok(Encoder {
            config: template.config,
            n_locations,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        bound.var(self.params.index_of(name).expect("parameter created by Encoder::new"))
    }

    /// Record encodings of all sequences stacked into one [T × d_L] block,
    /// with the segment of each sequence.
    pub fn encode_records(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        seqs: &[&[RecordFeatures]],
    ) -> Result<(Var, Vec<Segment>)> {
        if seqs.is_empty() {
            return Err(Error::Contract("no sequences to encode".into()));
        }
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        let segments = Segment::consecutive(seqs.iter().map(|s| s.len()));
        let records: Vec<&RecordFeatures> = seqs.iter().flat_map(|s| s.iter()).collect();
        let c = &self.config;
        let mut terms = Vec::with_capacity(4);
        if c.use_location {
            let locs = records.iter().map(|r| r.loc).collect();
            terms.push(tape.gather_rows(self.var(bound, "loc_emb"), locs)?);
        }
        if c.use_time {
            let times = records.iter().map(|r| r.time).collect();
            terms.push(tape.psi(self.var(bound, "psi_t.omega"), times)?);
        }
        if c.use_coords {
            let zx = tape.psi(self.var(bound, "psi_cx.omega"), records.iter().map(|r| r.lon).collect())?;
            let zy = tape.psi(self.var(bound, "psi_cy.omega"), records.iter().map(|r| r.lat).collect())?;
            terms.push(tape.concat_cols(&[zx, zy])?);
        }
        if c.positional_encoding {
            let pe = seqs
                .iter()
                .flat_map(|s| (0..s.len()).flat_map(|p| positional_row(p, c.d_l)))
                .collect();
            terms.push(tape.constant(vec![records.len(), c.d_l], pe)?);
        }
        let mut z = terms[0];
        for &t in &terms[1..] {
            z = tape.add(z, t)?;
        }
        Ok((z, segments))
    }

    /// One induced attentive layer applied to every segment of `x`.
    /// Returns [S·N_A × d_L].
    pub fn induced_attention(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        layer: usize,
        x: Var,
        segments: Vec<Segment>,
    ) -> Result<Var> {
        let n = layer_names(layer);
        let v = |s: &str| self.var(bound, &n(s));
        let na = self.config.anchors[layer];
        let s = segments.len();
        let anchor = v("anchor");
        let aw = AttentionWeights {
            wq: v("attn.wq"),
            bq: v("attn.bq"),
            wk: v("attn.wk"),
            bk: v("attn.bk"),
            wv: v("attn.wv"),
            bv: v("attn.bv"),
            wo: v("attn.wo"),
            bo: v("attn.bo"),
        };
        let att = nn::multi_head_attention(tape, anchor, x, x, self.config.heads, &aw, segments)?;
        let repeated = tape.gather_rows(anchor, (0..s).flat_map(|_| 0..na).collect())?;
        let h = tape.add(repeated, att)?;
        let eps = self.config.layer_norm_eps;
        let h = tape.layer_norm(h, v("norm1.gain"), v("norm1.bias"), eps)?;
        let fw = FeedForwardWeights {
            w1: v("ffn.w1"),
            b1: v("ffn.b1"),
            w2: v("ffn.w2"),
            b2: v("ffn.b2"),
        };
        let f = nn::feed_forward(tape, h, &fw)?;
        let o = tape.add(h, f)?;
        tape.layer_norm(o, v("norm2.gain"), v("norm2.bias"), eps)
    }

    /// Embeddings of all sequences as one [S × d_O] block.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, seqs: &[&[RecordFeatures]]) -> Result<Var> {
        let (mut x, mut segments) = self.encode_records(tape, bound, seqs)?;
        let s = seqs.len();
        for (layer, &na) in self.config.anchors.iter().enumerate() {
            x = self.induced_attention(tape, bound, layer, x, segments)?;
            segments = Segment::consecutive(std::iter::repeat_n(na, s));
        }
        tape.reshape(x, vec![s, self.output_dim()])
    }

    /// Frozen-parameter embeddings, one row per sequence, in input order.
    pub fn embed(&self, seqs: &[&[RecordFeatures]]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[&[RecordFeatures]]> = seqs.chunks(EMBED_CHUNK).collect();
        let d = self.output_dim();
        let parts = exec::map_slice(&chunks, |chunk| -> Result<Vec<Vec<f64>>> {
            let mut tape = Tape::new();
            let bound = tape.bind_frozen(&self.params)?;
            let out = self.forward(&mut tape, &bound, chunk)?;
            Ok(tape.value(out).chunks(d).map(<[f64]>::to_vec).collect())
        });
        let mut rows = Vec::with_capacity(seqs.len());
        for p in parts {
            rows.extend(p?);
        }
        Ok(rows)
    }

    pub fn embed_one(&self, seq: &[RecordFeatures]) -> Result<Vec<f64>> {
        Ok(self.embed(&[seq])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            d_l: 8,
            anchors: vec![3, 2],
            heads: 2,
            ffn_hidden: 6,
            ..Default::default()
        }
    }

    fn random_seq<R: Rng>(n: usize, n_loc: usize, rng: &mut R) -> Vec<RecordFeatures> {
        (0..n)
            .map(|i| RecordFeatures {
                loc: rng.random_range(0..n_loc),
                time: 10.0 * i as f64 + rng.random_range(0.0..5.0),
                lon: 104.0 + rng.random_range(-0.05..0.05),
                lat: 30.6 + rng.random_range(-0.05..0.05),
            })
            .collect()
    }

    fn records_only(enc: &Encoder, seq: &[RecordFeatures]) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = tape.bind_frozen(enc.params()).unwrap();
        let (z, _) = enc.encode_records(&mut tape, &b, &[seq]).unwrap();
        tape.value(z).to_vec()
    }

    #[test]
    fn default_output_is_128() {
        let enc = Encoder::new(EncoderConfig::default(), 50, &mut rng::seeded(1)).unwrap();
        let seq = random_seq(7, 50, &mut rng::seeded(2));
        assert_eq!(enc.embed_one(&seq).unwrap().len(), 128);
    }

    #[test]
    fn psi_of_zero_and_quarter_turn() {
        let mut tape = Tape::new();
        let w = tape.constant(vec![3], vec![0.3, 1.0, 7.0]).unwrap();
        let y = tape.psi(w, vec![0.0]).unwrap();
        assert_eq!(tape.value(y), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let w = tape.constant(vec![1], vec![1.0]).unwrap();
        let y = tape.psi(w, vec![std::f64::consts::FRAC_PI_2]).unwrap();
        assert!(tape.value(y)[0].abs() < 1e-15 && (tape.value(y)[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psi_matches_direct_trig() {
        let mut r = rng::seeded(3);
        let omega: Vec<f64> = (0..4).map(|_| r.random_range(0.01..3.0)).collect();
        let mut tape = Tape::new();
        let w = tape.constant(vec![4], omega.clone()).unwrap();
        let y = tape.psi(w, vec![1.3]).unwrap();
        for (i, &wi) in omega.iter().enumerate() {
            assert!((tape.value(y)[2 * i] - (wi * 1.3).cos()).abs() <= 1e-15);
            assert!((tape.value(y)[2 * i + 1] - (wi * 1.3).sin()).abs() <= 1e-15);
        }
    }

    #[test]
    fn location_only_record_is_table_row() {
        let cfg = EncoderConfig {
            use_time: false,
            use_coords: false,
            ..small_config()
        };
        let enc = Encoder::new(cfg, 10, &mut rng::seeded(4)).unwrap();
        let seq = random_seq(3, 10, &mut rng::seeded(5));
        let z = records_only(&enc, &seq);
        let table = enc.params().get("loc_emb").unwrap().values();
        for (i, r) in seq.iter().enumerate() {
            assert_eq!(&z[i * 8..(i + 1) * 8], &table[r.loc * 8..(r.loc + 1) * 8]);
        }
    }

    #[test]
    fn zero_record_with_zero_row_sums_psi_of_zero() {
        let mut enc = Encoder::new(small_config(), 4, &mut rng::seeded(6)).unwrap();
        enc.params_mut().get_mut("loc_emb").unwrap().values_mut().fill(0.0);
        let rec = RecordFeatures {
            loc: 1,
            time: 0.0,
            lon: 0.0,
            lat: 0.0,
        };
        // time part [1,0,1,0,1,0,1,0] + coords [1,0,1,0 ‖ 1,0,1,0]
        assert_eq!(records_only(&enc, &[rec]), vec![2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn record_encoding_is_sum_of_parts() {
        let enc = Encoder::new(small_config(), 10, &mut rng::seeded(7)).unwrap();
        let seq = random_seq(1, 10, &mut rng::seeded(8));
        let r = seq[0];
        let p = enc.params();
        let trig = |omega: &[f64], v: f64| -> Vec<f64> { omega.iter().flat_map(|w| [(w * v).cos(), (w * v).sin()]).collect() };
        let row = &p.get("loc_emb").unwrap().values()[r.loc * 8..(r.loc + 1) * 8];
        let zt = trig(p.get("psi_t.omega").unwrap().values(), r.time);
        let mut zc = trig(p.get("psi_cx.omega").unwrap().values(), r.lon);
        zc.extend(trig(p.get("psi_cy.omega").unwrap().values(), r.lat));
        let z = records_only(&enc, &seq);
        for c in 0..8 {
            assert!((z[c] - (row[c] + zt[c] + zc[c])).abs() <= 1e-15);
        }
    }

    #[test]
    fn output_shape_law() {
        let mut r = rng::seeded(9);
        for anchors in [vec![1], vec![2], vec![8, 2], vec![16, 8, 2], vec![3, 5]] {
            let cfg = EncoderConfig {
                anchors: anchors.clone(),
                ..small_config()
            };
            let enc = Encoder::new(cfg, 6, &mut r).unwrap();
            for n in [1, 2, 9] {
                let seq = random_seq(n, 6, &mut r);
                assert_eq!(enc.embed_one(&seq).unwrap().len(), anchors.last().unwrap() * 8);
            }
        }
    }

    #[test]
    fn permuted_records_give_bit_identical_embedding() {
        let mut r = rng::seeded(10);
        let enc = Encoder::new(small_config(), 12, &mut r).unwrap();
        let seq = random_seq(9, 12, &mut r);
        let base = exec::with_threads(Some(1), || enc.embed_one(&seq).unwrap());
        for _ in 0..10 {
            let mut p = seq.clone();
            p.shuffle(&mut r);
            let e = exec::with_threads(Some(1), || enc.embed_one(&p).unwrap());
            assert_eq!(e, base);
        }
    }

    #[test]
    fn duplicated_rows_leave_output_unchanged() {
        let mut r = rng::seeded(11);
        let enc = Encoder::new(small_config(), 12, &mut r).unwrap();
        let seq = random_seq(5, 12, &mut r);
        let doubled: Vec<RecordFeatures> = seq.iter().flat_map(|x| [*x, *x]).collect();
        let a = enc.embed_one(&seq).unwrap();
        let b = enc.embed_one(&doubled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn batched_forward_matches_one_at_a_time() {
        let mut r = rng::seeded(12);
        let enc = Encoder::new(small_config(), 12, &mut r).unwrap();
        let seqs: Vec<Vec<RecordFeatures>> = (1..6).map(|n| random_seq(n, 12, &mut r)).collect();
        let refs: Vec<&[RecordFeatures]> = seqs.iter().map(Vec::as_slice).collect();
        let all = enc.embed(&refs).unwrap();
        for (s, e) in seqs.iter().zip(&all) {
            assert_eq!(&enc.embed_one(s).unwrap(), e);
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut r = rng::seeded(13);
        let mut enc = Encoder::new(small_config(), 12, &mut r).unwrap();
        let seqs: Vec<Vec<RecordFeatures>> = (0..3).map(|_| random_seq(6, 12, &mut r)).collect();
        let refs: Vec<&[RecordFeatures]> = seqs.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let bound = tape.bind(enc.params()).unwrap();
        let y = enc.forward(&mut tape, &bound, &refs).unwrap();
        let w: Vec<f64> = (0..3 * 16).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = nn::weighted_sum(&mut tape, y, w).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_into(&bound, enc.params_mut()).unwrap();
        for (name, a) in enc.params().iter() {
            let g = a.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(g.iter().all(|v| v.is_finite()));
            if name.contains("omega") {
                assert!(g.iter().any(|&v| v != 0.0), "{name} gradient is zero");
            }
        }
    }

    #[test]
    fn disabled_time_ignores_timestamps() {
        let cfg = Ablation::Time.apply(&small_config());
        let mut r = rng::seeded(14);
        let enc = Encoder::new(cfg, 12, &mut r).unwrap();
        let seq = random_seq(8, 12, &mut r);
        let shifted: Vec<RecordFeatures> = seq
            .iter()
            .map(|x| RecordFeatures {
                time: x.time * 3.0 + 1234.5,
                ..*x
            })
            .collect();
        assert_eq!(enc.embed_one(&seq).unwrap(), enc.embed_one(&shifted).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            EncoderConfig { d_l: 6, ..small_config() },
            EncoderConfig { heads: 3, ..small_config() },
            EncoderConfig { anchors: vec![], ..small_config() },
            EncoderConfig {
                use_location: false,
                use_time: false,
                use_coords: false,
                ..small_config()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        assert!(Encoder::new(small_config(), 0, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn from_params_checks_layout() {
        let enc = Encoder::new(small_config(), 5, &mut rng::seeded(15)).unwrap();
        let ok = Encoder::from_params(small_config(), 5, enc.params().clone()).unwrap();
        assert_eq!(ok, enc);
        assert!(Encoder::from_params(small_config(), 6, enc.params().clone()).is_err());
    }

    #[test]
    fn frequency_ladder_values() {
        let w = frequency_ladder(8);
        assert_eq!(w.len(), 4);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.1).abs() < 1e-15);
        assert!((w[3] - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_location_is_an_error() {
        let enc = Encoder::new(small_config(), 5, &mut rng::seeded(16)).unwrap();
        let mut seq = random_seq(3, 5, &mut rng::seeded(17));
        seq[1].loc = 5;
        assert!(enc.embed_one(&seq).is_err());
    }
}
