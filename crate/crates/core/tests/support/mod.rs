//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cstte::encoder::Encoder;
use cstte::numcore::{DiffArray, ParamSet, Segment, Tape};
use cstte::trajdata::{Trajectory, VisitRecord};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

fn to_mat(a: &DiffArray) -> Mat {
    let cols = *a.shape().last().unwrap();
    a.values().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn row_vec(a: &DiffArray) -> Vec<f64> {
    a.values().to_vec()
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    let mut y = mat_mul(x, w);
    for row in &mut y {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    y
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn norm_rows(x: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mu) / (var + eps).sqrt() * gain[c] + bias[c])
                .collect()
        })
        .collect()
}

/// One induced attentive layer computed with explicit dense matrices:
/// H = Norm(A + Att(A, X, X)), out = Norm(H + FFN(H)).
pub fn dense_induced_layer(params: &ParamSet, layer: usize, heads: usize, eps: f64, x: &Mat) -> Mat {
    let p = |s: &str| params.get(&format!("layer{layer}.{s}")).unwrap();
    let anchor = to_mat(p("anchor"));
    let q = affine(&anchor, &to_mat(p("attn.wq")), &row_vec(p("attn.bq")));
    let k = affine(x, &to_mat(p("attn.wk")), &row_vec(p("attn.bk")));
    let v = affine(x, &to_mat(p("attn.wv")), &row_vec(p("attn.bv")));
    let d = anchor[0].len();
    let dh = d / heads;
    let mut concat = vec![vec![0.0; d]; anchor.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi[cols.clone()].iter().zip(&kj[cols.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in cols.clone() {
                concat[i][c] = exps.iter().zip(&v).map(|(e, vj)| e / z * vj[c]).sum();
            }
        }
    }
    let att = affine(&concat, &to_mat(p("attn.wo")), &row_vec(p("attn.bo")));
    let h = norm_rows(&add(&anchor, &att), &row_vec(p("norm1.gain")), &row_vec(p("norm1.bias")), eps);
    let hidden: Mat = affine(&h, &to_mat(p("ffn.w1")), &row_vec(p("ffn.b1")))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let f = affine(&hidden, &to_mat(p("ffn.w2")), &row_vec(p("ffn.b2")));
    norm_rows(&add(&h, &f), &row_vec(p("norm2.gain")), &row_vec(p("norm2.bias")), eps)
}

/// The library's induced attentive layer on raw input rows.
pub fn library_induced_layer(encoder: &Encoder, layer: usize, x: &Mat) -> Mat {
    let d = x[0].len();
    let mut tape = Tape::new();
    let bound = tape.bind_frozen(encoder.params()).unwrap();
    let xv = tape.constant(vec![x.len(), d], x.concat()).unwrap();
    let out = encoder
        .induced_attention(&mut tape, &bound, layer, xv, vec![Segment::new(0, x.len())])
        .unwrap();
    tape.value(out).chunks(d).map(<[f64]>::to_vec).collect()
}

/// Overwrites every parameter with N(0, scale²) draws so biases and gains are exercised.
pub fn scramble(params: &mut ParamSet, scale: f64, rng: &mut impl Rng) {
    for (_, a) in params.iter_mut() {
        for v in a.values_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = scale * z;
        }
    }
}

pub fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Minimum over every monotone alignment path, enumerated one by one.
pub fn dtw_brute_force(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    fn walk(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i].0 - b[j].0).hypot(a[i].1 - b[j].1);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// Acc@{1,5,10,20} and macro-F1 from a score table: each row ranked by a full
/// stable sort, F1 via precision and recall as exact integer fractions.
pub fn oracle_metrics(scores: &[Vec<f64>], truth: &[usize]) -> ([f64; 4], f64) {
    let mut hits = [0usize; 4];
    let mut pred = Vec::new();
    for (row, &t) in scores.iter().zip(truth) {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        let pos = idx.iter().position(|&c| c == t).unwrap() + 1;
        for (h, n) in hits.iter_mut().zip([1, 5, 10, 20]) {
            if pos <= n {
                *h += 1;
            }
        }
        pred.push(idx[0]);
    }
    let q = truth.len() as f64;
    let acc = hits.map(|h| h as f64 / q);
    let classes: BTreeSet<usize> = truth.iter().chain(&pred).copied().collect();
    let mut sum = 0.0;
    for &c in &classes {
        let tp = truth.iter().zip(&pred).filter(|&(&t, &p)| t == c && p == c).count() as u128;
        let fp = truth.iter().zip(&pred).filter(|&(&t, &p)| t != c && p == c).count() as u128;
        let fn_ = truth.iter().zip(&pred).filter(|&(&t, &p)| t == c && p != c).count() as u128;
        if tp == 0 {
            continue;
        }
        // precision = tp/(tp+fp), recall = tp/(tp+fn); F1 = 2PR/(P+R)
        let num = 2 * tp * tp;
        let den = tp * (tp + fn_) + tp * (tp + fp);
        sum += num as f64 / den as f64;
    }
    (acc, sum / classes.len() as f64)
}

/// −ln softmax of the first logit, evaluated without any stabilisation.
pub fn naive_info_nce(logits: &[f64]) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[0].exp() / z).ln()
}

/// Hand tally of first-order transitions.
pub fn transition_counts(trajs: &[Vec<usize>]) -> BTreeMap<(usize, usize), u64> {
    let mut counts = BTreeMap::new();
    for t in trajs {
        for i in 1..t.len() {
            *counts.entry((t[i - 1], t[i])).or_insert(0) += 1;
        }
    }
    counts
}

/// A trajectory visiting `locs` one minute apart along a diagonal.
pub fn trajectory(id: &str, locs: &[usize]) -> Trajectory {
    let recs = locs
        .iter()
        .enumerate()
        .map(|(i, &l)| VisitRecord::new(l, 60 * i as i64, 104.0 + 0.001 * i as f64, 30.6 + 0.001 * i as f64))
        .collect();
    Trajectory::new(id, recs).unwrap()
}
