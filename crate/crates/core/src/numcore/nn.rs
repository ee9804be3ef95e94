//! Layers composed from tape operators.

use super::tape::{Segment, Tape, Var};
use crate::Result;

/// `x·w + b` with `w` stored as [in × out].
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Projection weights of one multi-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head scaled dot-product attention of `query` over `key`/`value`.
///
/// `segments` partitions the key/value rows into independent sequences that
/// all share the same query block; pass a single full-range segment for the
/// plain case. The result has `segments.len() × query_rows` rows.
pub fn multi_head_attention(
    tape: &mut Tape,
    query: Var,
    key: Var,
    value: Var,
    heads: usize,
    w: &AttentionWeights,
    segments: Vec<Segment>,
) -> Result<Var> {
    let q = linear(tape, query, w.wq, w.bq)?;
    let k = linear(tape, key, w.wk, w.bk)?;
    let v = linear(tape, value, w.wv, w.bv)?;
    let o = tape.attention(q, k, v, segments, heads)?;
    linear(tape, o, w.wo, w.bo)
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForwardWeights {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `relu(x·w1 + b1)·w2 + b2`.
pub fn feed_forward(tape: &mut Tape, x: Var, w: &FeedForwardWeights) -> Result<Var> {
    let h = linear(tape, x, w.w1, w.b1)?;
    let h = tape.relu(h)?;
    linear(tape, h, w.w2, w.b2)
}

/// Sum of `x ⊙ weights`; turns any output into a scalar with a generic gradient.
pub fn weighted_sum(tape: &mut Tape, x: Var, weights: Vec<f64>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(shape, weights)?;
    let p = tape.mul(x, w)?;
    tape.sum(p)
}
