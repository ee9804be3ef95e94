// Single-use reverse-mode tape.
//
// Every operator evaluates eagerly, appends one node holding its output (plus
// whatever the backward rule needs), and hands back a `Var`. `backward` walks
// the nodes in reverse exactly once; a second call is rejected.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use super::array::{DiffArray, ParamSet};
use crate::exec;
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: u64,
}

/// Contiguous block of rows `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Segment { start, len }
    }

    /// Consecutive segments with the given lengths, starting at row 0.
    pub fn consecutive(lengths: impl IntoIterator<Item = usize>) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .into_iter()
            .map(|len| {
                let s = Segment { start, len };
                start += len;
                s
            })
            .collect()
    }

    fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow {
        x: usize,
        bias: usize,
    },
    Scale {
        x: usize,
        factor: f64,
    },
    Relu(usize),
    Sum(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        table: usize,
        rows: Vec<usize>,
    },
    Psi {
        omega: usize,
        inputs: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    VStack(Vec<usize>),
    Reshape(usize),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        segments: Vec<Segment>,
        heads: usize,
        // per segment: [head][query][key] in original key order
        probs: Vec<Vec<f64>>,
    },
    SegmentMean {
        x: usize,
        segments: Vec<Segment>,
    },
    GatherDots {
        x: usize,
        queries: Vec<usize>,
        candidates: Vec<usize>,
        width: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    L2NormalizeRows {
        x: usize,
        norms: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Owned by one thread; backward may run once.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

/// Vars of a [`ParamSet`] bound onto a tape, in the set's order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars recorded in a [`ParamSet`]'s order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        _ => {
            let cols = *shape.last().unwrap();
            (shape.iter().product::<usize>() / cols, cols)
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(buf) => buf.iter_mut().zip(&src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    exec::for_each_row(&mut out, n, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    });
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orders key indices by (score, value slice, key slice) using a total order,
/// so every reduction over keys visits them independently of row order.
fn canonical_key_order(scores: &[f64], vslices: &[&[f64]], kslices: &[&[f64]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let lex = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    order.sort_by(|&i, &j| {
        scores[i]
            .total_cmp(&scores[j])
            .then_with(|| lex(vslices[i], vslices[j]))
            .then_with(|| lex(kslices[i], kslices[j]))
    });
    order
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, AtomicOrdering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node {
        debug_assert_eq!(v.tape, self.id, "var used on a foreign tape");
        &self.nodes[v.index]
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::Contract("variable belongs to a different tape".into()));
        }
        if self.consumed {
            return Err(Error::Contract("tape already consumed by backward".into()));
        }
        Ok(v.index)
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[usize]) -> Result<Var> {
        if let Some(bad) = value.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{name} (value {bad})")));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let index = self.nodes.len();
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var { index, tape: self.id })
    }

    fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::Contract("tape already consumed by backward".into()));
        }
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::dim("leaf", &shape, &[value.len()]));
        }
        let v = self.push("leaf", shape, value, Op::Leaf, &[])?;
        self.nodes[v.index].requires_grad = requires_grad;
        Ok(v)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        self.leaf(shape, value, false)
    }

    /// Differentiable leaf initialised from `array`.
    pub fn variable(&mut self, array: &DiffArray) -> Result<Var> {
        self.leaf(array.shape().to_vec(), array.values().to_vec(), true)
    }

    pub fn constant_array(&mut self, array: &DiffArray) -> Result<Var> {
        self.leaf(array.shape().to_vec(), array.values().to_vec(), false)
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> Result<Bound> {
        let vars = params
            .iter()
            .map(|(_, a)| self.variable(a))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Records every parameter as a constant (frozen evaluation).
    pub fn bind_frozen(&mut self, params: &ParamSet) -> Result<Bound> {
        let vars = params
            .iter()
            .map(|(_, a)| self.constant_array(a))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    pub fn to_array(&self, v: Var) -> DiffArray {
        let n = self.node(v);
        DiffArray::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    // ── linear algebra ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (&self.nodes[ia].shape, &self.nodes[ib].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(&self.nodes[ia].value, &self.nodes[ib].value, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(ia, ib), &[ia, ib])
    }

    fn same_shape_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(Error::dim(name, &self.nodes[ia].shape, &self.nodes[ib].shape));
        }
        let out = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[ia].shape.clone();
        self.push(name, shape, out, op(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `x[.., j] + bias[j]` for every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (_, cols) = rows_cols(&self.nodes[ix].shape);
        if self.nodes[ib].value.len() != cols || self.nodes[ix].shape.is_empty() {
            return Err(Error::dim("add_row", &self.nodes[ix].shape, &self.nodes[ib].shape));
        }
        let b = &self.nodes[ib].value;
        let out = self.nodes[ix]
            .value
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = self.nodes[ix].shape.clone();
        self.push("add_row", shape, out, Op::AddRow { x: ix, bias: ib }, &[ix, ib])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.iter().map(|v| v * factor).collect();
        let shape = self.nodes[ix].shape.clone();
        self.push("scale", shape, out, Op::Scale { x: ix, factor }, &[ix])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[ix].shape.clone();
        self.push("relu", shape, out, Op::Relu(ix), &[ix])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.nodes[ix].value.iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(ix), &[ix])
    }

    /// Row-wise softmax over the last axis, stabilised by the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let (_, cols) = rows_cols(&self.nodes[ix].shape);
        let mut out = self.nodes[ix].value.clone();
        for row in out.chunks_mut(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let shape = self.nodes[ix].shape.clone();
        self.push("softmax_rows", shape, out, Op::SoftmaxRows(ix), &[ix])
    }

    /// Normalises each last-axis vector to zero mean and unit (biased) variance,
    /// then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (rows, d) = rows_cols(&self.nodes[ix].shape);
        if self.nodes[ig].value.len() != d || self.nodes[ib].value.len() != d {
            return Err(Error::dim("layer_norm", &self.nodes[ix].shape, &self.nodes[ig].shape));
        }
        let xs = &self.nodes[ix].value;
        let (g, b) = (&self.nodes[ig].value, &self.nodes[ib].value);
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let shape = self.nodes[ix].shape.clone();
        let op = Op::LayerNorm {
            x: ix,
            gain: ig,
            bias: ib,
            xhat,
            inv_std,
        };
        self.push("layer_norm", shape, out, op, &[ix, ig, ib])
    }

    /// Row lookup `table[rows[i]]`.
    pub fn gather_rows(&mut self, table: Var, rows: Vec<usize>) -> Result<Var> {
        let it = self.check(table)?;
        let shape = &self.nodes[it].shape;
        if shape.len() != 2 {
            return Err(Error::dim("gather_rows", shape, &[]));
        }
        let (n, d) = (shape[0], shape[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Data(format!("row index {bad} out of range for table of {n} rows")));
        }
        let t = &self.nodes[it].value;
        let out = rows.iter().flat_map(|&r| t[r * d..(r + 1) * d].iter().copied()).collect();
        let shape = vec![rows.len(), d];
        self.push("gather_rows", shape, out, Op::GatherRows { table: it, rows }, &[it])
    }

    /// Trigonometric encoding with learnable frequencies: row `r` is
    /// `[cos(ω₁v_r), sin(ω₁v_r), …, cos(ω_k v_r), sin(ω_k v_r)]`.
    pub fn psi(&mut self, omega: Var, inputs: Vec<f64>) -> Result<Var> {
        let io = self.check(omega)?;
        if inputs.is_empty() {
            return Err(Error::Contract("psi needs at least one input".into()));
        }
        let w = &self.nodes[io].value;
        let k = w.len();
        let mut out = Vec::with_capacity(inputs.len() * 2 * k);
        for &v in &inputs {
            for &wi in w {
                let (s, c) = (wi * v).sin_cos();
                out.push(c);
                out.push(s);
            }
        }
        let shape = vec![inputs.len(), 2 * k];
        self.push("psi", shape, out, Op::Psi { omega: io, inputs }, &[io])
    }

    /// Concatenates 2-D arrays along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let rows = self.nodes[idx[0]].shape[0];
        for &i in &idx {
            let s = &self.nodes[i].shape;
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat_cols", &self.nodes[idx[0]].shape, s));
            }
        }
        let widths: Vec<usize> = idx.iter().map(|&i| self.nodes[i].shape[1]).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[i].value[r * w..(r + 1) * w]);
            }
        }
        self.push("concat_cols", vec![rows, total], out, Op::ConcatCols(idx.clone()), &idx)
    }

    /// Stacks 2-D arrays along the row axis.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let cols = self.nodes[idx[0]].shape[1];
        let mut rows = 0;
        for &i in &idx {
            let s = &self.nodes[i].shape;
            if s.len() != 2 || s[1] != cols {
                return Err(Error::dim("vstack", &self.nodes[idx[0]].shape, s));
            }
            rows += s[0];
        }
        let out = idx.iter().flat_map(|&i| self.nodes[i].value.iter().copied()).collect();
        self.push("vstack", vec![rows, cols], out, Op::VStack(idx.clone()), &idx)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let ix = self.check(x)?;
        if shape.iter().product::<usize>() != self.nodes[ix].value.len() {
            return Err(Error::dim("reshape", &self.nodes[ix].shape, &shape));
        }
        let out = self.nodes[ix].value.clone();
        self.push("reshape", shape, out, Op::Reshape(ix), &[ix])
    }

    // ── attention and pooling ────────────────────────────────────────────

    /// Scaled dot-product attention of the shared query block `q` [Nq×d]
    /// against each key/value segment, with `heads` heads of width d/heads.
    ///
    /// Output row `s·Nq + i` is query `i` attended over segment `s`. Keys are
    /// reduced in a canonical order, so permuting rows inside a segment leaves
    /// the output bit-identical.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: Vec<Segment>, heads: usize) -> Result<Var> {
        let (iq, ik, iv) = (self.check(q)?, self.check(k)?, self.check(v)?);
        let (sq, sk, sv) = (&self.nodes[iq].shape, &self.nodes[ik].shape, &self.nodes[iv].shape);
        if sq.len() != 2 || sk.len() != 2 || sk != sv || sq[1] != sk[1] {
            return Err(Error::dim("attention", sq, sk));
        }
        let (nq, d, total) = (sq[0], sq[1], sk[0]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible into {heads} heads")));
        }
        for s in &segments {
            if s.len == 0 || s.end() > total {
                return Err(Error::Contract(format!(
                    "attention segment {}..{} invalid for {total} key rows",
                    s.start,
                    s.end()
                )));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (&self.nodes[iq].value, &self.nodes[ik].value, &self.nodes[iv].value);

        let per_segment: Vec<(Vec<f64>, Vec<f64>)> = exec::map_slice(&segments, |seg| {
            let n = seg.len;
            let mut out = vec![0.0; nq * d];
            let mut probs = vec![0.0; heads * nq * n];
            let mut scores = vec![0.0; n];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let kslices: Vec<&[f64]> = (0..n)
                    .map(|j| &kv[(seg.start + j) * d + cols.start..(seg.start + j) * d + cols.end])
                    .collect();
                let vslices: Vec<&[f64]> = (0..n)
                    .map(|j| &vv[(seg.start + j) * d + cols.start..(seg.start + j) * d + cols.end])
                    .collect();
                for i in 0..nq {
                    let qi = &qv[i * d + cols.start..i * d + cols.end];
                    for j in 0..n {
                        scores[j] = dot(qi, kslices[j]) * scale;
                    }
                    let order = canonical_key_order(&scores, &vslices, &kslices);
                    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let p = &mut probs[(h * nq + i) * n..(h * nq + i + 1) * n];
                    let mut z = 0.0;
                    for &j in &order {
                        p[j] = (scores[j] - m).exp();
                        z += p[j];
                    }
                    p.iter_mut().for_each(|x| *x /= z);
                    let o = &mut out[i * d + cols.start..i * d + cols.end];
                    for &j in &order {
                        let pj = p[j];
                        for (oc, &vc) in o.iter_mut().zip(vslices[j]) {
                            *oc += pj * vc;
                        }
                    }
                }
            }
            (out, probs)
        });

        let mut out = Vec::with_capacity(segments.len() * nq * d);
        let mut probs = Vec::with_capacity(segments.len());
        for (o, p) in per_segment {
            out.extend_from_slice(&o);
            probs.push(p);
        }
        let shape = vec![segments.len() * nq, d];
        let op = Op::Attention {
            q: iq,
            k: ik,
            v: iv,
            segments,
            heads,
            probs,
        };
        self.push("attention", shape, out, op, &[iq, ik, iv])
    }

    /// Mean of each row segment: [T×d] → [S×d].
    pub fn segment_mean(&mut self, x: Var, segments: Vec<Segment>) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = &self.nodes[ix].shape;
        if shape.len() != 2 {
            return Err(Error::dim("segment_mean", shape, &[]));
        }
        let (total, d) = (shape[0], shape[1]);
        let xs = &self.nodes[ix].value;
        let mut out = vec![0.0; segments.len() * d];
        for (s, seg) in segments.iter().enumerate() {
            if seg.len == 0 || seg.end() > total {
                return Err(Error::Contract("segment_mean segment out of range".into()));
            }
            let o = &mut out[s * d..(s + 1) * d];
            for r in seg.start..seg.end() {
                o.iter_mut().zip(&xs[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
            }
            o.iter_mut().for_each(|a| *a /= seg.len as f64);
        }
        let shape = vec![segments.len(), d];
        self.push("segment_mean", shape, out, Op::SegmentMean { x: ix, segments }, &[ix])
    }

    /// Scores `x[queries[b]] · x[candidates[b][c]]` into a [B×C] block.
    pub fn gather_dots(&mut self, x: Var, queries: Vec<usize>, candidates: Vec<Vec<usize>>) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = &self.nodes[ix].shape;
        if shape.len() != 2 || queries.len() != candidates.len() || queries.is_empty() {
            return Err(Error::dim("gather_dots", shape, &[queries.len(), candidates.len()]));
        }
        let (n, d) = (shape[0], shape[1]);
        let width = candidates[0].len();
        if width == 0 || candidates.iter().any(|c| c.len() != width) {
            return Err(Error::Contract("gather_dots needs equal, non-empty candidate lists".into()));
        }
        let flat: Vec<usize> = candidates.into_iter().flatten().collect();
        if queries.iter().chain(&flat).any(|&r| r >= n) {
            return Err(Error::Contract("gather_dots row reference out of range".into()));
        }
        let xs = &self.nodes[ix].value;
        let row = |r: usize| &xs[r * d..(r + 1) * d];
        let out = queries
            .iter()
            .enumerate()
            .flat_map(|(b, &q)| flat[b * width..(b + 1) * width].iter().map(move |&c| (q, c)))
            .map(|(q, c)| dot(row(q), row(c)))
            .collect();
        let shape = vec![queries.len(), width];
        let op = Op::GatherDots {
            x: ix,
            queries,
            candidates: flat,
            width,
        };
        self.push("gather_dots", shape, out, op, &[ix])
    }

    /// Mean softmax cross-entropy of logit rows against target columns,
    /// via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let il = self.check(logits)?;
        let shape = &self.nodes[il].shape;
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::dim("cross_entropy", shape, &[targets.len()]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Data(format!("target {t} out of range for {cols} classes")));
        }
        let lv = &self.nodes[il].value;
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &lv[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[targets[r]];
            for c in 0..cols {
                probs[r * cols + c] = (row[c] - lse).exp();
            }
        }
        loss /= rows as f64;
        let op = Op::CrossEntropy {
            logits: il,
            targets,
            probs,
        };
        self.push("cross_entropy", vec![], vec![loss], op, &[il])
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let (_, d) = rows_cols(&self.nodes[ix].shape);
        let mut out = self.nodes[ix].value.clone();
        let mut norms = Vec::new();
        for row in out.chunks_mut(d) {
            let n = dot(row, row).sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let shape = self.nodes[ix].shape.clone();
        self.push("l2_normalize_rows", shape, out, Op::L2NormalizeRows { x: ix, norms }, &[ix])
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Propagates d(loss)/d(·) to every differentiable leaf. Single use: a
    /// second call on the same tape is a contract error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].shape
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[il] = Some(vec![1.0]);

        for idx in (0..=il).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads)?;
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
            if let Some(g) = &grads[i] {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("gradient".into()));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        let needs = |i: usize| nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let n = nodes[*b].shape[1];
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    exec::for_each_row(&mut da, k, |i, row| {
                        let gi = &g[i * n..(i + 1) * n];
                        for (kk, r) in row.iter_mut().enumerate() {
                            *r = dot(gi, &bv[kk * n..(kk + 1) * n]);
                        }
                    });
                    add_into(&mut grads[*a], da);
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    exec::for_each_row(&mut db, n, |kk, row| {
                        for i in 0..m {
                            let aik = av[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for (r, &gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *r += aik * gv;
                            }
                        }
                    });
                    add_into(&mut grads[*b], db);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[*a], g.to_vec());
                }
                if needs(*b) {
                    add_into(&mut grads[*b], g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[*a], g.to_vec());
                }
                if needs(*b) {
                    add_into(&mut grads[*b], g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                if needs(*a) {
                    add_into(&mut grads[*a], g.iter().zip(bv).map(|(x, y)| x * y).collect());
                }
                if needs(*b) {
                    add_into(&mut grads[*b], g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
            }
            Op::AddRow { x, bias } => {
                if needs(*x) {
                    add_into(&mut grads[*x], g.to_vec());
                }
                if needs(*bias) {
                    let cols = nodes[*bias].value.len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[*bias], db);
                }
            }
            Op::Scale { x, factor } => {
                if needs(*x) {
                    add_into(&mut grads[*x], g.iter().map(|v| v * factor).collect());
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let xv = &nodes[*x].value;
                    let dx = g.iter().zip(xv).map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 }).collect();
                    add_into(&mut grads[*x], dx);
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    add_into(&mut grads[*x], vec![g[0]; nodes[*x].value.len()]);
                }
            }
            Op::SoftmaxRows(x) => {
                if needs(*x) {
                    let (_, cols) = rows_cols(&node.shape);
                    let y = &node.value;
                    let mut dx = vec![0.0; y.len()];
                    for r in 0..y.len() / cols {
                        let (yr, gr) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        let s = dot(yr, gr);
                        for c in 0..cols {
                            dx[r * cols + c] = yr[c] * (gr[c] - s);
                        }
                    }
                    add_into(&mut grads[*x], dx);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = nodes[*gain].value.len();
                let gv = &nodes[*gain].value;
                if needs(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let h = &xhat[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2 = dot(&dh, h);
                        for c in 0..d {
                            dx[r * d + c] = is / d as f64 * (d as f64 * dh[c] - s1 - h[c] * s2);
                        }
                    }
                    add_into(&mut grads[*x], dx);
                }
                if needs(*gain) {
                    let mut dg = vec![0.0; d];
                    for (gr, h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            dg[c] += gr[c] * h[c];
                        }
                    }
                    add_into(&mut grads[*gain], dg);
                }
                if needs(*bias) {
                    let mut db = vec![0.0; d];
                    for gr in g.chunks(d) {
                        db.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[*bias], db);
                }
            }
            Op::GatherRows { table, rows } => {
                if needs(*table) {
                    let d = nodes[*table].shape[1];
                    let mut dt = vec![0.0; nodes[*table].value.len()];
                    for (i, &r) in rows.iter().enumerate() {
                        dt[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&g[i * d..(i + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[*table], dt);
                }
            }
            Op::Psi { omega, inputs } => {
                if needs(*omega) {
                    let w = &nodes[*omega].value;
                    let k = w.len();
                    let y = &node.value;
                    let mut dw = vec![0.0; k];
                    for (r, &v) in inputs.iter().enumerate() {
                        for i in 0..k {
                            let (c, s) = (y[r * 2 * k + 2 * i], y[r * 2 * k + 2 * i + 1]);
                            let (gc, gs) = (g[r * 2 * k + 2 * i], g[r * 2 * k + 2 * i + 1]);
                            dw[i] += v * (gs * c - gc * s);
                        }
                    }
                    add_into(&mut grads[*omega], dw);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].shape[1];
                    if needs(p) {
                        let dp = (0..rows)
                            .flat_map(|r| g[r * total + offset..r * total + offset + w].iter().copied())
                            .collect();
                        add_into(&mut grads[p], dp);
                    }
                    offset += w;
                }
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    if needs(p) {
                        add_into(&mut grads[p], g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    add_into(&mut grads[*x], g.to_vec());
                }
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => self.attention_backward(g, grads, (*q, *k, *v), segments, *heads, probs),
            Op::SegmentMean { x, segments } => {
                if needs(*x) {
                    let d = node.shape[1];
                    let mut dx = vec![0.0; nodes[*x].value.len()];
                    for (s, seg) in segments.iter().enumerate() {
                        let gs = &g[s * d..(s + 1) * d];
                        for r in seg.start..seg.end() {
                            dx[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(gs)
                                .for_each(|(a, b)| *a += b / seg.len as f64);
                        }
                    }
                    add_into(&mut grads[*x], dx);
                }
            }
            Op::GatherDots {
                x,
                queries,
                candidates,
                width,
            } => {
                if needs(*x) {
                    let d = nodes[*x].shape[1];
                    let xs = &nodes[*x].value;
                    let mut dx = vec![0.0; xs.len()];
                    for (b, &qr) in queries.iter().enumerate() {
                        for c in 0..*width {
                            let cr = candidates[b * width + c];
                            let gv = g[b * width + c];
                            if gv == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                dx[qr * d + j] += gv * xs[cr * d + j];
                                dx[cr * d + j] += gv * xs[qr * d + j];
                            }
                        }
                    }
                    add_into(&mut grads[*x], dx);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if needs(*logits) {
                    let rows = targets.len();
                    let cols = probs.len() / rows;
                    let scale = g[0] / rows as f64;
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        dl[r * cols + t] -= scale;
                    }
                    add_into(&mut grads[*logits], dl);
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                if needs(*x) {
                    let d = node.value.len() / norms.len();
                    let y = &node.value;
                    let mut dx = vec![0.0; y.len()];
                    for (r, &n) in norms.iter().enumerate() {
                        let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                        let s = dot(yr, gr);
                        for c in 0..d {
                            dx[r * d + c] = (gr[c] - yr[c] * s) / n;
                        }
                    }
                    add_into(&mut grads[*x], dx);
                }
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        (iq, ik, iv): (usize, usize, usize),
        segments: &[Segment],
        heads: usize,
        probs: &[Vec<f64>],
    ) {
        let nodes = &self.nodes;
        let (nq, d) = (nodes[iq].shape[0], nodes[iq].shape[1]);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (&nodes[iq].value, &nodes[ik].value, &nodes[iv].value);
        let seg_ids: Vec<usize> = (0..segments.len()).collect();

        // (dq contribution, dk rows, dv rows) per segment
        let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = exec::map_slice(&seg_ids, |&s| {
            let seg = segments[s];
            let n = seg.len;
            let p = &probs[s];
            let gs = &g[s * nq * d..(s + 1) * nq * d];
            let mut dq = vec![0.0; nq * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut dp = vec![0.0; n];
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..nq {
                    let pi = &p[(h * nq + i) * n..(h * nq + i + 1) * n];
                    let gi = &gs[i * d + c0..i * d + c0 + dh];
                    for j in 0..n {
                        let vrow = &vv[(seg.start + j) * d + c0..(seg.start + j) * d + c0 + dh];
                        dp[j] = dot(gi, vrow);
                        for c in 0..dh {
                            dv[j * d + c0 + c] += pi[j] * gi[c];
                        }
                    }
                    let sdot = dot(pi, &dp);
                    let qi = &qv[i * d + c0..i * d + c0 + dh];
                    for j in 0..n {
                        let ds = pi[j] * (dp[j] - sdot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = &kv[(seg.start + j) * d + c0..(seg.start + j) * d + c0 + dh];
                        for c in 0..dh {
                            dq[i * d + c0 + c] += ds * krow[c];
                            dk[j * d + c0 + c] += ds * qi[c];
                        }
                    }
                }
            }
            (dq, dk, dv)
        });

        let mut dq_total = vec![0.0; nq * d];
        let mut dk_total = vec![0.0; nodes[ik].value.len()];
        let mut dv_total = vec![0.0; nodes[iv].value.len()];
        for (seg, (dq, dk, dv)) in segments.iter().zip(parts) {
            dq_total.iter_mut().zip(&dq).for_each(|(a, b)| *a += b);
            let range = seg.start * d..seg.end() * d;
            dk_total[range.clone()].iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
            dv_total[range].iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
        }
        if nodes[iq].requires_grad {
            add_into(&mut grads[iq], dq_total);
        }
        if nodes[ik].requires_grad {
            add_into(&mut grads[ik], dk_total);
        }
        if nodes[iv].requires_grad {
            add_into(&mut grads[iv], dv_total);
        }
    }

    /// Adds the gradients of bound parameters into `params`.
    pub fn accumulate_into(&self, bound: &Bound, params: &mut ParamSet) -> Result<()> {
        if !self.consumed {
            return Err(Error::Contract("accumulate_into before backward".into()));
        }
        for (i, &v) in bound.vars.iter().enumerate() {
            let g = self
                .grad(v)
                .ok_or_else(|| Error::Contract("bound parameter has no gradient".into()))?;
            params.by_index_mut(i).accumulate_grad(g);
        }
        Ok(())
    }
}
