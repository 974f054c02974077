//! Forward-recorded op tape with reverse-mode differentiation.
//!
//! The op set is fixed: exactly what the embedding pipeline, transformer
//! and loss need. Each forward builds a fresh tape; `backward` walks it in
//! reverse and accumulates gradients into the owning [`ParamSet`].

use std::sync::Arc;

use super::params::{ParamId, ParamSet};
use super::rng::Rng;
use super::sparse::SparseMatrix;
use super::tensor::{finite_checks, KernelError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul,
    MatmulNT,
    Bmm,
    BmmNT,
    BagSum(Arc<SparseMatrix>),
    GatherRows(Vec<usize>),
    Tanh,
    Relu,
    Add,
    AddBias,
    Scale(f64),
    RowScale(Vec<f64>),
    SoftmaxCols,
    SoftmaxLast,
    LayerNorm { eps: f64 },
    Dropout(Vec<f64>),
    Sum,
    SplitHeads { batch: usize, len: usize, heads: usize },
    MergeHeads { batch: usize, len: usize, heads: usize },
    LabelSmoothedCe { targets: Vec<usize>, mask: Vec<bool>, eps: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul => "matmul",
            Op::MatmulNT => "matmul_nt",
            Op::Bmm => "bmm",
            Op::BmmNT => "bmm_nt",
            Op::BagSum(_) => "bag_sum",
            Op::GatherRows(_) => "gather_rows",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::AddBias => "add_bias",
            Op::Scale(_) => "scale",
            Op::RowScale(_) => "row_scale",
            Op::SoftmaxCols => "softmax_cols",
            Op::SoftmaxLast => "softmax_last",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout(_) => "dropout",
            Op::Sum => "sum",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::LabelSmoothedCe { .. } => "label_smoothed_ce",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<ValueId>,
    value: Tensor,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Below this output-row work estimate the row-parallel kernels stay
/// serial; above it rows split across threads. Each output row is
/// produced by exactly one task with the same serial inner loop, so
/// results are bit-identical regardless of thread count.
const PAR_FLOPS: usize = 1 << 18;

// Raw dense products shared by forwards and backwards.

fn mm_nn_row(orow: &mut [f64], arow: &[f64], bd: &[f64], k: usize, p: usize) {
    for l in 0..k {
        let av = arow[l];
        if av == 0.0 {
            continue;
        }
        let brow = &bd[l * p..(l + 1) * p];
        for j in 0..p {
            orow[j] += av * brow[j];
        }
    }
}

fn mm_nn(a: &Tensor, b: &Tensor) -> Tensor {
    use rayon::prelude::*;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let p = b.shape()[1];
    let mut out = Tensor::zeros(&[m, p]);
    if m == 0 || p == 0 {
        return out;
    }
    let (ad, bd) = (a.data(), b.data());
    if m * k * p >= PAR_FLOPS && m > 1 {
        out.data_mut()
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(i, orow)| mm_nn_row(orow, &ad[i * k..(i + 1) * k], bd, k, p));
    } else {
        for (i, orow) in out.data_mut().chunks_mut(p).enumerate() {
            mm_nn_row(orow, &ad[i * k..(i + 1) * k], bd, k, p);
        }
    }
    out
}

fn mm_nt_row(orow: &mut [f64], arow: &[f64], bd: &[f64], k: usize, p: usize) {
    for (j, o) in orow.iter_mut().enumerate().take(p) {
        let brow = &bd[j * k..(j + 1) * k];
        let mut s = 0.0;
        for l in 0..k {
            s += arow[l] * brow[l];
        }
        *o = s;
    }
}

fn mm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    use rayon::prelude::*;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let p = b.shape()[0];
    let mut out = Tensor::zeros(&[m, p]);
    if m == 0 || p == 0 {
        return out;
    }
    let (ad, bd) = (a.data(), b.data());
    if m * k * p >= PAR_FLOPS && m > 1 {
        out.data_mut()
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(i, orow)| mm_nt_row(orow, &ad[i * k..(i + 1) * k], bd, k, p));
    } else {
        for (i, orow) in out.data_mut().chunks_mut(p).enumerate() {
            mm_nt_row(orow, &ad[i * k..(i + 1) * k], bd, k, p);
        }
    }
    out
}

fn mm_tn_row(orow: &mut [f64], l: usize, ad: &[f64], bd: &[f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let av = ad[i * k + l];
        if av == 0.0 {
            continue;
        }
        let brow = &bd[i * p..(i + 1) * p];
        for j in 0..p {
            orow[j] += av * brow[j];
        }
    }
}

fn mm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    use rayon::prelude::*;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let p = b.shape()[1];
    let mut out = Tensor::zeros(&[k, p]);
    if k == 0 || p == 0 {
        return out;
    }
    let (ad, bd) = (a.data(), b.data());
    if m * k * p >= PAR_FLOPS && k > 1 {
        out.data_mut()
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(l, orow)| mm_tn_row(orow, l, ad, bd, m, k, p));
    } else {
        for (l, orow) in out.data_mut().chunks_mut(p).enumerate() {
            mm_tn_row(orow, l, ad, bd, m, k, p);
        }
    }
    out
}

fn slice3(t: &Tensor, n: usize) -> Tensor {
    let (r, c) = (t.shape()[1], t.shape()[2]);
    let start = n * r * c;
    Tensor::from_vec(&[r, c], t.data()[start..start + r * c].to_vec()).expect("slice shape")
}

fn softmax_rows_of(data: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn softmax_rows_backward(y: &Tensor, g: &Tensor, rows: usize, cols: usize) -> Tensor {
    let mut dx = Tensor::zeros(y.shape());
    let (yd, gd, dd) = (y.data(), g.data(), dx.data_mut());
    for r in 0..rows {
        let base = r * cols;
        let mut dot = 0.0;
        for j in 0..cols {
            dot += gd[base + j] * yd[base + j];
        }
        for j in 0..cols {
            dd[base + j] = yd[base + j] * (gd[base + j] - dot);
        }
    }
    dx
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(
        &mut self,
        op: Op,
        inputs: Vec<ValueId>,
        mut value: Tensor,
        param: Option<ParamId>,
    ) -> Result<ValueId, KernelError> {
        value.quantize_in_place();
        if finite_checks() && !value.is_finite() {
            return Err(KernelError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            op,
            inputs,
            value,
            param,
        });
        Ok(ValueId(self.nodes.len() - 1))
    }

    /// Records a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> ValueId {
        self.push(Op::Leaf, Vec::new(), t, None)
            .expect("leaf push cannot fail when input is finite")
    }

    /// Records a parameter leaf; `backward` accumulates into its grad.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> ValueId {
        self.push(Op::Leaf, Vec::new(), params.get(id).value.clone(), Some(id))
            .expect("leaf push cannot fail when input is finite")
    }

    fn check2(&self, op: &'static str, id: ValueId) -> Result<(), KernelError> {
        if self.value(id).rank() != 2 {
            return Err(KernelError::BadShape {
                op,
                detail: format!("expected rank 2, got shape {:?}", self.value(id).shape()),
            });
        }
        Ok(())
    }

    /// Dense product `[m,k] x [k,p] -> [m,p]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, KernelError> {
        self.check2("matmul", a)?;
        self.check2("matmul", b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape()[1] != tb.shape()[0] {
            return Err(KernelError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = mm_nn(ta, tb);
        self.push(Op::Matmul, vec![a, b], out, None)
    }

    /// Dense product against a transposed right operand:
    /// `[m,k] x [p,k]^T -> [m,p]`.
    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, KernelError> {
        self.check2("matmul_nt", a)?;
        self.check2("matmul_nt", b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape()[1] != tb.shape()[1] {
            return Err(KernelError::ShapeMismatch {
                op: "matmul_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = mm_nt(ta, tb);
        self.push(Op::MatmulNT, vec![a, b], out, None)
    }

    fn bmm_common(
        &mut self,
        a: ValueId,
        b: ValueId,
        nt: bool,
    ) -> Result<ValueId, KernelError> {
        let op = if nt { "bmm_nt" } else { "bmm" };
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(KernelError::ShapeMismatch {
                op: "bmm",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let inner_ok = if nt {
            ta.shape()[2] == tb.shape()[2]
        } else {
            ta.shape()[2] == tb.shape()[1]
        };
        if !inner_ok {
            return Err(KernelError::ShapeMismatch {
                op: "bmm",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let n = ta.shape()[0];
        let m = ta.shape()[1];
        let inner = ta.shape()[2];
        let p = if nt { tb.shape()[1] } else { tb.shape()[2] };
        let mut out = Tensor::zeros(&[n, m, p]);
        {
            use rayon::prelude::*;
            let compute = |(i, ochunk): (usize, &mut [f64])| {
                let sa = slice3(ta, i);
                let sb = slice3(tb, i);
                let s = if nt { mm_nt(&sa, &sb) } else { mm_nn(&sa, &sb) };
                ochunk.copy_from_slice(s.data());
            };
            if n * m * inner * p >= PAR_FLOPS && n > 1 {
                out.data_mut()
                    .par_chunks_mut(m * p)
                    .enumerate()
                    .for_each(compute);
            } else {
                out.data_mut().chunks_mut(m * p).enumerate().for_each(compute);
            }
        }
        let _ = op;
        self.push(
            if nt { Op::BmmNT } else { Op::Bmm },
            vec![a, b],
            out,
            None,
        )
    }

    /// Batched product `[n,m,k] x [n,k,p] -> [n,m,p]`.
    pub fn bmm(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, KernelError> {
        self.bmm_common(a, b, false)
    }

    /// Batched product with a transposed right operand:
    /// `[n,m,k] x [n,p,k]^T -> [n,m,p]`.
    pub fn bmm_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, KernelError> {
        self.bmm_common(a, b, true)
    }

    /// Weighted row-gather-and-sum: `out[r] = sum_j w(r,j) * table[j]`.
    /// Rows with no entries yield the zero vector.
    pub fn bag_sum(
        &mut self,
        bon: Arc<SparseMatrix>,
        table: ValueId,
    ) -> Result<ValueId, KernelError> {
        self.check2("bag_sum", table)?;
        let t = self.value(table);
        if bon.cols() != t.shape()[0] {
            return Err(KernelError::IndexOutOfRange {
                op: "bag_sum",
                index: bon.cols().saturating_sub(1),
                bound: t.shape()[0],
            });
        }
        let d = t.shape()[1];
        let mut out = Tensor::zeros(&[bon.rows(), d]);
        {
            use rayon::prelude::*;
            let td = t.data();
            let fill = |(r, orow): (usize, &mut [f64])| {
                for &(_, c, w) in bon.row(r) {
                    let trow = &td[c * d..(c + 1) * d];
                    for j in 0..d {
                        orow[j] += w * trow[j];
                    }
                }
            };
            if bon.nnz() * d >= PAR_FLOPS {
                out.data_mut().par_chunks_mut(d).enumerate().for_each(fill);
            } else {
                out.data_mut().chunks_mut(d).enumerate().for_each(fill);
            }
        }
        self.push(Op::BagSum(bon), vec![table], out, None)
    }

    /// Row lookup: `out[i] = x[ids[i]]`.
    pub fn gather_rows(&mut self, x: ValueId, ids: &[usize]) -> Result<ValueId, KernelError> {
        self.check2("gather_rows", x)?;
        let t = self.value(x);
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        for &i in ids {
            if i >= rows {
                return Err(KernelError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
        }
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (n, &i) in ids.iter().enumerate() {
            let src = &t.data()[i * d..(i + 1) * d];
            out.data_mut()[n * d..(n + 1) * d].copy_from_slice(src);
        }
        self.push(Op::GatherRows(ids.to_vec()), vec![x], out, None)
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId, KernelError> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        self.push(Op::Tanh, vec![x], out, None)
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId, KernelError> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(Op::Relu, vec![x], out, None)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        for (o, v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o += v;
        }
        self.push(Op::Add, vec![a, b], out, None)
    }

    /// Adds a `[d]` bias vector to every row of `x` viewed as `[rows, d]`.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId, KernelError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tx.last_dim();
        if tb.rank() != 1 || tb.shape()[0] != d {
            return Err(KernelError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let rows = tx.rows_flat();
        let mut out = tx.clone();
        for r in 0..rows {
            let orow = &mut out.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                orow[j] += tb.data()[j];
            }
        }
        self.push(Op::AddBias, vec![x, bias], out, None)
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> Result<ValueId, KernelError> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= c;
        }
        self.push(Op::Scale(c), vec![x], out, None)
    }

    /// Scales each row of `x` (viewed as `[rows, d]`) by a fixed weight.
    pub fn row_scale(&mut self, x: ValueId, weights: &[f64]) -> Result<ValueId, KernelError> {
        let tx = self.value(x);
        let d = tx.last_dim();
        let rows = tx.rows_flat();
        if weights.len() != rows {
            return Err(KernelError::BadShape {
                op: "row_scale",
                detail: format!("{} weights for {rows} rows", weights.len()),
            });
        }
        let mut out = tx.clone();
        for (r, &w) in weights.iter().enumerate() {
            for v in &mut out.data_mut()[r * d..(r + 1) * d] {
                *v *= w;
            }
        }
        self.push(Op::RowScale(weights.to_vec()), vec![x], out, None)
    }

    /// Column-wise softmax of a 2-D tensor; subtracts the column max first.
    pub fn softmax_cols(&mut self, x: ValueId) -> Result<ValueId, KernelError> {
        self.check2("softmax_cols", x)?;
        let t = self.value(x);
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut out = t.clone();
        let od = out.data_mut();
        for j in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..m {
                mx = mx.max(od[i * n + j]);
            }
            let mut sum = 0.0;
            for i in 0..m {
                let e = (od[i * n + j] - mx).exp();
                od[i * n + j] = e;
                sum += e;
            }
            for i in 0..m {
                od[i * n + j] /= sum;
            }
        }
        self.push(Op::SoftmaxCols, vec![x], out, None)
    }

    /// Softmax over the last axis, any rank; subtracts the max first.
    pub fn softmax_last(&mut self, x: ValueId) -> Result<ValueId, KernelError> {
        let t = self.value(x);
        let cols = t.last_dim();
        let rows = t.rows_flat();
        let mut out = t.clone();
        softmax_rows_of(out.data_mut(), rows, cols);
        self.push(Op::SoftmaxLast, vec![x], out, None)
    }

    /// Per-row layer normalization with learnable gain and bias `[d]`.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
    ) -> Result<ValueId, KernelError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(KernelError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let rows = tx.rows_flat();
        let mut out = tx.clone();
        {
            let od = out.data_mut();
            for r in 0..rows {
                let row = &mut od[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for j in 0..d {
                    row[j] = (row[j] - mean) * inv * tg.data()[j] + tb.data()[j];
                }
            }
        }
        self.push(
            Op::LayerNorm {
                eps: LAYER_NORM_EPS,
            },
            vec![x, gain, bias],
            out,
            None,
        )
    }

    /// Inverted dropout with a seeded mask; `p <= 0` is the identity.
    pub fn dropout(
        &mut self,
        x: ValueId,
        p: f64,
        rng: &mut Rng,
    ) -> Result<ValueId, KernelError> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(KernelError::Contract(format!("dropout p={p} not in [0,1)")));
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.chance(p) { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(Op::Dropout(mask), vec![x], out, None)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: ValueId) -> Result<ValueId, KernelError> {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(Op::Sum, vec![x], Tensor::scalar(s), None)
    }

    /// `[batch*len, heads*dk] -> [batch*heads, len, dk]`.
    pub fn split_heads(
        &mut self,
        x: ValueId,
        batch: usize,
        len: usize,
        heads: usize,
    ) -> Result<ValueId, KernelError> {
        let t = self.value(x);
        if t.rank() != 2 || t.shape()[0] != batch * len || !t.shape()[1].is_multiple_of(heads) {
            return Err(KernelError::BadShape {
                op: "split_heads",
                detail: format!(
                    "shape {:?} incompatible with batch={batch} len={len} heads={heads}",
                    t.shape()
                ),
            });
        }
        let dk = t.shape()[1] / heads;
        let mut out = Tensor::zeros(&[batch * heads, len, dk]);
        {
            let (src, dst) = (t.data(), out.data_mut());
            for b in 0..batch {
                for l in 0..len {
                    for h in 0..heads {
                        let s = (b * len + l) * heads * dk + h * dk;
                        let d = ((b * heads + h) * len + l) * dk;
                        dst[d..d + dk].copy_from_slice(&src[s..s + dk]);
                    }
                }
            }
        }
        self.push(Op::SplitHeads { batch, len, heads }, vec![x], out, None)
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(
        &mut self,
        x: ValueId,
        batch: usize,
        len: usize,
        heads: usize,
    ) -> Result<ValueId, KernelError> {
        let t = self.value(x);
        if t.rank() != 3 || t.shape()[0] != batch * heads || t.shape()[1] != len {
            return Err(KernelError::BadShape {
                op: "merge_heads",
                detail: format!(
                    "shape {:?} incompatible with batch={batch} len={len} heads={heads}",
                    t.shape()
                ),
            });
        }
        let dk = t.shape()[2];
        let mut out = Tensor::zeros(&[batch * len, heads * dk]);
        {
            let (src, dst) = (t.data(), out.data_mut());
            for b in 0..batch {
                for h in 0..heads {
                    for l in 0..len {
                        let s = ((b * heads + h) * len + l) * dk;
                        let d = (b * len + l) * heads * dk + h * dk;
                        dst[d..d + dk].copy_from_slice(&src[s..s + dk]);
                    }
                }
            }
        }
        self.push(Op::MergeHeads { batch, len, heads }, vec![x], out, None)
    }

    /// Label-smoothed cross entropy averaged over rows where `mask` is true.
    ///
    /// Per counted row: `(1-eps) * nll(target) + eps * mean_v(-log p_v)`.
    pub fn label_smoothed_ce(
        &mut self,
        logits: ValueId,
        targets: &[usize],
        mask: &[bool],
        eps: f64,
    ) -> Result<ValueId, KernelError> {
        self.check2("label_smoothed_ce", logits)?;
        let t = self.value(logits);
        let (n, v) = (t.shape()[0], t.shape()[1]);
        if targets.len() != n || mask.len() != n {
            return Err(KernelError::BadShape {
                op: "label_smoothed_ce",
                detail: format!("{n} rows, {} targets, {} mask", targets.len(), mask.len()),
            });
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(KernelError::Contract(format!(
                "label smoothing eps={eps} not in [0,1)"
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(KernelError::Contract(
                "label_smoothed_ce: no unmasked targets".into(),
            ));
        }
        for (&tgt, &m) in targets.iter().zip(mask) {
            if m && tgt >= v {
                return Err(KernelError::IndexOutOfRange {
                    op: "label_smoothed_ce",
                    index: tgt,
                    bound: v,
                });
            }
        }
        let mut total = 0.0;
        for r in 0..n {
            if !mask[r] {
                continue;
            }
            let row = &t.data()[r * v..(r + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            let nll = lse - row[targets[r]];
            let smooth: f64 = row.iter().map(|x| lse - x).sum::<f64>() / v as f64;
            total += (1.0 - eps) * nll + eps * smooth;
        }
        let loss = total / count as f64;
        self.push(
            Op::LabelSmoothedCe {
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                eps,
            },
            vec![logits],
            Tensor::scalar(loss),
            None,
        )
    }

    /// Reverse sweep from a scalar loss; accumulates parameter gradients.
    pub fn backward(&self, loss: ValueId, params: &mut ParamSet) -> Result<(), KernelError> {
        if !self.value(loss).is_scalar() {
            return Err(KernelError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(pid) = node.param {
                        params.accumulate_grad(pid, &g);
                    }
                }
                Op::Matmul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let da = mm_nt(&g, self.value(b));
                    let db = mm_tn(self.value(a), &g);
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::MatmulNT => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let da = mm_nn(&g, self.value(b));
                    let db = mm_tn(&g, self.value(a));
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Bmm | Op::BmmNT => {
                    let nt = matches!(node.op, Op::BmmNT);
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (ta, tb) = (self.value(a), self.value(b));
                    let nslices = ta.shape()[0];
                    let mut da = Tensor::zeros(ta.shape());
                    let mut db = Tensor::zeros(tb.shape());
                    for s in 0..nslices {
                        let gs = slice3(&g, s);
                        let sa = slice3(ta, s);
                        let sb = slice3(tb, s);
                        let (das, dbs) = if nt {
                            (mm_nn(&gs, &sb), mm_tn(&gs, &sa))
                        } else {
                            (mm_nt(&gs, &sb), mm_tn(&sa, &gs))
                        };
                        let alen = das.numel();
                        da.data_mut()[s * alen..(s + 1) * alen].copy_from_slice(das.data());
                        let blen = dbs.numel();
                        db.data_mut()[s * blen..(s + 1) * blen].copy_from_slice(dbs.data());
                    }
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::BagSum(bon) => {
                    let table = node.inputs[0];
                    let d = self.value(table).shape()[1];
                    let mut dt = Tensor::zeros(self.value(table).shape());
                    {
                        let gd = g.data();
                        let dd = dt.data_mut();
                        for &(r, c, w) in bon.entries() {
                            let grow = &gd[r * d..(r + 1) * d];
                            let drow = &mut dd[c * d..(c + 1) * d];
                            for j in 0..d {
                                drow[j] += w * grow[j];
                            }
                        }
                    }
                    acc(&mut grads[table.0], dt);
                }
                Op::GatherRows(ids) => {
                    let x = node.inputs[0];
                    let d = self.value(x).shape()[1];
                    let mut dx = Tensor::zeros(self.value(x).shape());
                    for (r, &i) in ids.iter().enumerate() {
                        let grow = &g.data()[r * d..(r + 1) * d];
                        let drow = &mut dx.data_mut()[i * d..(i + 1) * d];
                        for j in 0..d {
                            drow[j] += grow[j];
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::Tanh => {
                    let mut dx = g.clone();
                    for (dv, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *dv *= 1.0 - y * y;
                    }
                    acc(&mut grads[node.inputs[0].0], dx);
                }
                Op::Relu => {
                    let mut dx = g.clone();
                    for (dv, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    acc(&mut grads[node.inputs[0].0], dx);
                }
                Op::Add => {
                    acc(&mut grads[node.inputs[0].0], g.clone());
                    acc(&mut grads[node.inputs[1].0], g);
                }
                Op::AddBias => {
                    let bias = node.inputs[1];
                    let d = self.value(bias).shape()[0];
                    let rows = g.numel() / d;
                    let mut db = Tensor::zeros(&[d]);
                    for r in 0..rows {
                        for j in 0..d {
                            db.data_mut()[j] += g.data()[r * d + j];
                        }
                    }
                    acc(&mut grads[node.inputs[0].0], g);
                    acc(&mut grads[bias.0], db);
                }
                Op::Scale(c) => {
                    let mut dx = g;
                    for v in dx.data_mut() {
                        *v *= c;
                    }
                    acc(&mut grads[node.inputs[0].0], dx);
                }
                Op::RowScale(ws) => {
                    let mut dx = g;
                    let d = dx.numel() / ws.len();
                    for (r, &w) in ws.iter().enumerate() {
                        for v in &mut dx.data_mut()[r * d..(r + 1) * d] {
                            *v *= w;
                        }
                    }
                    acc(&mut grads[node.inputs[0].0], dx);
                }
                Op::SoftmaxCols => {
                    let y = &node.value;
                    let (m, n) = (y.shape()[0], y.shape()[1]);
                    let mut dx = Tensor::zeros(y.shape());
                    for j in 0..n {
                        let mut dot = 0.0;
                        for i in 0..m {
                            dot += g.data()[i * n + j] * y.data()[i * n + j];
                        }
                        for i in 0..m {
                            dx.data_mut()[i * n + j] =
                                y.data()[i * n + j] * (g.data()[i * n + j] - dot);
                        }
                    }
                    acc(&mut grads[node.inputs[0].0], dx);
                }
                Op::SoftmaxLast => {
                    let y = &node.value;
                    let cols = y.last_dim();
                    let rows = y.rows_flat();
                    let dx = softmax_rows_backward(y, &g, rows, cols);
                    acc(&mut grads[node.inputs[0].0], dx);
                }
                Op::LayerNorm { eps } => {
                    let (x, gain, bias) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                    let tx = self.value(x);
                    let tg = self.value(gain);
                    let d = tx.last_dim();
                    let rows = tx.rows_flat();
                    let mut dx = Tensor::zeros(tx.shape());
                    let mut dgain = Tensor::zeros(&[d]);
                    let mut dbias = Tensor::zeros(&[d]);
                    for r in 0..rows {
                        let xrow = &tx.data()[r * d..(r + 1) * d];
                        let grow = &g.data()[r * d..(r + 1) * d];
                        let mean = xrow.iter().sum::<f64>() / d as f64;
                        let var =
                            xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = xrow.iter().map(|v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> = grow
                            .iter()
                            .zip(tg.data())
                            .map(|(gv, gw)| gv * gw)
                            .collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d as f64;
                        for j in 0..d {
                            dx.data_mut()[r * d + j] =
                                inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            dgain.data_mut()[j] += grow[j] * xhat[j];
                            dbias.data_mut()[j] += grow[j];
                        }
                    }
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[gain.0], dgain);
                    acc(&mut grads[bias.0], dbias);
                }
                Op::Dropout(mask) => {
                    let mut dx = g;
                    for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    acc(&mut grads[node.inputs[0].0], dx);
                }
                Op::Sum => {
                    let gv = g.item();
                    let x = node.inputs[0];
                    let dx = Tensor::filled(self.value(x).shape(), gv);
                    acc(&mut grads[x.0], dx);
                }
                Op::SplitHeads { batch, len, heads } => {
                    let x = node.inputs[0];
                    let dk = self.value(x).shape()[1] / heads;
                    let mut dx = Tensor::zeros(self.value(x).shape());
                    for b in 0..*batch {
                        for l in 0..*len {
                            for h in 0..*heads {
                                let s = ((b * heads + h) * len + l) * dk;
                                let dsti = (b * len + l) * heads * dk + h * dk;
                                for j in 0..dk {
                                    dx.data_mut()[dsti + j] += g.data()[s + j];
                                }
                            }
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::MergeHeads { batch, len, heads } => {
                    let x = node.inputs[0];
                    let dk = self.value(x).shape()[2];
                    let mut dx = Tensor::zeros(self.value(x).shape());
                    for b in 0..*batch {
                        for h in 0..*heads {
                            for l in 0..*len {
                                let dsti = ((b * heads + h) * len + l) * dk;
                                let s = (b * len + l) * heads * dk + h * dk;
                                for j in 0..dk {
                                    dx.data_mut()[dsti + j] += g.data()[s + j];
                                }
                            }
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::LabelSmoothedCe { targets, mask, eps } => {
                    let logits = node.inputs[0];
                    let t = self.value(logits);
                    let (n, v) = (t.shape()[0], t.shape()[1]);
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let gscale = g.item() / count;
                    let mut dx = Tensor::zeros(t.shape());
                    for r in 0..n {
                        if !mask[r] {
                            continue;
                        }
                        let row = &t.data()[r * v..(r + 1) * v];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                        for j in 0..v {
                            let p = (row[j] - mx).exp() / sum;
                            let q = if j == targets[r] { 1.0 - eps } else { 0.0 }
                                + eps / v as f64;
                            dx.data_mut()[r * v + j] = gscale * (p - q);
                        }
                    }
                    acc(&mut grads[logits.0], dx);
                }
            }
        }
        Ok(())
    }
}

fn acc(slot: &mut Option<Tensor>, add: Tensor) {
    match slot {
        Some(t) => {
            debug_assert_eq!(t.shape(), add.shape());
            for (dst, src) in t.data_mut().iter_mut().zip(add.data()) {
                *dst += src;
            }
        }
        None => *slot = Some(add),
    }
}
