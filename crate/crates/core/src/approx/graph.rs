use alloc::vec::Vec;
use alloc::{format, vec};

use super::gemm::gemm;
use super::layers::ConvGeom;
use super::params::{ParamId, ParameterStore};
use super::TensorBuf;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param {
        store: u64,
        id: ParamId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Clamp(NodeId, f64, f64),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumRows(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LogSumExpRows(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        a: NodeId,
        start: usize,
    },
    Gather {
        a: NodeId,
        idx: Vec<usize>,
    },
    MixRows {
        w: NodeId,
        comps: NodeId,
        k: usize,
    },
    StraightThrough {
        soft: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    value: TensorBuf,
    op: Op,
    needs_grad: bool,
}

/// A tape of differentiable operations on row-major matrices.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for the backward pass. Binary elementwise ops
/// broadcast dimensions of size 1.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    relu_margin: f64,
}

/// Per-node gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, u64, ParamId)>,
}

impl Gradients {
    pub fn wrt(&self, node: NodeId) -> Option<&[f64]> {
        self.grads[node.0].as_deref()
    }

    /// `(store uid, parameter, gradient)` for every parameter leaf that received a gradient.
    pub fn param_grads(&self) -> impl Iterator<Item = (u64, ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(n, uid, id)| self.grads[n].as_deref().map(|g| (uid, id, g)))
    }
}

fn bshape(a: &TensorBuf, b: &TensorBuf) -> Result<(usize, usize)> {
    let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
    let r = if ar == br || br == 1 {
        ar
    } else if ar == 1 {
        br
    } else {
        return Err(Error::shape(format!("cannot broadcast {ar}x{ac} with {br}x{bc}")));
    };
    let c = if ac == bc || bc == 1 {
        ac
    } else if ac == 1 {
        bc
    } else {
        return Err(Error::shape(format!("cannot broadcast {ar}x{ac} with {br}x{bc}")));
    };
    Ok((r, c))
}

#[inline]
fn bidx(rows: usize, cols: usize, i: usize, j: usize) -> usize {
    (if rows == 1 { 0 } else { i }) * cols + if cols == 1 { 0 } else { j }
}

fn broadcast_row(d: &[f64], rows: usize, cols: usize, i: usize) -> &[f64] {
    let r = if rows == 1 { 0 } else { i };
    &d[r * cols..(r + 1) * cols]
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            relu_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &TensorBuf {
        &self.nodes[n.0].value
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        self.nodes[n.0].value.item()
    }

    /// Smallest `|x|` seen by any relu so far; near zero means the graph sits on a kink.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    fn push(&mut self, value: TensorBuf, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, n: NodeId) -> bool {
        self.nodes[n.0].needs_grad
    }

    /// A constant input. Gradients are tracked for it only if `track` is set.
    pub fn input(&mut self, value: TensorBuf, track: bool) -> NodeId {
        let value = if value.shape().len() == 2 {
            value
        } else {
            let (r, c) = (value.rows(), value.cols());
            TensorBuf::matrix(r, c, value.into_data())
        };
        self.push(value, Op::Leaf, track)
    }

    pub fn constant(&mut self, value: TensorBuf) -> NodeId {
        self.input(value, false)
    }

    pub fn constant_scalar(&mut self, x: f64) -> NodeId {
        self.constant(TensorBuf::scalar(x))
    }

    /// Binds a trainable parameter (frozen parameters become constants).
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        let p = store.value(id);
        let value = TensorBuf::matrix(p.rows(), p.cols(), p.data().to_vec());
        let needs_grad = !store.is_frozen(id);
        self.push(value, Op::Param { store: store.uid(), id }, needs_grad)
    }

    /// Binds a parameter value with gradients detached.
    pub fn frozen_param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        let p = store.value(id);
        self.constant(TensorBuf::matrix(p.rows(), p.cols(), p.data().to_vec()))
    }

    /// A copy of `n`'s value with no gradient path.
    pub fn detach(&mut self, n: NodeId) -> NodeId {
        let v = self.value(n).clone();
        self.constant(v)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (r, c) = bshape(va, vb)?;
        let (ar, ac, br, bc) = (va.rows(), va.cols(), vb.rows(), vb.cols());
        let (da, db) = (va.data(), vb.data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let ra = broadcast_row(da, ar, ac, i);
            let rb = broadcast_row(db, br, bc, i);
            match (ac == c, bc == c) {
                (true, true) => out.extend(ra.iter().zip(rb).map(|(&x, &y)| f(x, y))),
                (true, false) => out.extend(ra.iter().map(|&x| f(x, rb[0]))),
                (false, true) => out.extend(rb.iter().map(|&y| f(ra[0], y))),
                (false, false) => out.extend((0..c).map(|_| f(ra[0], rb[0]))),
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(TensorBuf::matrix(r, c, out), op, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, f64::min, Op::Min(a, b))
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, f64::max, Op::Max(a, b))
    }

    /// `a * b` or `a * b^T`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (va.rows(), va.cols());
        let (kb, n) = if trans_b {
            (vb.cols(), vb.rows())
        } else {
            (vb.rows(), vb.cols())
        };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul {m}x{k} by {}x{}{}",
                vb.rows(),
                vb.cols(),
                if trans_b { "^T" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, va.data(), false, vb.data(), trans_b, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(TensorBuf::matrix(m, n, out), Op::MatMul { a, b, trans_b }, ng))
    }

    /// `x * w + b` with a row bias.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w, false)?;
        self.add(y, b)
    }

    /// 2-D convolution over HWC-flattened rows via im2col.
    ///
    /// `x` is `batch x (h*w*c_in)`, `w` is `(k*k*c_in) x filters`, `b` is `1 x filters`;
    /// the output is `batch x (out_h*out_w*filters)`, again HWC.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        let vw = &self.nodes[w.0].value;
        let vb = &self.nodes[b.0].value;
        let patch = geom.kernel * geom.kernel * geom.in_channels;
        if vx.cols() != geom.in_h * geom.in_w * geom.in_channels
            || vw.rows() != patch
            || vw.cols() != geom.filters
            || vb.len() != geom.filters
        {
            return Err(Error::shape(format!(
                "conv input {}x{} / weight {}x{} do not match {geom:?}",
                vx.rows(),
                vx.cols(),
                vw.rows(),
                vw.cols()
            )));
        }
        let batch = vx.rows();
        let (oh, ow) = geom.out_hw();
        let positions = batch * oh * ow;
        let mut cols = vec![0.0; positions * patch];
        let xd = vx.data();
        let row_len = vx.cols();
        for bi in 0..batch {
            let xr = &xd[bi * row_len..(bi + 1) * row_len];
            for oy in 0..oh {
                for ox in 0..ow {
                    let dst = ((bi * oh + oy) * ow + ox) * patch;
                    let mut o = 0;
                    for ky in 0..geom.kernel {
                        let iy = oy * geom.stride + ky;
                        let src = (iy * geom.in_w + ox * geom.stride) * geom.in_channels;
                        let len = geom.kernel * geom.in_channels;
                        cols[dst + o..dst + o + len].copy_from_slice(&xr[src..src + len]);
                        o += len;
                    }
                }
            }
        }
        let f = geom.filters;
        let mut out = vec![0.0; positions * f];
        for p in 0..positions {
            out[p * f..(p + 1) * f].copy_from_slice(vb.data());
        }
        gemm(positions, patch, f, 1.0, &cols, false, vw.data(), false, 1.0, &mut out);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(
            TensorBuf::matrix(batch, oh * ow * f, out),
            Op::Conv { x, w, b, geom, cols },
            ng,
        ))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = &self.nodes[a.0].value;
        let out = v.data().iter().map(|&x| f(x)).collect();
        let value = TensorBuf::matrix(v.rows(), v.cols(), out);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let m = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| x.abs())
            .fold(f64::INFINITY, f64::min);
        self.relu_margin = self.relu_margin.min(m);
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, math::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, math::ln, Op::Log(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, math::softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.data().iter().sum();
        let ng = self.ng(a);
        self.push(TensorBuf::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(a);
        self.push(TensorBuf::scalar(s), Op::MeanAll(a), ng)
    }

    /// Row sums, `r x c -> r x 1`.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let c = v.cols();
        let out = v.data().chunks(c).map(|r| r.iter().sum()).collect();
        let value = TensorBuf::matrix(v.rows(), 1, out);
        let ng = self.ng(a);
        self.push(value, Op::SumRows(a), ng)
    }

    fn rowwise(&mut self, a: NodeId, out_cols: usize, f: impl Fn(&[f64], &mut [f64]), op: Op) -> NodeId {
        let v = &self.nodes[a.0].value;
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r * out_cols];
        for i in 0..r {
            f(
                &v.data()[i * c..(i + 1) * c],
                &mut out[i * out_cols..(i + 1) * out_cols],
            );
        }
        let ng = self.ng(a);
        self.push(TensorBuf::matrix(r, out_cols, out), op, ng)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let c = self.nodes[a.0].value.cols();
        self.rowwise(a, c, math::softmax_into, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let c = self.nodes[a.0].value.cols();
        self.rowwise(
            a,
            c,
            |x, o| {
                let l = math::logsumexp(x);
                for (o, &x) in o.iter_mut().zip(x) {
                    *o = x - l;
                }
            },
            Op::LogSoftmaxRows(a),
        )
    }

    pub fn logsumexp_rows(&mut self, a: NodeId) -> NodeId {
        self.rowwise(a, 1, |x, o| o[0] = math::logsumexp(x), Op::LogSumExpRows(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.nodes[parts[0].0].value.rows();
        let mut total = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != rows {
                return Err(Error::shape("concat_cols with unequal row counts"));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row_slice(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(TensorBuf::matrix(rows, total, out), Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if start + len > v.cols() {
            return Err(Error::shape(format!(
                "slice {start}..{} of {} columns",
                start + len,
                v.cols()
            )));
        }
        let mut out = Vec::with_capacity(v.rows() * len);
        for i in 0..v.rows() {
            out.extend_from_slice(&v.row_slice(i)[start..start + len]);
        }
        let value = TensorBuf::matrix(v.rows(), len, out);
        let ng = self.ng(a);
        Ok(self.push(value, Op::Slice { a, start }, ng))
    }

    /// Picks column `idx[i]` from row `i`, giving `r x 1`.
    pub fn gather(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if idx.len() != v.rows() || idx.iter().any(|&j| j >= v.cols()) {
            return Err(Error::shape("gather index out of range"));
        }
        let out = idx.iter().enumerate().map(|(i, &j)| v.get(i, j)).collect();
        let value = TensorBuf::matrix(v.rows(), 1, out);
        let ng = self.ng(a);
        Ok(self.push(value, Op::Gather { a, idx: idx.to_vec() }, ng))
    }

    /// Per-row weighted sum of `k`-wide blocks: `out[i, c] = sum_j w[i, j] * comps[i, j*k + c]`.
    pub fn mix_rows(&mut self, w: NodeId, comps: NodeId, k: usize) -> Result<NodeId> {
        let (vw, vc) = (&self.nodes[w.0].value, &self.nodes[comps.0].value);
        let (r, n) = (vw.rows(), vw.cols());
        if vc.rows() != r || vc.cols() != n * k {
            return Err(Error::shape(format!(
                "mix_rows weights {r}x{n} with components {}x{} (k={k})",
                vc.rows(),
                vc.cols()
            )));
        }
        let mut out = vec![0.0; r * k];
        for i in 0..r {
            let wr = vw.row_slice(i);
            let cr = vc.row_slice(i);
            let o = &mut out[i * k..(i + 1) * k];
            for (j, &wj) in wr.iter().enumerate() {
                for (oc, &x) in o.iter_mut().zip(&cr[j * k..(j + 1) * k]) {
                    *oc += wj * x;
                }
            }
        }
        let ng = self.ng(w) || self.ng(comps);
        Ok(self.push(TensorBuf::matrix(r, k, out), Op::MixRows { w, comps, k }, ng))
    }

    /// Straight-through estimator: the forward value is `hard`, the gradient
    /// flows to `soft` unchanged.
    pub fn straight_through(&mut self, soft: NodeId, hard: TensorBuf) -> Result<NodeId> {
        let v = &self.nodes[soft.0].value;
        if hard.rows() != v.rows() || hard.cols() != v.cols() {
            return Err(Error::shape("straight_through hard/soft shapes differ"));
        }
        let value = TensorBuf::matrix(v.rows(), v.cols(), hard.into_data());
        let ng = self.ng(soft);
        Ok(self.push(value, Op::StraightThrough { soft }, ng))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::usage("backward called without a recorded forward pass"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::usage("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.backprop(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param { store, id } if n.needs_grad => Some((i, store, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], n: NodeId) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[n.0].needs_grad {
            return None;
        }
        let len = self.nodes[n.0].value.len();
        Some(grads[n.0].get_or_insert_with(|| vec![0.0; len]))
    }

    /// Adds `contrib(k)` to entry `k` of `n`'s gradient; a first contribution
    /// is written directly instead of onto zeros.
    fn acc_map(&self, grads: &mut [Option<Vec<f64>>], n: NodeId, len: usize, contrib: impl Fn(usize) -> f64) {
        if !self.nodes[n.0].needs_grad {
            return;
        }
        match &mut grads[n.0] {
            Some(d) => d.iter_mut().enumerate().for_each(|(k, x)| *x += contrib(k)),
            slot @ None => *slot = Some((0..len).map(contrib).collect()),
        }
    }

    /// `sign * g` into operand `n` of an add or subtract, summing over broadcast axes.
    fn acc_signed(&self, grads: &mut [Option<Vec<f64>>], n: NodeId, out: &TensorBuf, g: &[f64], sign: f64) {
        let v = &self.nodes[n.0].value;
        let (nr, nc) = (v.rows(), v.cols());
        let c = out.cols();
        if nr == out.rows() && nc == c {
            self.acc_map(grads, n, g.len(), |k| sign * g[k]);
            return;
        }
        if let Some(dst) = self.acc(grads, n) {
            for (i, row) in g.chunks_exact(c).enumerate() {
                let base = if nr == 1 { 0 } else { i * nc };
                if nc == 1 {
                    dst[base] += sign * row.iter().sum::<f64>();
                } else {
                    dst[base..base + c]
                        .iter_mut()
                        .zip(row)
                        .for_each(|(d, &x)| *d += sign * x);
                }
            }
        }
    }

    /// Accumulates a broadcast gradient `g` (shape of the output) into operand `n`.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        n: NodeId,
        out: &TensorBuf,
        g: &[f64],
        f: impl Fn(usize, usize) -> f64,
    ) {
        let v = &self.nodes[n.0].value;
        let (nr, nc) = (v.rows(), v.cols());
        let (r, c) = (out.rows(), out.cols());
        if let Some(dst) = self.acc(grads, n) {
            for i in 0..r {
                for j in 0..c {
                    dst[bidx(nr, nc, i, j)] += g[i * c + j] * f(i, j);
                }
            }
        }
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let val = |n: NodeId| &self.nodes[n.0].value;
        let at = |n: NodeId, i: usize, j: usize| {
            let v = val(n);
            v.data()[bidx(v.rows(), v.cols(), i, j)]
        };
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Add(a, b) => {
                self.acc_signed(grads, *a, out, g, 1.0);
                self.acc_signed(grads, *b, out, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_signed(grads, *a, out, g, 1.0);
                self.acc_signed(grads, *b, out, g, -1.0);
            }
            Op::Mul(a, b) => {
                self.acc_broadcast(grads, *a, out, g, |i, j| at(*b, i, j));
                self.acc_broadcast(grads, *b, out, g, |i, j| at(*a, i, j));
            }
            Op::Div(a, b) => {
                self.acc_broadcast(grads, *a, out, g, |i, j| 1.0 / at(*b, i, j));
                self.acc_broadcast(grads, *b, out, g, |i, j| {
                    let y = at(*b, i, j);
                    -at(*a, i, j) / (y * y)
                });
            }
            Op::Min(a, b) => {
                // ties route the gradient to the left operand
                self.acc_broadcast(
                    grads,
                    *a,
                    out,
                    g,
                    |i, j| {
                        if at(*a, i, j) <= at(*b, i, j) {
                            1.0
                        } else {
                            0.0
                        }
                    },
                );
                self.acc_broadcast(
                    grads,
                    *b,
                    out,
                    g,
                    |i, j| {
                        if at(*a, i, j) <= at(*b, i, j) {
                            0.0
                        } else {
                            1.0
                        }
                    },
                );
            }
            Op::Max(a, b) => {
                self.acc_broadcast(
                    grads,
                    *a,
                    out,
                    g,
                    |i, j| {
                        if at(*a, i, j) >= at(*b, i, j) {
                            1.0
                        } else {
                            0.0
                        }
                    },
                );
                self.acc_broadcast(
                    grads,
                    *b,
                    out,
                    g,
                    |i, j| {
                        if at(*a, i, j) >= at(*b, i, j) {
                            0.0
                        } else {
                            1.0
                        }
                    },
                );
            }
            Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    // dA = G * op(B)^T
                    gemm(m, n, k, 1.0, g, false, vb.data(), !trans_b, 1.0, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    if *trans_b {
                        // B is n x k: dB = G^T * A
                        gemm(n, m, k, 1.0, g, true, va.data(), false, 1.0, gb);
                    } else {
                        // dB = A^T * G
                        gemm(k, m, n, 1.0, va.data(), true, g, false, 1.0, gb);
                    }
                }
            }
            Op::Conv { x, w, b, geom, cols } => {
                let patch = geom.kernel * geom.kernel * geom.in_channels;
                let f = geom.filters;
                let batch = val(*x).rows();
                let (oh, ow) = geom.out_hw();
                let positions = batch * oh * ow;
                if let Some(gw) = self.acc(grads, *w) {
                    gemm(patch, positions, f, 1.0, cols, true, g, false, 1.0, gw);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for p in 0..positions {
                        for (d, s) in gb.iter_mut().zip(&g[p * f..(p + 1) * f]) {
                            *d += s;
                        }
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let mut dcols = vec![0.0; positions * patch];
                    gemm(
                        positions,
                        f,
                        patch,
                        1.0,
                        g,
                        false,
                        val(*w).data(),
                        true,
                        0.0,
                        &mut dcols,
                    );
                    let row_len = val(*x).cols();
                    let gx = self.acc(grads, *x).expect("needs grad");
                    for bi in 0..batch {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let src = ((bi * oh + oy) * ow + ox) * patch;
                                let mut o = 0;
                                for ky in 0..geom.kernel {
                                    let iy = oy * geom.stride + ky;
                                    let dst = bi * row_len + (iy * geom.in_w + ox * geom.stride) * geom.in_channels;
                                    let len = geom.kernel * geom.in_channels;
                                    for t in 0..len {
                                        gx[dst + t] += dcols[src + o + t];
                                    }
                                    o += len;
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(a) => self.elementwise(grads, *a, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }, out),
            Op::Tanh(a) => self.elementwise(grads, *a, g, |_, y| 1.0 - y * y, out),
            Op::Exp(a) => self.elementwise(grads, *a, g, |_, y| y, out),
            Op::Log(a) => self.elementwise(grads, *a, g, |x, _| 1.0 / x, out),
            Op::Softplus(a) => self.elementwise(grads, *a, g, |x, _| math::sigmoid(x), out),
            Op::Square(a) => self.elementwise(grads, *a, g, |x, _| 2.0 * x, out),
            Op::Scale(a, s) => {
                let s = *s;
                self.elementwise(grads, *a, g, |_, _| s, out)
            }
            Op::AddScalar(a) => self.elementwise(grads, *a, g, |_, _| 1.0, out),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.elementwise(grads, *a, g, |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 }, out)
            }
            Op::SumAll(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::MeanAll(a) => {
                let n = val(*a).len() as f64;
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::SumRows(a) => {
                let c = val(*a).cols();
                if let Some(d) = self.acc(grads, *a) {
                    for (i, row) in d.chunks_mut(c).enumerate() {
                        row.iter_mut().for_each(|x| *x += g[i]);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..out.rows() {
                        let y = &out.data()[i * c..(i + 1) * c];
                        let gy = &g[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[i * c + j] += y[j] * (gy[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let c = out.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..out.rows() {
                        let y = &out.data()[i * c..(i + 1) * c];
                        let gy = &g[i * c..(i + 1) * c];
                        let s: f64 = gy.iter().sum();
                        for j in 0..c {
                            d[i * c + j] += gy[j] - math::exp(y[j]) * s;
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let v = val(*a);
                let c = v.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..v.rows() {
                        let l = out.data()[i];
                        for j in 0..c {
                            d[i * c + j] += g[i] * math::exp(v.data()[i * c + j] - l);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut off = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if let Some(d) = self.acc(grads, *p) {
                        for i in 0..out.rows() {
                            for j in 0..c {
                                d[i * c + j] += g[i * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::Slice { a, start } => {
                let ac = val(*a).cols();
                let c = out.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..out.rows() {
                        for j in 0..c {
                            d[i * ac + start + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Gather { a, idx } => {
                let c = val(*a).cols();
                if let Some(d) = self.acc(grads, *a) {
                    for (i, &j) in idx.iter().enumerate() {
                        d[i * c + j] += g[i];
                    }
                }
            }
            Op::MixRows { w, comps, k } => {
                let k = *k;
                let (vw, vc) = (val(*w), val(*comps));
                let n = vw.cols();
                let r = vw.rows();
                if let Some(d) = self.acc(grads, *w) {
                    for i in 0..r {
                        let gi = &g[i * k..(i + 1) * k];
                        let cr = vc.row_slice(i);
                        for j in 0..n {
                            d[i * n + j] += gi.iter().zip(&cr[j * k..(j + 1) * k]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *comps) {
                    for i in 0..r {
                        let gi = &g[i * k..(i + 1) * k];
                        for j in 0..n {
                            let wj = vw.data()[i * n + j];
                            for c in 0..k {
                                d[i * n * k + j * k + c] += wj * gi[c];
                            }
                        }
                    }
                }
            }
            Op::StraightThrough { soft } => {
                if let Some(d) = self.acc(grads, *soft) {
                    for (a, b) in d.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
        }
    }

    fn elementwise(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: NodeId,
        g: &[f64],
        df: impl Fn(f64, f64) -> f64,
        out: &TensorBuf,
    ) {
        let x = self.nodes[a.0].value.data();
        let y = out.data();
        self.acc_map(grads, a, x.len(), |i| g[i] * df(x[i], y[i]));
    }
}
