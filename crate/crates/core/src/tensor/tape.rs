//! Wengert-style tape. Every operation appends a node holding its value and
//! the recipe for its vector-Jacobian product; `backward` replays the nodes
//! in reverse creation order, which is a valid topological order.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels::{col2im, gemm, im2col, ConvGeom};
use super::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    /// Position of the node on its tape.
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    MulScalar(usize, usize),
    MatMul(usize, usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        pad: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Sum(usize),
    Mean(usize),
    L1Norm(usize),
    L2Norm(usize),
    ClipStop(usize),
    MaxPool2 {
        input: usize,
        argmax: Vec<usize>,
    },
    Upsample2(usize),
    Reshape(usize),
    ConcatCols(usize, usize),
    GatherRows {
        input: usize,
        index: Vec<usize>,
    },
    LogMeanExp(usize),
    Pick(usize, usize),
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddRow(a, b) | MulScalar(a, b)
            | MatMul(a, b) | ConcatCols(a, b) => vec![*a, *b],
            Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
            Scale(a, _) | Shift(a) | Relu(a) | Sigmoid(a) | Log(a) | Exp(a) | Sum(a) | Mean(a)
            | L1Norm(a) | L2Norm(a) | ClipStop(a) | Upsample2(a) | Reshape(a) | LogMeanExp(a)
            | Pick(a, _) => vec![*a],
            MaxPool2 { input, .. } | GatherRows { input, .. } => vec![*input],
            SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    name: &'static str,
}

/// Recorded computation. Confined to one thread at a time; values of leaf
/// nodes may be shared with the caller through [`Arc`] without copying.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        let index = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name, node: index });
        }
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            name,
        });
        Ok(Var { tape: self.id, index })
    }

    /// Records an input (parameter, constant or differentiable leaf).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_shared(Arc::new(value))
    }

    /// Records an input without copying its data.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            name: "leaf",
        });
        Var { tape: self.id, index }
    }

    /// Current value of a node.
    ///
    /// Panics if `v` was produced by another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.idx(v).expect("variable belongs to a different tape");
        self.val(i)
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        self.idx(v).map(|i| self.val(i))
    }

    fn binary_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::from_parts_unchecked(ta.shape().to_vec(), data);
        self.push(out, op(ia, ib), name)
    }

    fn unary(
        &mut self,
        a: Var,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::from_parts_unchecked(ta.shape().to_vec(), data);
        self.push(out, op(ia), name)
    }

    fn reduce(&mut self, a: Var, name: &'static str, value: f64, op: Op) -> Result<Var> {
        let _ = self.idx(a)?;
        self.push(Tensor::scalar(value), op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "div", |x, y| x / y, Op::Div)
    }

    /// `[n, m] + [m]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let m = tb.len();
        if ta.shape().len() != 2 || ta.shape()[1] != m {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(m) {
            row.iter_mut().zip(tb.data()).for_each(|(x, b)| *x += b);
        }
        let out = Tensor::from_parts_unchecked(ta.shape().to_vec(), data);
        self.push(out, Op::AddRow(ia, ib), "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "scale", |x| x * s, |i| Op::Scale(i, s))
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "shift", |x| x + s, Op::Shift)
    }

    /// Multiplies every element of `a` by the `[1]`-shaped node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = (self.idx(a)?, self.idx(s)?);
        let (ta, ts) = (self.val(ia), self.val(is));
        if ts.len() != 1 {
            return Err(mismatch("mul_scalar", ta, ts));
        }
        let k = ts.item();
        let data = ta.data().iter().map(|x| x * k).collect();
        let out = Tensor::from_parts_unchecked(ta.shape().to_vec(), data);
        self.push(out, Op::MulScalar(ia, is), "mul_scalar")
    }

    /// `[m, k] × [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut c);
        let out = Tensor::from_parts_unchecked(vec![m, n], c);
        self.push(out, Op::MatMul(ia, ib), "matmul")
    }

    /// Stride-1 convolution: input `[N,C,H,W]`, weight `[O,C,KH,KW]`,
    /// bias `[O]`, symmetric zero padding `pad`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, pad: usize) -> Result<Var> {
        let (ix, iw, ib) = (self.idx(input)?, self.idx(weight)?, self.idx(bias)?);
        let (tx, tw, tb) = (self.val(ix), self.val(iw), self.val(ib));
        let (xs, ws) = (tx.shape(), tw.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || tb.len() != ws[0] {
            return Err(mismatch("conv2d", tx, tw));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(mismatch("conv2d", tx, tw));
        }
        let g = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ws[2],
            kw: ws[3],
            pad,
        };
        let (batch, outc) = (xs[0], ws[0]);
        let plane = g.out_h() * g.out_w();
        let img = g.channels * g.height * g.width;
        let mut cols = vec![0.0; g.patch() * plane];
        let mut out = vec![0.0; batch * outc * plane];
        for n in 0..batch {
            im2col(&tx.data()[n * img..(n + 1) * img], &g, &mut cols);
            let dst = &mut out[n * outc * plane..(n + 1) * outc * plane];
            for (o, row) in dst.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = tb.data()[o]);
            }
            gemm(outc, g.patch(), plane, tw.data(), false, &cols, false, 1.0, dst);
        }
        let t = Tensor::from_parts_unchecked(vec![batch, outc, g.out_h(), g.out_w()], out);
        self.push(
            t,
            Op::Conv2d {
                input: ix,
                weight: iw,
                bias: ib,
                pad,
            },
            "conv2d",
        )
    }

    /// ReLU with subgradient 0 at the origin.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", f64::ln, Op::Log)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.try_value(a)?.data().iter().sum();
        let i = self.idx(a)?;
        self.reduce(a, "sum", s, Op::Sum(i))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.try_value(a)?;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let i = self.idx(a)?;
        self.reduce(a, "mean", s, Op::Mean(i))
    }

    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.try_value(a)?.data().iter().map(|x| x.abs()).sum();
        let i = self.idx(a)?;
        self.reduce(a, "l1_norm", s, Op::L1Norm(i))
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.try_value(a)?.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let i = self.idx(a)?;
        self.reduce(a, "l2_norm", s, Op::L2Norm(i))
    }

    /// Clamps values to `[lo, hi]` in the forward pass; gradients flow
    /// through unchanged.
    pub fn clip_stop(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, "clip_stop", |x| x.clamp(lo, hi), Op::ClipStop)
    }

    /// 2×2 max pooling with stride 2 over `[N,C,H,W]`; odd trailing rows and
    /// columns are dropped.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        let s = ta.shape();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(TensorError::InvalidShape(s.to_vec()));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let d = ta.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + 2 * y * w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * y + dy) * w + 2 * x + dx;
                        if d[j] > d[best] {
                            best = j;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::from_parts_unchecked(vec![n, c, oh, ow], out);
        self.push(t, Op::MaxPool2 { input: ia, argmax }, "max_pool2")
    }

    /// Nearest-neighbour 2× upsampling over `[N,C,H,W]`.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        let s = ta.shape();
        if s.len() != 4 {
            return Err(TensorError::InvalidShape(s.to_vec()));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = vec![0.0; n * c * 4 * h * w];
        let d = ta.data();
        for plane in 0..n * c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    out[plane * 4 * h * w + y * 2 * w + x] = d[plane * h * w + (y / 2) * w + x / 2];
                }
            }
        }
        let t = Tensor::from_parts_unchecked(vec![n, c, 2 * h, 2 * w], out);
        self.push(t, Op::Upsample2(ia), "upsample2")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia).clone().reshape(shape.to_vec())?;
        self.push(t, Op::Reshape(ia), "reshape")
    }

    /// Concatenates `[n, p]` and `[n, q]` into `[n, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(mismatch("concat_cols", ta, tb));
        }
        let (n, p, q) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let t = Tensor::from_parts_unchecked(vec![n, p + q], out);
        self.push(t, Op::ConcatCols(ia, ib), "concat_cols")
    }

    /// Row `k` of the output is row `index[k]` of the 2-D input.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        if ta.shape().len() != 2 || index.is_empty() {
            return Err(TensorError::InvalidShape(ta.shape().to_vec()));
        }
        let (m, q) = (ta.shape()[0], ta.shape()[1]);
        let mut out = Vec::with_capacity(index.len() * q);
        for &r in index {
            if r >= m {
                return Err(TensorError::IndexOutOfRange { index: r, len: m });
            }
            out.extend_from_slice(&ta.data()[r * q..(r + 1) * q]);
        }
        let t = Tensor::from_parts_unchecked(vec![index.len(), q], out);
        self.push(
            t,
            Op::GatherRows {
                input: ia,
                index: index.to_vec(),
            },
            "gather_rows",
        )
    }

    /// `ln(mean(exp(a)))` over all elements, evaluated with a max shift.
    pub fn log_mean_exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = log_mean_exp(self.val(ia).data());
        self.reduce(a, "log_mean_exp", v, Op::LogMeanExp(ia))
    }

    /// Element `i` of the flattened input as a `[1]` node.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia);
        if i >= t.len() {
            return Err(TensorError::IndexOutOfRange {
                index: i,
                len: t.len(),
            });
        }
        let v = t.data()[i];
        self.reduce(a, "pick", v, Op::Pick(ia, i))
    }

    /// Mean softmax cross-entropy of `[n, C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let t = self.val(il);
        if t.shape().len() != 2 || t.shape()[0] != labels.len() {
            return Err(TensorError::InvalidShape(t.shape().to_vec()));
        }
        let c = t.shape()[1];
        let mut total = 0.0;
        for (row, &y) in t.data().chunks(c).zip(labels) {
            if y >= c {
                return Err(TensorError::IndexOutOfRange { index: y, len: c });
            }
            total += log_sum_exp(row) - row[y];
        }
        let v = total / labels.len() as f64;
        self.reduce(
            logits,
            "softmax_cross_entropy",
            v,
            Op::SoftmaxCrossEntropy {
                logits: il,
                labels: labels.to_vec(),
            },
        )
    }

    /// Reverse-mode gradients of the `[1]`-shaped `output` with respect to
    /// each of `wanted`. The tape is left untouched, so repeated calls give
    /// identical results. Wanted nodes that do not influence `output` get
    /// zero gradients.
    pub fn backward(&self, output: Var, wanted: &[Var]) -> Result<Vec<Tensor>> {
        let out = self.idx(output)?;
        let out_shape = self.val(out).shape();
        if out_shape != [1] {
            return Err(TensorError::NonScalarOutput(out_shape.to_vec()));
        }
        let wanted_idx = wanted
            .iter()
            .map(|w| self.idx(*w))
            .collect::<Result<Vec<_>>>()?;

        let n = out + 1;
        let mut req = vec![false; self.nodes.len()];
        for &w in &wanted_idx {
            req[w] = true;
        }
        for i in 0..n {
            if !req[i] {
                req[i] = self.nodes[i].op.inputs().iter().any(|&j| req[j]);
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        let mut results: Vec<Option<Vec<f64>>> = vec![None; wanted_idx.len()];
        grads[out] = Some(vec![1.0]);
        for i in (0..n).rev() {
            if !req[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    op: self.nodes[i].name,
                    node: i,
                });
            }
            self.propagate(i, &g, &mut grads, &req);
            for (slot, &w) in results.iter_mut().zip(&wanted_idx) {
                if w == i {
                    *slot = Some(g.clone());
                }
            }
        }

        Ok(wanted_idx
            .iter()
            .zip(results)
            .map(|(&w, g)| {
                let shape = self.val(w).shape().to_vec();
                match g {
                    Some(g) => Tensor::from_parts_unchecked(shape, g),
                    None => Tensor::zeros(shape),
                }
            })
            .collect())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], req: &[bool]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !req[j] {
                return;
            }
            let len = self.nodes[j].value.len();
            let slot = grads[j].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * va[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] / vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] -= g[k] * va[k] / (vb[k] * vb[k]);
                    }
                });
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                let m = self.val(*b).len();
                acc(*b, &mut |s| {
                    for row in g.chunks(m) {
                        add_into(s, row);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += k * g)
            }),
            Op::Shift(a) | Op::ClipStop(a) | Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::MulScalar(a, k) => {
                let va = self.val(*a).data();
                let kv = self.val(*k).item();
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += kv * g));
                acc(*k, &mut |s| s[0] += g.iter().zip(va).map(|(g, a)| g * a).sum::<f64>());
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |s| gemm(m, n, k, g, false, tb.data(), true, 1.0, s));
                acc(*b, &mut |s| gemm(k, m, n, ta.data(), true, g, false, 1.0, s));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => self.conv2d_backward(*input, *weight, *bias, *pad, g, &mut acc),
            Op::Relu(a) => {
                let va = self.val(*a).data();
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        if va[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for k in 0..s.len() {
                    s[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Log(a) => {
                let va = self.val(*a).data();
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] / va[k];
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |s| {
                for k in 0..s.len() {
                    s[k] += g[k] * y[k];
                }
            }),
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(a) => {
                let n = self.val(*a).len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|s| *s += g[0] / n));
            }
            Op::L1Norm(a) => {
                let va = self.val(*a).data();
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        if va[k] > 0.0 {
                            s[k] += g[0];
                        } else if va[k] < 0.0 {
                            s[k] -= g[0];
                        }
                    }
                });
            }
            Op::L2Norm(a) => {
                let va = self.val(*a).data();
                let norm = y[0];
                if norm > 0.0 {
                    acc(*a, &mut |s| {
                        for k in 0..s.len() {
                            s[k] += g[0] * va[k] / norm;
                        }
                    });
                }
            }
            Op::MaxPool2 { input, argmax } => acc(*input, &mut |s| {
                for (o, &j) in argmax.iter().enumerate() {
                    s[j] += g[o];
                }
            }),
            Op::Upsample2(a) => {
                let sh = self.val(*a).shape();
                let (planes, h, w) = (sh[0] * sh[1], sh[2], sh[3]);
                acc(*a, &mut |s| {
                    for p in 0..planes {
                        for yy in 0..2 * h {
                            for xx in 0..2 * w {
                                s[p * h * w + (yy / 2) * w + xx / 2] +=
                                    g[p * 4 * h * w + yy * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (p, q) = (ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |s| {
                    for (r, row) in s.chunks_mut(p).enumerate() {
                        add_into(row, &g[r * (p + q)..r * (p + q) + p]);
                    }
                });
                acc(*b, &mut |s| {
                    for (r, row) in s.chunks_mut(q).enumerate() {
                        add_into(row, &g[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                });
            }
            Op::GatherRows { input, index } => {
                let q = self.val(*input).shape()[1];
                acc(*input, &mut |s| {
                    for (k, &r) in index.iter().enumerate() {
                        add_into(&mut s[r * q..(r + 1) * q], &g[k * q..(k + 1) * q]);
                    }
                });
            }
            Op::LogMeanExp(a) => {
                let va = self.val(*a).data();
                let n = va.len() as f64;
                let lme = y[0];
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[0] * (va[k] - lme).exp() / n;
                    }
                });
            }
            Op::Pick(a, idx) => acc(*a, &mut |s| s[*idx] += g[0]),
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let t = self.val(*logits);
                let c = t.shape()[1];
                let n = labels.len() as f64;
                acc(*logits, &mut |s| {
                    for (r, (row, &lab)) in t.data().chunks(c).zip(labels).enumerate() {
                        let lse = log_sum_exp(row);
                        for j in 0..c {
                            let p = (row[j] - lse).exp();
                            let target = if j == lab { 1.0 } else { 0.0 };
                            s[r * c + j] += g[0] * (p - target) / n;
                        }
                    }
                });
            }
        }
    }

    fn conv2d_backward(
        &self,
        input: usize,
        weight: usize,
        bias: usize,
        pad: usize,
        g: &[f64],
        acc: &mut impl FnMut(usize, &mut dyn FnMut(&mut [f64])),
    ) {
        let (tx, tw) = (self.val(input), self.val(weight));
        let (xs, ws) = (tx.shape(), tw.shape());
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ws[2],
            kw: ws[3],
            pad,
        };
        let (batch, outc) = (xs[0], ws[0]);
        let plane = geom.out_h() * geom.out_w();
        let img = geom.channels * geom.height * geom.width;
        let patch = geom.patch();

        acc(bias, &mut |s| {
            for n in 0..batch {
                for o in 0..outc {
                    let base = (n * outc + o) * plane;
                    s[o] += g[base..base + plane].iter().sum::<f64>();
                }
            }
        });
        let mut cols = vec![0.0; patch * plane];
        acc(weight, &mut |s| {
            for n in 0..batch {
                im2col(&tx.data()[n * img..(n + 1) * img], &geom, &mut cols);
                let gn = &g[n * outc * plane..(n + 1) * outc * plane];
                gemm(outc, plane, patch, gn, false, &cols, true, 1.0, s);
            }
        });
        acc(input, &mut |s| {
            for n in 0..batch {
                let gn = &g[n * outc * plane..(n + 1) * outc * plane];
                gemm(patch, outc, plane, tw.data(), true, gn, false, 0.0, &mut cols);
                col2im(&cols, &geom, &mut s[n * img..(n + 1) * img]);
            }
        });
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Max-shifted `ln(mean(exp(v)))`.
pub(crate) fn log_mean_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - (v.len() as f64).ln()
}
