//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value and the ids of its inputs. [`Tape::backward`] then walks
//! the nodes once in reverse, applying each op's backward rule. The tape is
//! rebuilt per forward pass; nothing is retained across passes except the
//! parameter [`Tensor`]s living outside the tape.
//!
//! Values are dense row-major `f64` arrays. Scalars are shape `[1]`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// a[m,k] · b[k,n]
    Matmul {
        a: ValueId,
        b: ValueId,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    /// x[m,n] + bias[n], broadcast over rows
    AddBias {
        x: ValueId,
        bias: ValueId,
    },
    Sub {
        a: ValueId,
        b: ValueId,
    },
    Scale {
        x: ValueId,
        c: f64,
    },
    Abs {
        x: ValueId,
    },
    Gelu {
        x: ValueId,
    },
    SoftmaxRows {
        x: ValueId,
    },
    LayerNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    },
    Concat {
        a: ValueId,
        b: ValueId,
        axis: usize,
    },
    /// columns [start, start+len) of a 2-D value
    SliceCols {
        x: ValueId,
        start: usize,
        len: usize,
    },
    Transpose {
        x: ValueId,
    },
    Reshape {
        x: ValueId,
    },
    MeanAll {
        x: ValueId,
    },
    SumAll {
        x: ValueId,
    },
    /// rows of equal length stacked into [rows.len(), len]
    StackRows {
        rows: Vec<ValueId>,
    },
    /// x[h,w,cin] ⋆ kernel[kh,kw,cin,cout] + bias[cout], zero padding
    Conv2d {
        x: ValueId,
        kernel: ValueId,
        bias: ValueId,
        stride: usize,
        pad: usize,
    },
    /// [h,w,c] -> [c]
    GlobalAvgPool {
        x: ValueId,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> ValueId {
        debug_assert_eq!(numel(&shape), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            needs_grad,
            op,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn node(&self, id: ValueId) -> &Node {
        &self.nodes[id.0]
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.node(id).data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.node(id).shape
    }

    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    pub fn to_tensor(&self, id: ValueId) -> Tensor {
        let n = self.node(id);
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape node is well formed")
    }

    /// Records a copy of `t` as a leaf. Gradients flow into it iff
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> ValueId {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad,
            Op::Leaf,
        )
    }

    /// A leaf that never receives gradients (inputs, labels).
    pub fn constant(&mut self, t: &Tensor) -> ValueId {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn constant_parts(&mut self, shape: Vec<usize>, data: Vec<f64>) -> ValueId {
        self.push(shape, data, false, Op::Leaf)
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (&self.node(a).data, &self.node(b).data);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &da[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &db[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, ng, Op::Matmul { a, b, m, k, n }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(sa, out, ng, Op::Add { a, b }))
    }

    /// `x + bias` with `bias` broadcast across the rows of a 2-D `x`.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let (m, n) = (sx[0], sx[1]);
        let bd = self.node(bias).data.clone();
        let xd = &self.node(x).data;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(xd[i * n + j] + bd[j]);
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(sx, out, ng, Op::AddBias { x, bias }))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "sub",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(sa, out, ng, Op::Sub { a, b }))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let shape = self.shape(x).to_vec();
        let out = self.node(x).data.iter().map(|v| v * c).collect();
        let ng = self.needs(x);
        self.push(shape, out, ng, Op::Scale { x, c })
    }

    pub fn abs(&mut self, x: ValueId) -> ValueId {
        let shape = self.shape(x).to_vec();
        let out = self.node(x).data.iter().map(|v| v.abs()).collect();
        let ng = self.needs(x);
        self.push(shape, out, ng, Op::Abs { x })
    }

    pub fn gelu(&mut self, x: ValueId) -> ValueId {
        let shape = self.shape(x).to_vec();
        let out = self.node(x).data.iter().map(|&v| gelu(v)).collect();
        let ng = self.needs(x);
        self.push(shape, out, ng, Op::Gelu { x })
    }

    /// Row-wise softmax of a 2-D value, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::BadShape {
                op: "softmax_rows",
                expected: vec![0, 0],
                got: shape,
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let xd = &self.node(x).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let ng = self.needs(x);
        Ok(self.push(shape, out, ng, Op::SoftmaxRows { x }))
    }

    /// Per-row normalization over the last axis, then `gamma * xhat + beta`.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<ValueId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(Error::BadShape {
            op: "layer_norm",
            expected: vec![1],
            got: shape.clone(),
        })?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = numel(&shape) / d;
        let gd = self.node(gamma).data.clone();
        let bd = self.node(beta).data.clone();
        let xd = &self.node(x).data;
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (row[j] - mean) * inv_std * gd[j] + bd[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(shape, out, ng, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn concat(&mut self, a: ValueId, b: ValueId, axis: usize) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if axis >= sa.len() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: sa.len(),
            });
        }
        let compatible = sa.len() == sb.len()
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (la, lb) = (sa[axis] * inner, sb[axis] * inner);
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let mut out = Vec::with_capacity(numel(&shape));
        let (da, db) = (&self.node(a).data, &self.node(b).data);
        for o in 0..outer {
            out.extend_from_slice(&da[o * la..(o + 1) * la]);
            out.extend_from_slice(&db[o * lb..(o + 1) * lb]);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, ng, Op::Concat { a, b, axis }))
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(Error::BadShape {
                op: "slice_cols",
                expected: vec![start, len],
                got: s,
            });
        }
        let (m, n) = (s[0], s[1]);
        let xd = &self.node(x).data;
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xd[i * n + start..i * n + start + len]);
        }
        let ng = self.needs(x);
        Ok(self.push(vec![m, len], out, ng, Op::SliceCols { x, start, len }))
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::BadShape {
                op: "transpose",
                expected: vec![0, 0],
                got: s,
            });
        }
        let (m, n) = (s[0], s[1]);
        let xd = &self.node(x).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xd[i * n + j];
            }
        }
        let ng = self.needs(x);
        Ok(self.push(vec![n, m], out, ng, Op::Transpose { x }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        if numel(&shape) != self.node(x).data.len() {
            return Err(Error::BadShape {
                op: "reshape",
                expected: shape,
                got: self.shape(x).to_vec(),
            });
        }
        let out = self.node(x).data.clone();
        let ng = self.needs(x);
        Ok(self.push(shape, out, ng, Op::Reshape { x }))
    }

    pub fn mean_all(&mut self, x: ValueId) -> ValueId {
        let n = self.node(x).data.len();
        let v = self.node(x).data.iter().sum::<f64>() / n as f64;
        let ng = self.needs(x);
        self.push(vec![1], vec![v], ng, Op::MeanAll { x })
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let v = self.node(x).data.iter().sum::<f64>();
        let ng = self.needs(x);
        self.push(vec![1], vec![v], ng, Op::SumAll { x })
    }

    /// Stacks values of equal length into a `[rows, len]` matrix.
    pub fn stack_rows(&mut self, rows: &[ValueId]) -> Result<ValueId> {
        let first = *rows.first().ok_or(Error::EmptyBatch)?;
        let len = self.node(first).data.len();
        let mut out = Vec::with_capacity(rows.len() * len);
        let mut ng = false;
        for &r in rows {
            if self.node(r).data.len() != len {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![len],
                    rhs: self.shape(r).to_vec(),
                });
            }
            out.extend_from_slice(&self.node(r).data);
            ng |= self.needs(r);
        }
        Ok(self.push(
            vec![rows.len(), len],
            out,
            ng,
            Op::StackRows {
                rows: rows.to_vec(),
            },
        ))
    }

    /// 2-D convolution over an `[h, w, cin]` image with an
    /// `[kh, kw, cin, cout]` kernel, zero padding, square stride.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        kernel: ValueId,
        bias: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        if sx.len() != 3 || sk.len() != 4 || sx[2] != sk[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sk,
            });
        }
        let (h, w, cin) = (sx[0], sx[1], sx[2]);
        let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
        if self.shape(bias) != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![cout],
                rhs: self.shape(bias).to_vec(),
            });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
            return Err(Error::Config(format!(
                "conv2d: kernel {kh}x{kw} with pad {pad}, stride {stride} does not fit {h}x{w}"
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let kd = self.node(kernel).data.clone();
        let bd = self.node(bias).data.clone();
        let xd = &self.node(x).data;
        let mut out = vec![0.0; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                let obase = (oy * ow + ox) * cout;
                out[obase..obase + cout].copy_from_slice(&bd);
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xbase = (iy as usize * w + ix as usize) * cin;
                        let kbase = (ky * kw + kx) * cin;
                        for ci in 0..cin {
                            let xv = xd[xbase + ci];
                            let krow = &kd[(kbase + ci) * cout..(kbase + ci + 1) * cout];
                            for (o, &kv) in out[obase..obase + cout].iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        let ng = self.needs(x) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            vec![oh, ow, cout],
            out,
            ng,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    /// Mean over the spatial axes of an `[h, w, c]` value.
    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::BadShape {
                op: "global_avg_pool",
                expected: vec![0, 0, 0],
                got: s,
            });
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let xd = &self.node(x).data;
        let mut out = vec![0.0; c];
        for px in 0..h * w {
            for ci in 0..c {
                out[ci] += xd[px * c + ci];
            }
        }
        let denom = (h * w) as f64;
        for v in &mut out {
            *v /= denom;
        }
        let ng = self.needs(x);
        Ok(self.push(vec![c], out, ng, Op::GlobalAvgPool { x }))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Backpropagates from a scalar loss, filling the `grad` slot of every
    /// node that a differentiable leaf feeds into. Errors on a non-scalar
    /// loss, on a loss detached from all differentiable leaves, and on a
    /// second call to the same tape.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardAlreadyRun);
        }
        let ln = self.node(loss);
        if ln.data.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: ln.shape.clone(),
            });
        }
        if !ln.needs_grad {
            return Err(Error::DetachedLoss);
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.take().unwrap();
            self.apply_backward(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: ValueId, delta: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let n = &mut self.nodes[id.0];
        match &mut n.grad {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => n.grad = Some(delta.to_vec()),
        }
    }

    fn apply_backward(&mut self, i: usize, g: &[f64]) {
        // Ops are matched by value to release the borrow on nodes[i].
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Matmul { a, b, m, k, n } => {
                if self.needs(a) {
                    let mut da = vec![0.0; m * k];
                    let bd = &self.nodes[b.0].data;
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let grow = &g[r * n..(r + 1) * n];
                            da[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; k * n];
                    let ad = &self.nodes[a.0].data;
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    self.accumulate(b, &db);
                }
            }
            &Op::Add { a, b } => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            &Op::AddBias { x, bias } => {
                self.accumulate(x, g);
                if self.needs(bias) {
                    let n = self.nodes[bias.0].data.len();
                    let mut db = vec![0.0; n];
                    for (idx, gv) in g.iter().enumerate() {
                        db[idx % n] += gv;
                    }
                    self.accumulate(bias, &db);
                }
            }
            &Op::Sub { a, b } => {
                self.accumulate(a, g);
                if self.needs(b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.accumulate(b, &neg);
                }
            }
            &Op::Scale { x, c } => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accumulate(x, &dx);
            }
            &Op::Abs { x } => {
                // subgradient at 0 is 0
                let xd = &self.nodes[x.0].data;
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xd)
                    .map(|(gv, &xv)| {
                        if xv > 0.0 {
                            *gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(x, &dx);
            }
            &Op::Gelu { x } => {
                let xd = &self.nodes[x.0].data;
                let dx: Vec<f64> = g.iter().zip(xd).map(|(gv, &xv)| gv * gelu_deriv(xv)).collect();
                self.accumulate(x, &dx);
            }
            &Op::SoftmaxRows { x } => {
                let s = &self.nodes[i].data;
                let n = self.nodes[i].shape[1];
                let m = self.nodes[i].shape[0];
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let srow = &s[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = srow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(x, &dx);
            }
            &Op::LayerNorm { x, gamma, beta, eps } => {
                let d = *self.nodes[i].shape.last().unwrap();
                let rows = self.nodes[i].data.len() / d;
                let xd = &self.nodes[x.0].data;
                let gd = &self.nodes[gamma.0].data;
                let mut dx = vec![0.0; xd.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let row = &xd[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = grow.iter().zip(gd).map(|(gv, gm)| gv * gm).collect();
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        dx[r * d + j] = inv_std / d as f64
                            * (d as f64 * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }
            &Op::Concat { a, b, axis } => {
                let sa = self.nodes[a.0].shape.clone();
                let sb = self.nodes[b.0].shape.clone();
                let outer: usize = sa[..axis].iter().product();
                let inner: usize = sa[axis + 1..].iter().product();
                let (la, lb) = (sa[axis] * inner, sb[axis] * inner);
                let mut da = Vec::with_capacity(outer * la);
                let mut db = Vec::with_capacity(outer * lb);
                for o in 0..outer {
                    let base = o * (la + lb);
                    da.extend_from_slice(&g[base..base + la]);
                    db.extend_from_slice(&g[base + la..base + la + lb]);
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            &Op::SliceCols { x, start, len } => {
                if self.needs(x) {
                    let sx = &self.nodes[x.0].shape;
                    let (m, n) = (sx[0], sx[1]);
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    self.accumulate(x, &dx);
                }
            }
            &Op::Transpose { x } => {
                let (n, m) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let mut dx = vec![0.0; m * n];
                for r in 0..n {
                    for c in 0..m {
                        dx[c * n + r] = g[r * m + c];
                    }
                }
                self.accumulate(x, &dx);
            }
            &Op::Reshape { x } => {
                self.accumulate(x, g);
            }
            &Op::MeanAll { x } => {
                let n = self.nodes[x.0].data.len();
                let dv = g[0] / n as f64;
                let dx = vec![dv; n];
                self.accumulate(x, &dx);
            }
            &Op::SumAll { x } => {
                let n = self.nodes[x.0].data.len();
                let dx = vec![g[0]; n];
                self.accumulate(x, &dx);
            }
            Op::StackRows { rows } => {
                let rows = rows.clone();
                let len = self.nodes[i].shape[1];
                for (r, id) in rows.iter().enumerate() {
                    self.accumulate(*id, &g[r * len..(r + 1) * len]);
                }
            }
            &Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let sx = self.nodes[x.0].shape.clone();
                let sk = self.nodes[kernel.0].shape.clone();
                let (h, w, cin) = (sx[0], sx[1], sx[2]);
                let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
                let (oh, ow) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let need_x = self.needs(x);
                let need_k = self.needs(kernel);
                let mut dx = if need_x { vec![0.0; h * w * cin] } else { vec![] };
                let mut dk = if need_k { vec![0.0; kh * kw * cin * cout] } else { vec![] };
                {
                    let xd = &self.nodes[x.0].data;
                    let kd = &self.nodes[kernel.0].data;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let grow = &g[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xbase = (iy as usize * w + ix as usize) * cin;
                                    let kbase = (ky * kw + kx) * cin;
                                    for ci in 0..cin {
                                        let krow =
                                            &kd[(kbase + ci) * cout..(kbase + ci + 1) * cout];
                                        if need_x {
                                            dx[xbase + ci] += grow
                                                .iter()
                                                .zip(krow)
                                                .map(|(a, b)| a * b)
                                                .sum::<f64>();
                                        }
                                        if need_k {
                                            let xv = xd[xbase + ci];
                                            let drow = &mut dk
                                                [(kbase + ci) * cout..(kbase + ci + 1) * cout];
                                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                                *d += xv * gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    self.accumulate(x, &dx);
                }
                if need_k {
                    self.accumulate(kernel, &dk);
                }
                if self.needs(bias) {
                    let mut db = vec![0.0; cout];
                    for px in 0..oh * ow {
                        for co in 0..cout {
                            db[co] += g[px * cout + co];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            &Op::GlobalAvgPool { x } => {
                if self.needs(x) {
                    let sx = &self.nodes[x.0].shape;
                    let (h, w, c) = (sx[0], sx[1], sx[2]);
                    let denom = (h * w) as f64;
                    let mut dx = vec![0.0; h * w * c];
                    for px in 0..h * w {
                        for ci in 0..c {
                            dx[px * c + ci] = g[ci] / denom;
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
        }
    }
}

/// GELU, tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * A * x * x)
}

/// Binds named parameter tensors onto a tape and remembers their ids so
/// gradients can be read back per parameter after `backward`.
///
/// Binding the same path twice returns the original id, so a batch loop may
/// call a layer's forward once per sample while the parameters are recorded
/// only once.
pub struct Session {
    pub tape: Tape,
    order: Vec<(String, ValueId)>,
    index: HashMap<String, ValueId>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Session {
            tape: Tape::new(),
            order: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn param(&mut self, path: &str, t: &Tensor) -> ValueId {
        if let Some(&id) = self.index.get(path) {
            return id;
        }
        let id = self.tape.leaf(t);
        self.order.push((path.to_string(), id));
        self.index.insert(path.to_string(), id);
        id
    }

    pub fn constant(&mut self, t: &Tensor) -> ValueId {
        self.tape.constant(t)
    }

    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        self.tape.backward(loss)
    }

    pub fn grad_of(&self, path: &str) -> Option<&[f64]> {
        self.index.get(path).and_then(|&id| self.tape.grad(id))
    }

    /// Bound parameters in binding order.
    pub fn bindings(&self) -> impl Iterator<Item = (&str, ValueId)> {
        self.order.iter().map(|(p, id)| (p.as_str(), *id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff_gradients, max_rel_err};

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i = tape.constant(&t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let a = tape.constant(&t2(&[vec![3.0, 4.0], vec![5.0, 6.0]]));
        let ia = tape.matmul(i, a).unwrap();
        let ai = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(ia), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(tape.value(ai), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_computed() {
        let mut tape = Tape::new();
        let a = tape.constant(&t2(&[vec![1.0, 2.0]]));
        let b = tape.constant(&t2(&[vec![3.0], vec![4.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[11.0]);
        assert_eq!(tape.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(vec![2, 3]));
        let b = tape.constant(&Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "got: {err}");
    }

    #[test]
    fn matmul_grads_match_central_differences() {
        let mut rng = crate::rngs::seeded(11);
        let a = Tensor::uniform(vec![4, 5], -2.0, 2.0, &mut rng).with_grad();
        let b = Tensor::uniform(vec![5, 3], -2.0, 2.0, &mut rng).with_grad();
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let ia = tape.leaf(&inputs[0]);
            let ib = tape.leaf(&inputs[1]);
            let c = tape.matmul(ia, ib).unwrap();
            { let s = tape.sum_all(c); tape.value(s)[0] }
        };
        let fd = central_diff_gradients(&f, &[a.clone(), b.clone()], 1e-5);

        let mut tape = Tape::new();
        let ia = tape.leaf(&a);
        let ib = tape.leaf(&b);
        let c = tape.matmul(ia, ib).unwrap();
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
        assert!(max_rel_err(tape.grad(ia).unwrap(), &fd[0]) < 1e-6);
        assert!(max_rel_err(tape.grad(ib).unwrap(), &fd[1]) < 1e-6);
    }

    #[test]
    fn softmax_uniform_and_saturated_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(&t2(&[vec![0.0, 0.0, 0.0], vec![1000.0, 0.0, 0.0]]));
        let s = tape.softmax_rows(x).unwrap();
        let v = tape.value(s);
        for j in 0..3 {
            assert!((v[j] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((v[3] - 1.0).abs() < 1e-12);
        assert!(v[4].abs() < 1e-12 && v[5].abs() < 1e-12);
    }

    #[test]
    fn softmax_jvp_matches_central_differences() {
        let mut rng = crate::rngs::seeded(7);
        let x = Tensor::uniform(vec![3, 4], -2.0, 2.0, &mut rng).with_grad();
        let w = Tensor::uniform(vec![4, 1], -1.0, 1.0, &mut rng);
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let ix = tape.leaf(&inputs[0]);
            let iw = tape.constant(&w);
            let s = tape.softmax_rows(ix).unwrap();
            let p = tape.matmul(s, iw).unwrap();
            { let s = tape.sum_all(p); tape.value(s)[0] }
        };
        let fd = central_diff_gradients(&f, &[x.clone()], 1e-5);

        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let iw = tape.constant(&w);
        let s = tape.softmax_rows(ix).unwrap();
        let p = tape.matmul(s, iw).unwrap();
        let loss = tape.sum_all(p);
        tape.backward(loss).unwrap();
        assert!(max_rel_err(tape.grad(ix).unwrap(), &fd[0]) < 1e-6);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(&t2(&[vec![5.0, 5.0, 5.0, 5.0]]));
        let gamma = tape.constant(&Tensor::filled(vec![4], 1.0));
        let beta = tape.constant(&Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for v in tape.value(y) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_two_point_standardization() {
        let mut tape = Tape::new();
        let x = tape.constant(&t2(&[vec![1.0, 3.0]]));
        let gamma = tape.constant(&Tensor::filled(vec![2], 1.0));
        let beta = tape.constant(&Tensor::zeros(vec![2]));
        let y = tape.layer_norm(x, gamma, beta, 1e-12).unwrap();
        let v = tape.value(y);
        assert!((v[0] + 1.0).abs() < 1e-6);
        assert!((v[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_standardizes_random_rows() {
        let mut rng = crate::rngs::seeded(3);
        let x = Tensor::uniform(vec![2, 8], -2.0, 2.0, &mut rng);
        let mut tape = Tape::new();
        let ix = tape.constant(&x);
        let gamma = tape.constant(&Tensor::filled(vec![8], 1.0));
        let beta = tape.constant(&Tensor::zeros(vec![8]));
        let y = tape.layer_norm(ix, gamma, beta, 1e-12).unwrap();
        let v = tape.value(y);
        for r in 0..2 {
            let row = &v[r * 8..(r + 1) * 8];
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row var {var}");
        }
    }

    #[test]
    fn layer_norm_grads_match_central_differences() {
        let mut rng = crate::rngs::seeded(5);
        let x = Tensor::uniform(vec![3, 6], -2.0, 2.0, &mut rng).with_grad();
        let gamma = Tensor::uniform(vec![6], 0.5, 1.5, &mut rng).with_grad();
        let beta = Tensor::uniform(vec![6], -0.5, 0.5, &mut rng).with_grad();
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let ix = tape.leaf(&inputs[0]);
            let ig = tape.leaf(&inputs[1]);
            let ib = tape.leaf(&inputs[2]);
            let y = tape.layer_norm(ix, ig, ib, 1e-5).unwrap();
            let sq = tape.abs(y);
            { let s = tape.sum_all(sq); tape.value(s)[0] }
        };
        let fd = central_diff_gradients(&f, &[x.clone(), gamma.clone(), beta.clone()], 1e-5);

        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let ig = tape.leaf(&gamma);
        let ib = tape.leaf(&beta);
        let y = tape.layer_norm(ix, ig, ib, 1e-5).unwrap();
        let sq = tape.abs(y);
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert!(max_rel_err(tape.grad(ix).unwrap(), &fd[0]) < 1e-4);
        assert!(max_rel_err(tape.grad(ig).unwrap(), &fd[1]) < 1e-4);
        assert!(max_rel_err(tape.grad(ib).unwrap(), &fd[2]) < 1e-4);
    }

    #[test]
    fn gelu_fixed_points_and_gradient() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-3);

        let x = Tensor::from_vec(vec![0.5]).with_grad();
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let ix = tape.leaf(&inputs[0]);
            let y = tape.gelu(ix);
            { let s = tape.sum_all(y); tape.value(s)[0] }
        };
        let fd = central_diff_gradients(&f, &[x.clone()], 1e-5);
        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let y = tape.gelu(ix);
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert!(max_rel_err(tape.grad(ix).unwrap(), &fd[0]) < 1e-6);
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.constant(&Tensor::from_vec(vec![3.0]));
        let c = tape.concat(a, b, 0).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0]);

        let x = tape.constant(&Tensor::zeros(vec![2, 3]));
        let y = tape.constant(&Tensor::zeros(vec![2, 5]));
        let z = tape.concat(x, y, 1).unwrap();
        assert_eq!(tape.shape(z), &[2, 8]);

        assert!(matches!(
            tape.concat(a, b, 1),
            Err(Error::AxisOutOfRange { .. })
        ));
        assert!(tape.concat(x, a, 0).is_err());
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]).with_grad());
        let b = tape.leaf(&t2(&[vec![5.0], vec![6.0]]).with_grad());
        let c = tape.concat(a, b, 1).unwrap();
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 4]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0; 2]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::uniform(vec![3, 4], -2.0, 2.0, &mut crate::rngs::seeded(1)).with_grad());
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 12]);
    }

    #[test]
    fn backward_of_square_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![1, 1], vec![3.0]).unwrap().with_grad());
        let y = tape.matmul(x, x).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![1.0, 2.0]).with_grad());
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::BackwardAlreadyRun)));

        let mut tape = Tape::new();
        let c = tape.constant(&Tensor::scalar(1.0));
        assert!(matches!(tape.backward(c), Err(Error::DetachedLoss)));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = crate::rngs::seeded(17);
        let x = Tensor::uniform(vec![2, 3], -2.0, 2.0, &mut rng).with_grad();
        let (alpha, beta) = (0.7, -1.3);

        let grad_of = |combine: &dyn Fn(&mut Tape, ValueId, ValueId) -> ValueId| -> Vec<f64> {
            let mut tape = Tape::new();
            let ix = tape.leaf(&x);
            let l1 = tape.sum_all(ix);
            let a = tape.abs(ix);
            let l2 = tape.sum_all(a);
            let loss = combine(&mut tape, l1, l2);
            tape.backward(loss).unwrap();
            tape.grad(ix).unwrap().to_vec()
        };

        let combined = grad_of(&|tape, l1, l2| {
            let s1 = tape.scale(l1, alpha);
            let s2 = tape.scale(l2, beta);
            tape.add(s1, s2).unwrap()
        });
        let g1 = grad_of(&|tape, l1, _| tape.scale(l1, 1.0));
        let g2 = grad_of(&|_, _, l2| l2);
        for i in 0..combined.len() {
            assert!((combined[i] - (alpha * g1[i] + beta * g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_transpose_stack_grads_match_central_differences() {
        let mut rng = crate::rngs::seeded(23);
        let x = Tensor::uniform(vec![3, 5], -2.0, 2.0, &mut rng).with_grad();
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let ix = tape.leaf(&inputs[0]);
            let s = tape.slice_cols(ix, 1, 3).unwrap();
            let t = tape.transpose(s).unwrap();
            let a = tape.abs(t);
            { let s = tape.mean_all(a); tape.value(s)[0] }
        };
        let fd = central_diff_gradients(&f, &[x.clone()], 1e-5);
        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let s = tape.slice_cols(ix, 1, 3).unwrap();
        let t = tape.transpose(s).unwrap();
        let a = tape.abs(t);
        let loss = tape.mean_all(a);
        tape.backward(loss).unwrap();
        assert!(max_rel_err(tape.grad(ix).unwrap(), &fd[0]) < 1e-5);
    }

    #[test]
    fn conv_and_pool_grads_match_central_differences() {
        let mut rng = crate::rngs::seeded(29);
        let x = Tensor::uniform(vec![5, 5, 2], -1.0, 1.0, &mut rng).with_grad();
        let k = Tensor::uniform(vec![3, 3, 2, 3], -0.5, 0.5, &mut rng).with_grad();
        let b = Tensor::uniform(vec![3], -0.1, 0.1, &mut rng).with_grad();
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let ix = tape.leaf(&inputs[0]);
            let ik = tape.leaf(&inputs[1]);
            let ib = tape.leaf(&inputs[2]);
            let c = tape.conv2d(ix, ik, ib, 2, 1).unwrap();
            let g = tape.gelu(c);
            let p = tape.global_avg_pool(g).unwrap();
            { let s = tape.sum_all(p); tape.value(s)[0] }
        };
        let fd = central_diff_gradients(&f, &[x.clone(), k.clone(), b.clone()], 1e-5);
        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let ik = tape.leaf(&k);
        let ib = tape.leaf(&b);
        let c = tape.conv2d(ix, ik, ib, 2, 1).unwrap();
        let g = tape.gelu(c);
        let p = tape.global_avg_pool(g).unwrap();
        let loss = tape.sum_all(p);
        tape.backward(loss).unwrap();
        assert!(max_rel_err(tape.grad(ix).unwrap(), &fd[0]) < 1e-4);
        assert!(max_rel_err(tape.grad(ik).unwrap(), &fd[1]) < 1e-4);
        assert!(max_rel_err(tape.grad(ib).unwrap(), &fd[2]) < 1e-4);
    }

    #[test]
    fn stack_rows_backward_routes_each_row() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap().with_grad());
        let b = tape.leaf(&Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap().with_grad());
        let s = tape.stack_rows(&[a, b]).unwrap();
        assert_eq!(tape.shape(s), &[2, 2]);
        let sc = tape.scale(s, 2.0);
        let loss = tape.sum_all(sc);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[2.0, 2.0]);
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn session_binds_each_path_once() {
        let w = Tensor::from_vec(vec![1.0]).with_grad();
        let mut sess = Session::new();
        let id1 = sess.param("w", &w);
        let id2 = sess.param("w", &w);
        assert_eq!(id1, id2);
        assert_eq!(sess.bindings().count(), 1);
    }
}
