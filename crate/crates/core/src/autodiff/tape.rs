//! Reverse-mode tape.
//!
//! Every primitive evaluates eagerly and appends one node holding its value and
//! the parent references needed by its vector-Jacobian product. Node indices are
//! allocated in push order, so the node list is always topologically sorted and
//! `backward` is a single reverse sweep.

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv1d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        cols: Vec<T>,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    Mse(Var, Var),
    Sum(Var),
    Transpose(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    StopGradient,
    RowNormalize {
        x: Var,
        norms: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf. `None` for nodes that do not require gradients or are
    /// not leaves.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

fn dims2<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::InvalidArgument(format!(
            "{op}: expected a 2-D tensor, got shape {s:?}"
        ))),
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = match &op {
            Op::Leaf | Op::StopGradient => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::Scale(x, _)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Sum(x)
            | Op::Transpose(x)
            | Op::Slice { x, .. }
            | Op::RowNormalize { x, .. } => self.requires_grad(*x),
            Op::LayerNorm { x, gamma, beta, .. } => {
                self.requires_grad(*x) || self.requires_grad(*gamma) || self.requires_grad(*beta)
            }
            Op::Conv1d { x, weight, bias, .. } => {
                self.requires_grad(*x)
                    || self.requires_grad(*weight)
                    || bias.is_some_and(|b| self.requires_grad(b))
            }
            Op::GatherRows { table, .. } => self.requires_grad(*table),
            Op::Concat { parts, .. } => parts.iter().any(|p| self.requires_grad(*p)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input. Parameters use `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        let v = self.push("leaf", value, Op::Leaf)?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2(ta, "matmul")?;
        let (k2, n) = dims2(tb, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), &mut out, false);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(x);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Adds a rank-1 bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rank() != 1 || tb.numel() != tx.cols() {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let c = tb.numel();
        let b = tb.data();
        let data = tx.data().iter().enumerate().map(|(i, &v)| v + b[i % c]).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let out = self.map(x, |v| v * c);
        self.push("scale", out, Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, T::tanh);
        self.push("tanh", out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, |v| v.max(T::zero()));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, T::exp);
        self.push("exp", out, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, T::ln);
        self.push("log", out, Op::Log(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("log_softmax", out, Op::LogSoftmax(x))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.cols();
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let n = T::of(c as f64);
        let eps = T::of(LN_EPS);
        let rows = tx.numel() / c;
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), out);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// 1-D convolution over a `[length, in_channels]` sequence with a
    /// `[kernel, in_channels, out_channels]` weight and zero padding.
    pub fn conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(weight));
        let (len, cin) = dims2(tx, "conv1d")?;
        let &[kernel, wcin, cout] = tw.shape() else {
            return Err(Error::shape("conv1d", tx.shape(), tw.shape()));
        };
        if wcin != cin {
            return Err(Error::shape("conv1d", tx.shape(), tw.shape()));
        }
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.shape() != [cout] {
                return Err(Error::shape("conv1d", tw.shape(), tb.shape()));
            }
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d: stride must be >= 1".into()));
        }
        if len + 2 * padding < kernel {
            return Err(Error::InvalidArgument(format!(
                "conv1d: input length {len} with padding {padding} shorter than kernel {kernel}"
            )));
        }
        let l_out = (len + 2 * padding - kernel) / stride + 1;
        let width = kernel * cin;
        let mut cols = vec![T::zero(); l_out * width];
        for t in 0..l_out {
            for k in 0..kernel {
                let src = (t * stride + k) as isize - padding as isize;
                if src < 0 || src as usize >= len {
                    continue;
                }
                let src = src as usize;
                let dst = t * width + k * cin;
                cols[dst..dst + cin].copy_from_slice(&tx.data()[src * cin..(src + 1) * cin]);
            }
        }
        let mut out = vec![T::zero(); l_out * cout];
        T::gemm(
            l_out,
            width,
            cout,
            &cols,
            (width as isize, 1),
            tw.data(),
            (cout as isize, 1),
            &mut out,
            false,
        );
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
            }
        }
        let out = Tensor::from_parts(vec![l_out, cout], out);
        self.push(
            "conv1d",
            out,
            Op::Conv1d {
                x,
                weight,
                bias,
                stride,
                padding,
                cols,
            },
        )
    }

    /// Row gather; this is both embedding lookup and length regulation.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (rows, c) = dims2(tt, "gather_rows")?;
        if indices.is_empty() {
            return Err(Error::InvalidArgument("gather_rows: no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= rows {
                return Err(Error::OutOfRange {
                    what: "gather_rows table",
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::from_parts(vec![indices.len(), c], data);
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mse", ta, tb)?;
        let n = T::of(ta.numel() as f64);
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>();
        self.push("mse", Tensor::scalar(s / n), Op::Mse(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = dims2(t, "transpose")?;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        self.push("transpose", Tensor::from_parts(vec![c, r], data), Op::Transpose(x))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat: no inputs".into()))?;
        let (r0, c0) = dims2(self.value(first), "concat")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims2(self.value(p), "concat")?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => return Err(Error::InvalidArgument(format!("concat: axis {axis} on 2-D tensors"))),
            };
            if !ok {
                return Err(Error::shape("concat", self.value(first).shape(), self.value(p).shape()));
            }
            total += if axis == 0 { r } else { c };
        }
        let out = if axis == 0 {
            let data = parts.iter().flat_map(|&p| self.value(p).data().iter().copied()).collect();
            Tensor::from_parts(vec![total, c0], data)
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(i));
                }
            }
            Tensor::from_parts(vec![r0, total], data)
        };
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Half-open range `[start, end)` along `axis` of a 2-D tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = dims2(t, "slice")?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(Error::InvalidArgument(format!("slice: axis {axis} on 2-D tensor"))),
        };
        if start >= end || end > extent {
            return Err(Error::InvalidArgument(format!(
                "slice: range {start}..{end} invalid for extent {extent}"
            )));
        }
        let out = if axis == 0 {
            Tensor::from_parts(vec![end - start, c], t.data()[start * c..end * c].to_vec())
        } else {
            let w = end - start;
            let mut data = Vec::with_capacity(r * w);
            for i in 0..r {
                data.extend_from_slice(&t.row(i)[start..end]);
            }
            Tensor::from_parts(vec![r, w], data)
        };
        self.push("slice", out, Op::Slice { x, axis, start })
    }

    /// Identity in the forward pass; blocks all gradient flow backward.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).clone();
        self.push("stop_gradient", out, Op::StopGradient)
    }

    /// Scales every row to unit L2 norm.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let eps = T::of(NORM_EPS);
        let mut norms = Vec::with_capacity(t.numel() / c);
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(c) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            norms.push(n);
            data.extend(row.iter().map(|&v| v / n));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("row_normalize", out, Op::RowNormalize { x, norms })
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(Tensor::from_parts(
                    node.value.shape().to_vec(),
                    g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]),
                )),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                acc(*a, &mut |da| {
                    T::gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), da, true)
                });
                acc(*b, &mut |db| {
                    T::gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), db, true)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                acc(*b, &mut |d| {
                    let c = d.len();
                    for row in g.chunks(c) {
                        d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * tb[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * ta[i];
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c)),
            Op::Tanh(x) => acc(*x, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * (T::one() - y[i] * y[i]);
                }
            }),
            Op::Relu(x) => acc(*x, &mut |d| {
                for i in 0..d.len() {
                    if y[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }),
            Op::Exp(x) => acc(*x, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            }),
            Op::Log(x) => {
                let tx = self.value(*x).data();
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / tx[i];
                    }
                })
            }
            Op::Softmax(x) => acc(*x, &mut |d| {
                let c = node.value.cols();
                for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                    let dot = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum::<T>();
                    for j in 0..c {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }),
            Op::LogSoftmax(x) => acc(*x, &mut |d| {
                let c = node.value.cols();
                for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                    let total = grow.iter().copied().sum::<T>();
                    for j in 0..c {
                        drow[j] += grow[j] - yrow[j].exp() * total;
                    }
                }
            }),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = node.value.cols();
                let gam = self.value(*gamma).data();
                acc(*x, &mut |d| {
                    let n = T::of(c as f64);
                    for (r, ((drow, grow), hrow)) in
                        d.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).enumerate()
                    {
                        let mut sum_g = T::zero();
                        let mut sum_gh = T::zero();
                        for j in 0..c {
                            let gg = grow[j] * gam[j];
                            sum_g += gg;
                            sum_gh += gg * hrow[j];
                        }
                        let k = rstd[r] / n;
                        for j in 0..c {
                            let gg = grow[j] * gam[j];
                            drow[j] += k * (n * gg - sum_g - hrow[j] * sum_gh);
                        }
                    }
                });
                acc(*gamma, &mut |d| {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            d[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*beta, &mut |d| {
                    for grow in g.chunks(c) {
                        d.iter_mut().zip(grow).for_each(|(d, &g)| *d += g);
                    }
                });
            }
            Op::Conv1d {
                x,
                weight,
                bias,
                stride,
                padding,
                cols,
            } => {
                let tw = self.value(*weight);
                let (kernel, cin, cout) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
                let len = self.value(*x).shape()[0];
                let l_out = node.value.shape()[0];
                let width = kernel * cin;
                acc(*weight, &mut |dw| {
                    T::gemm(width, l_out, cout, cols, (1, width as isize), g, (cout as isize, 1), dw, true)
                });
                if let Some(b) = bias {
                    acc(*b, &mut |db| {
                        for row in g.chunks(cout) {
                            db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                    });
                }
                if self.nodes[x.0].requires_grad {
                    let mut dcols = vec![T::zero(); l_out * width];
                    T::gemm(
                        l_out,
                        cout,
                        width,
                        g,
                        (cout as isize, 1),
                        tw.data(),
                        (1, cout as isize),
                        &mut dcols,
                        false,
                    );
                    acc(*x, &mut |dx| {
                        for t in 0..l_out {
                            for k in 0..kernel {
                                let src = (t * stride + k) as isize - *padding as isize;
                                if src < 0 || src as usize >= len {
                                    continue;
                                }
                                let src = src as usize;
                                let from = &dcols[t * width + k * cin..t * width + (k + 1) * cin];
                                dx[src * cin..(src + 1) * cin]
                                    .iter_mut()
                                    .zip(from)
                                    .for_each(|(d, &v)| *d += v);
                            }
                        }
                    });
                }
            }
            Op::GatherRows { table, indices } => acc(*table, &mut |d| {
                let c = node.value.cols();
                for (r, &i) in indices.iter().enumerate() {
                    d[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[r * c..(r + 1) * c])
                        .for_each(|(d, &g)| *d += g);
                }
            }),
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let k = T::of(2.0) * g[0] / T::of(ta.len() as f64);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += k * (ta[i] - tb[i]);
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] -= k * (ta[i] - tb[i]);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Transpose(x) => acc(*x, &mut |d| {
                let (c, r) = (node.value.shape()[0], node.value.shape()[1]);
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            }),
            Op::Concat { parts, axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = (self.value(p).shape()[0], self.value(p).shape()[1]);
                    if *axis == 0 {
                        let src = &g[offset * pc..(offset + pr) * pc];
                        acc(p, &mut |d| d.iter_mut().zip(src).for_each(|(d, &g)| *d += g));
                        offset += pr;
                    } else {
                        acc(p, &mut |d| {
                            for i in 0..pr {
                                let src = &g[i * total_cols + offset..i * total_cols + offset + pc];
                                d[i * pc..(i + 1) * pc]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, &g)| *d += g);
                            }
                        });
                        offset += pc;
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let (sr, sc) = (node.value.shape()[0], node.value.shape()[1]);
                let xc = self.value(*x).shape()[1];
                acc(*x, &mut |d| {
                    if *axis == 0 {
                        d[start * xc..(start + sr) * xc]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, &g)| *d += g);
                    } else {
                        for i in 0..sr {
                            d[i * xc + start..i * xc + start + sc]
                                .iter_mut()
                                .zip(&g[i * sc..(i + 1) * sc])
                                .for_each(|(d, &g)| *d += g);
                        }
                    }
                });
            }
            Op::RowNormalize { x, norms } => acc(*x, &mut |d| {
                let c = node.value.cols();
                for (r, ((drow, grow), yrow)) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)).enumerate() {
                    let dot = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum::<T>();
                    for j in 0..c {
                        drow[j] += (grow[j] - yrow[j] * dot) / norms[r];
                    }
                }
            }),
        }
    }
}
