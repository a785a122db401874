//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive pushes one node holding its forward value and enough of
//! its inputs to replay the local gradient rule. Nodes are only ever appended,
//! so the tape is topologically ordered by construction and `backward` is a
//! single reverse sweep.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows { m: Var, s: Var },
    Scale { x: Var, alpha: T },
    MulConst { x: Var, c: Vec<T> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Stack(Vec<Var>),
    GatherRows(Vec<(Var, usize)>),
    Embedding { table: Var, ids: Vec<usize> },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Reduce { x: Var, kind: Reduction, axis: Option<usize>, argmax: Vec<usize> },
    PickRows { x: Var, idx: Vec<usize> },
    StraightThrough { soft: Var },
    Reshape(Var),
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
}

/// Recorded computation graph. Parameter leaves may borrow their values for
/// the lifetime `'p` so attaching a large [`super::ParamSet`] copies nothing.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Row/column strides of a stored row-major matrix viewed as `op(X)`.
#[derive(Clone, Copy)]
struct View {
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn of(stored_rows: usize, stored_cols: usize, transposed: bool) -> Self {
        if transposed {
            View {
                rows: stored_cols,
                cols: stored_rows,
                rs: 1,
                cs: stored_cols,
            }
        } else {
            View {
                rows: stored_rows,
                cols: stored_cols,
                rs: stored_cols,
                cs: 1,
            }
        }
    }
}

/// Stored (rows, cols) of a matmul operand; vectors are a row on the left
/// and a column on the right.
fn operand_dims(shape: &[usize], left: bool) -> Option<(usize, usize)> {
    match shape.len() {
        2 => Some((shape[0], shape[1])),
        1 if left => Some((1, shape[0])),
        1 => Some((shape[0], 1)),
        _ => None,
    }
}

fn softmax_rows<T: Real>(x: &[T], cols: usize, log: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        if log {
            let lse = max + sum.ln();
            out.extend(row.iter().map(|&v| v - lse));
        } else {
            out.extend(row.iter().map(|&v| (v - max).exp() / sum));
        }
    }
    out
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf. Named leaves show up in [`Gradients::by_name`].
    pub fn leaf(&mut self, name: Option<&str>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad,
            name: name.map(str::to_owned),
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf borrowing its value.
    pub fn param(&mut self, name: &str, value: &'p Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
            name: Some(name.to_owned()),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(None, value, false)
    }

    // ---------------------------------------------------------------- linear algebra

    /// `op(a) · op(b)` where `op` optionally transposes a matrix operand.
    /// Rank-1 operands act as a row (left) or a column (right) and the
    /// corresponding output axis is dropped.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("matmul", &sa, &sb);
        let (ar, ac) = operand_dims(&sa, true).ok_or_else(bad)?;
        let (br, bc) = operand_dims(&sb, false).ok_or_else(bad)?;
        if (ta && sa.len() != 2) || (tb && sb.len() != 2) {
            return Err(bad());
        }
        let va = View::of(ar, ac, ta);
        let vb = View::of(br, bc, tb);
        if va.cols != vb.rows {
            return Err(bad());
        }
        let (m, k, n) = (va.rows, va.cols, vb.cols);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            va.rs,
            va.cs,
            self.value(b).data(),
            vb.rs,
            vb.cs,
            &mut out,
            false,
        );
        let shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (2, 1) => vec![m],
            (1, 2) => vec![n],
            _ => vec![],
        };
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::MatMul { a, b, ta, tb },
            &[a, b],
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `x · wᵀ + b` with `w` stored `[out, in]`; `x` is `[in]` or `[rows, in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 || sx.is_empty() || sx.len() > 2 || *sx.last().unwrap() != sw[1] {
            return Err(Error::shape("affine", &sx, &sw));
        }
        let (out_dim, in_dim) = (sw[0], sw[1]);
        let rows = if sx.len() == 2 { sx[0] } else { 1 };
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape("affine bias", &sw, self.shape(b)));
            }
        }
        let mut out = vec![T::zero(); rows * out_dim];
        T::gemm(
            rows,
            in_dim,
            out_dim,
            self.value(x).data(),
            in_dim,
            1,
            self.value(w).data(),
            1,
            in_dim,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(out_dim) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o = *o + bv;
                }
            }
        }
        let shape = if sx.len() == 2 {
            vec![rows, out_dim]
        } else {
            vec![out_dim]
        };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Affine { x, w, b }, &inputs))
    }

    // ---------------------------------------------------------------- elementwise

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op_name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies row `i` of matrix `m` by `s[i]`.
    pub fn scale_rows(&mut self, m: Var, s: Var) -> Result<Var> {
        let (tm, ts) = (self.value(m), self.value(s));
        if tm.rank() != 2 || ts.shape() != [tm.shape()[0]] {
            return Err(Error::shape("scale_rows", tm.shape(), ts.shape()));
        }
        let cols = tm.cols();
        let mut data = tm.data().to_vec();
        for (row, &f) in data.chunks_mut(cols).zip(ts.data()) {
            row.iter_mut().for_each(|v| *v = *v * f);
        }
        let shape = tm.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::ScaleRows { m, s }, &[m, s]))
    }

    /// `alpha · x + beta` with constant coefficients.
    pub fn scale(&mut self, x: Var, alpha: T, beta: T) -> Var {
        let value = self.value(x).map(|v| alpha * v + beta);
        self.push(value, Op::Scale { x, alpha }, &[x])
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != c.shape() {
            return Err(Error::shape("mul_const", tx.shape(), c.shape()));
        }
        let data = tx.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let shape = tx.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MulConst {
                x,
                c: c.data().to_vec(),
            },
            &[x],
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return Err(Error::shape("softmax", t.shape(), &[]));
        }
        let data = softmax_rows(t.data(), t.cols(), false);
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(x), &[x]))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return Err(Error::shape("log_softmax", t.shape(), &[]));
        }
        let data = softmax_rows(t.data(), t.cols(), true);
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::LogSoftmax(x), &[x]))
    }

    // ---------------------------------------------------------------- structure

    /// Concatenation along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk: usize = t.shape()[axis..].iter().product();
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, inputs: &[Var]) -> Result<Var> {
        let axis = match inputs.first() {
            Some(&v) => self.shape(v).len().saturating_sub(1),
            None => 0,
        };
        self.concat(inputs, axis)
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::shape("slice", &s, &[axis, start, end]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut shape = s.clone();
        shape[axis] = end - start;
        let t = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner;
            data.extend_from_slice(&t[base + start * inner..base + end * inner]);
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice { x, axis, start },
            &[x],
        ))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if base.len() != 1 {
            return Err(Error::shape("stack", &base, &[]));
        }
        let mut data = Vec::with_capacity(inputs.len() * base[0]);
        for &v in inputs {
            let t = self.value(v);
            if t.shape() != base.as_slice() {
                return Err(Error::shape("stack", &base, t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![inputs.len(), base[0]], data),
            Op::Stack(inputs.to_vec()),
            inputs,
        ))
    }

    /// Builds a matrix whose row `r` is row `sources[r].1` of `sources[r].0`.
    /// Vector sources count as a single row.
    pub fn gather_rows(&mut self, sources: &[(Var, usize)]) -> Result<Var> {
        let &(v0, _) = sources
            .first()
            .ok_or_else(|| Error::invalid("gather_rows with no sources"))?;
        let cols = self.value(v0).cols();
        let mut data = Vec::with_capacity(sources.len() * cols);
        let mut inputs = Vec::with_capacity(sources.len());
        for &(v, r) in sources {
            let t = self.value(v);
            if t.rank() == 0 || t.rank() > 2 || t.cols() != cols || r >= t.rows() {
                return Err(Error::shape("gather_rows", t.shape(), &[r, cols]));
            }
            data.extend_from_slice(t.row(r));
            inputs.push(v);
        }
        inputs.sort_unstable();
        inputs.dedup();
        Ok(self.push(
            Tensor::from_parts(vec![sources.len(), cols], data),
            Op::GatherRows(sources.to_vec()),
            &inputs,
        ))
    }

    /// Embedding lookup: row `ids[i]` of `table` for every id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 || ids.is_empty() {
            return Err(Error::shape("embedding", t.shape(), &[ids.len()]));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::invalid(format!(
                    "embedding id {id} out of range for table with {rows} rows"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), cols], data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    // ---------------------------------------------------------------- reductions

    /// Sum/mean/max along `axis`, or over everything when `axis` is `None`.
    /// Max routes its gradient to the lowest index among ties.
    pub fn reduce(&mut self, x: Var, kind: Reduction, axis: Option<usize>) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape().to_vec();
        let (outer, len, inner, shape) = match axis {
            None => (1, t.len(), 1, vec![]),
            Some(a) if a < s.len() => {
                let mut shape = s.clone();
                shape.remove(a);
                (
                    s[..a].iter().product::<usize>(),
                    s[a],
                    s[a + 1..].iter().product::<usize>(),
                    shape,
                )
            }
            Some(a) => return Err(Error::shape("reduce", &s, &[a])),
        };
        let d = t.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        let n = T::from_usize(len).unwrap();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| d[o * len * inner + j * inner + i];
                match kind {
                    Reduction::Sum | Reduction::Mean => {
                        let mut acc = T::zero();
                        for j in 0..len {
                            acc = acc + at(j);
                        }
                        out.push(if kind == Reduction::Mean { acc / n } else { acc });
                    }
                    Reduction::Max => {
                        let mut best = 0;
                        for j in 1..len {
                            if at(j) > at(best) {
                                best = j;
                            }
                        }
                        argmax.push(best);
                        out.push(at(best));
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Reduce {
                x,
                kind,
                axis,
                argmax,
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, Reduction::Sum, None)
            .expect("full reduction cannot fail")
    }

    /// `x[r, idx[r]]` for every row of a matrix (a vector takes one index
    /// and yields a scalar).
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        let (rows, shape) = match t.rank() {
            2 => (t.shape()[0], vec![t.shape()[0]]),
            1 => (1, vec![]),
            _ => return Err(Error::shape("pick", t.shape(), &[idx.len()])),
        };
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(Error::shape("pick", t.shape(), &[idx.len()]));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| t.data()[r * cols + c])
            .collect();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::PickRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Forward value `hard`, gradient passed straight to `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor<T>) -> Result<Var> {
        if self.shape(soft) != hard.shape() {
            return Err(Error::shape(
                "straight_through",
                self.shape(soft),
                hard.shape(),
            ));
        }
        Ok(self.push(hard, Op::StraightThrough { soft }, &[soft]))
    }

    /// Errors with the offending node if any recorded value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value.is_finite() {
                let what = match &n.name {
                    Some(name) => format!("tape node {i} (`{name}`)"),
                    None => format!("tape node {i} ({:?})", std::mem::discriminant(&n.op)),
                };
                return Err(Error::NonFinite(what));
            }
        }
        Ok(())
    }

    // ---------------------------------------------------------------- backward

    /// Gradients of a scalar output with respect to every leaf that requires
    /// them.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let value = self.value(output);
        if value.len() != 1 {
            return Err(Error::NonScalar(value.shape().to_vec()));
        }
        self.backward_seeded(output, &Tensor::full(value.shape(), T::one()))
    }

    /// Vector-Jacobian product: gradients of `<seed, output>`.
    pub fn backward_seeded(&self, output: Var, seed: &Tensor<T>) -> Result<Gradients<T>> {
        if self.shape(output) != seed.shape() {
            return Err(Error::shape("backward seed", self.shape(output), seed.shape()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(seed.data().to_vec());
        }
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let mut leaves = Vec::new();
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let data = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                leaves.push((
                    Var(i),
                    node.name.clone(),
                    Tensor::from_parts(node.value.shape().to_vec(), data),
                ));
            }
        }
        Ok(Gradients { leaves })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (ar, ac) = operand_dims(sa, true).unwrap();
                let (br, bc) = operand_dims(sb, false).unwrap();
                let va = View::of(ar, ac, ta);
                let vb = View::of(br, bc, tb);
                let (m, k, n) = (va.rows, va.cols, vb.cols);
                let (da, db) = (self.value(a).data(), self.value(b).data());
                if let Some(ga) = self.slot(grads, a) {
                    if ta {
                        T::gemm(k, n, m, db, vb.rs, vb.cs, g, 1, n, ga, true);
                    } else {
                        T::gemm(m, n, k, g, n, 1, db, vb.cs, vb.rs, ga, true);
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    if tb {
                        T::gemm(n, m, k, g, 1, n, da, va.rs, va.cs, gb, true);
                    } else {
                        T::gemm(k, m, n, da, va.cs, va.rs, g, n, 1, gb, true);
                    }
                }
            }
            &Op::Affine { x, w, b } => {
                let tw = self.value(w);
                let (out_dim, in_dim) = (tw.shape()[0], tw.shape()[1]);
                let rows = g.len() / out_dim;
                if let Some(gx) = self.slot(grads, x) {
                    T::gemm(rows, out_dim, in_dim, g, out_dim, 1, tw.data(), in_dim, 1, gx, true);
                }
                let xd = self.value(x).data();
                if let Some(gw) = self.slot(grads, w) {
                    T::gemm(out_dim, rows, in_dim, g, 1, out_dim, xd, in_dim, 1, gw, true);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, b) {
                        for row in g.chunks(out_dim) {
                            for (acc, &v) in gb.iter_mut().zip(row) {
                                *acc = *acc + v;
                            }
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(ga, g, T::one());
                }
                if let Some(gb) = self.slot(grads, b) {
                    axpy(gb, g, T::one());
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(ga, g, T::one());
                }
                if let Some(gb) = self.slot(grads, b) {
                    axpy(gb, g, -T::one());
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if let Some(ga) = self.slot(grads, a) {
                    for ((acc, &gi), &bi) in ga.iter_mut().zip(g).zip(vb) {
                        *acc = *acc + gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((acc, &gi), &ai) in gb.iter_mut().zip(g).zip(va) {
                        *acc = *acc + gi * ai;
                    }
                }
            }
            &Op::ScaleRows { m, s } => {
                let tm = self.value(m);
                let cols = tm.cols();
                let sd = self.value(s).data();
                if let Some(gm) = self.slot(grads, m) {
                    for ((acc_row, g_row), &f) in gm.chunks_mut(cols).zip(g.chunks(cols)).zip(sd) {
                        axpy(acc_row, g_row, f);
                    }
                }
                if let Some(gs) = self.slot(grads, s) {
                    for ((acc, g_row), m_row) in gs.iter_mut().zip(g.chunks(cols)).zip(tm.data().chunks(cols)) {
                        *acc = *acc + dot(g_row, m_row);
                    }
                }
            }
            &Op::Scale { x, alpha } => {
                if let Some(gx) = self.slot(grads, x) {
                    axpy(gx, g, alpha);
                }
            }
            Op::MulConst { x, c } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((acc, &gi), &ci) in gx.iter_mut().zip(g).zip(c) {
                        *acc = *acc + gi * ci;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let out_chunk: usize = out.shape()[*axis..].iter().product();
                let mut offset = 0;
                for &v in inputs {
                    let chunk: usize = self.shape(v)[*axis..].iter().product();
                    if let Some(gv) = self.slot(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * out_chunk + offset..o * out_chunk + offset + chunk];
                            axpy(&mut gv[o * chunk..(o + 1) * chunk], src, T::one());
                        }
                    }
                    offset += chunk;
                }
            }
            &Op::Slice { x, axis, start } => {
                let s = self.shape(x).to_vec();
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let width = out.shape()[axis] * inner;
                if let Some(gx) = self.slot(grads, x) {
                    for o in 0..outer {
                        let base = o * s[axis] * inner + start * inner;
                        axpy(&mut gx[base..base + width], &g[o * width..(o + 1) * width], T::one());
                    }
                }
            }
            Op::Stack(inputs) => {
                let cols = out.cols();
                for (r, &v) in inputs.iter().enumerate() {
                    if let Some(gv) = self.slot(grads, v) {
                        axpy(gv, &g[r * cols..(r + 1) * cols], T::one());
                    }
                }
            }
            Op::GatherRows(sources) => {
                let cols = out.cols();
                for (r, &(v, row)) in sources.iter().enumerate() {
                    if let Some(gv) = self.slot(grads, v) {
                        axpy(&mut gv[row * cols..(row + 1) * cols], &g[r * cols..(r + 1) * cols], T::one());
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let cols = out.cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols], T::one());
                    }
                }
            }
            &Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for ((acc, &gi), &y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *acc = *acc + gi * y * (T::one() - y);
                    }
                }
            }
            &Op::Tanh(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for ((acc, &gi), &y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *acc = *acc + gi * (T::one() - y * y);
                    }
                }
            }
            &Op::Relu(x) => {
                let xd = self.value(x).data();
                if let Some(gx) = self.slot(grads, x) {
                    for ((acc, &gi), &xi) in gx.iter_mut().zip(g).zip(xd) {
                        if xi > T::zero() {
                            *acc = *acc + gi;
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                let cols = out.cols();
                if let Some(gx) = self.slot(grads, x) {
                    for ((acc, g_row), y_row) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let inner = dot(g_row, y_row);
                        for ((a, &gi), &y) in acc.iter_mut().zip(g_row).zip(y_row) {
                            *a = *a + y * (gi - inner);
                        }
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                let cols = out.cols();
                if let Some(gx) = self.slot(grads, x) {
                    for ((acc, g_row), y_row) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let total: T = g_row.iter().copied().sum();
                        for ((a, &gi), &y) in acc.iter_mut().zip(g_row).zip(y_row) {
                            *a = *a + gi - y.exp() * total;
                        }
                    }
                }
            }
            Op::Reduce { x, kind, axis, argmax } => {
                let s = self.shape(*x).to_vec();
                let (outer, len, inner) = match axis {
                    None => (1, s.iter().product(), 1),
                    Some(a) => (
                        s[..*a].iter().product::<usize>(),
                        s[*a],
                        s[*a + 1..].iter().product::<usize>(),
                    ),
                };
                let scale = match kind {
                    Reduction::Mean => T::one() / T::from_usize(len).unwrap(),
                    _ => T::one(),
                };
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let gi = g[o * inner + i] * scale;
                            match kind {
                                Reduction::Max => {
                                    let j = argmax[o * inner + i];
                                    let at = o * len * inner + j * inner + i;
                                    gx[at] = gx[at] + gi;
                                }
                                _ => {
                                    for j in 0..len {
                                        let at = o * len * inner + j * inner + i;
                                        gx[at] = gx[at] + gi;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::PickRows { x, idx } => {
                let cols = self.value(*x).cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, &c) in idx.iter().enumerate() {
                        gx[r * cols + c] = gx[r * cols + c] + g[r];
                    }
                }
            }
            &Op::StraightThrough { soft } => {
                if let Some(gs) = self.slot(grads, soft) {
                    axpy(gs, g, T::one());
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    axpy(gx, g, T::one());
                }
            }
        }
    }
}

fn axpy<T: Real>(acc: &mut [T], x: &[T], alpha: T) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a = *a + alpha * v;
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Leaf gradients produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    leaves: Vec<(Var, Option<String>, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf; untouched leaves that require gradients get zeros,
    /// leaves that do not require them get `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves
            .binary_search_by_key(&v, |(var, _, _)| *var)
            .ok()
            .map(|i| &self.leaves[i].2)
    }

    pub fn by_name(&self) -> BTreeMap<String, Tensor<T>> {
        self.leaves
            .iter()
            .filter_map(|(_, name, g)| name.clone().map(|n| (n, g.clone())))
            .collect()
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor<T>> {
        self.leaves
            .into_iter()
            .filter_map(|(_, name, g)| name.map(|n| (n, g)))
            .collect()
    }
}
