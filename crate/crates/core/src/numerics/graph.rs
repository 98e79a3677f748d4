//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order. Every value is a `rows x cols` matrix;
//! vectors are `1 x n`. Shape mismatches between nodes are programming errors
//! in the model code and panic.

use std::collections::BTreeMap;
use std::ops::Range;

use super::functional::{gelu_grad, layer_norm_row, log_sum_exp, softmax_in_place};
use super::{gelu, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddConstRow(Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Slice {
        src: Var,
        row0: usize,
        col0: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: BTreeMap<String, Vec<T>>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a named parameter; `None` if the loss does not depend on it.
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.params.get(name).map(Vec::as_slice)
    }

    pub fn node(&self, var: Var) -> Option<&[T]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &BTreeMap<String, Vec<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Vec<T>> {
        self.params
    }

    pub fn from_params(params: BTreeMap<String, Vec<T>>) -> Self {
        Gradients {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        self.params.get_mut(name)
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().flatten().all(|v| v.is_finite())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let n = self.node(v);
        assert_eq!((n.rows, n.cols), (1, 1), "scalar() on a non-scalar node");
        n.value[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(rows * cols, value.len(), "constant: shape/data mismatch");
        self.push(rows, cols, value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a named parameter.
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(rows * cols, value.len(), "input: shape/data mismatch");
        self.push(rows, cols, value, Op::Leaf, true)
    }

    /// Registers a named parameter as a differentiable leaf. Repeated calls with
    /// the same name return the same node, so a tensor used twice (tied
    /// weights) accumulates one gradient.
    pub fn param(&mut self, name: &str, tensor: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let (rows, cols) = tensor.rows_cols();
        let v = self.push(rows, cols, tensor.data().to_vec(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// `a[m,k] . b[k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let g = self.grad_flag(&[a, b]);
        self.push(m, n, out, Op::MatMul(a, b), g)
    }

    /// `a[m,k] . b[n,k]^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_bt: inner dimensions {k} vs {k2}");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ai = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ai, &bv[j * k..(j + 1) * k]);
            }
        }
        let g = self.grad_flag(&[a, b]);
        self.push(m, n, out, Op::MatMulBt(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        let g = self.grad_flag(&[a, b]);
        self.push(r, c, out, Op::Add(a, b), g)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        let g = self.grad_flag(&[a, b]);
        self.push(r, c, out, Op::Mul(a, b), g)
    }

    /// Adds a `1 x n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: bias shape");
        let bias = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(bias) {
                *o += b;
            }
        }
        let g = self.grad_flag(&[a, row]);
        self.push(r, c, out, Op::AddRow(a, row), g)
    }

    /// Adds a constant row (e.g. an attention mask bias) to every row.
    pub fn add_const_row(&mut self, a: Var, row: &[T]) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(row.len(), c, "add_const_row: row length");
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(row) {
                *o += b;
            }
        }
        let g = self.grad_flag(&[a]);
        self.push(r, c, out, Op::AddConstRow(a), g)
    }

    /// Elementwise product with a constant of the same shape (dropout masks).
    pub fn mul_const(&mut self, a: Var, factor: Vec<T>) -> Var {
        assert_eq!(self.value(a).len(), factor.len(), "mul_const: shape");
        let out = self
            .value(a)
            .iter()
            .zip(&factor)
            .map(|(&x, &f)| x * f)
            .collect();
        let (r, c) = self.shape(a);
        let g = self.grad_flag(&[a]);
        self.push(r, c, out, Op::MulConst(a, factor), g)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let (r, c) = self.shape(a);
        let g = self.grad_flag(&[a]);
        self.push(r, c, out, Op::Scale(a, s), g)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.shape(a);
        let g = self.grad_flag(&[a]);
        self.push(r, c, out, Op::Gelu(a), g)
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c), "layer_norm: gain shape");
        assert_eq!(self.shape(bias), (1, c), "layer_norm: bias shape");
        let xv = self.value(x);
        let ones = vec![T::one(); c];
        let zeros = vec![T::zero(); c];
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = Vec::with_capacity(r);
        for (row, out) in xv.chunks(c).zip(xhat.chunks_mut(c)) {
            rstd.push(layer_norm_row(row, &ones, &zeros, eps, out));
        }
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut out = xhat.clone();
        for chunk in out.chunks_mut(c) {
            for i in 0..c {
                chunk[i] = chunk[i] * gv[i] + bv[i];
            }
        }
        let g = self.grad_flag(&[x, gain, bias]);
        self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            g,
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let g = self.grad_flag(&[a]);
        self.push(r, c, out, Op::Softmax(a), g)
    }

    /// Rows of `table` picked by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, c) = self.shape(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            assert!(id < rows, "gather: id {id} outside table of {rows} rows");
            out.extend_from_slice(&tv[id * c..(id + 1) * c]);
        }
        let g = self.grad_flag(&[table]);
        self.push(
            ids.len(),
            c,
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            g,
        )
    }

    /// Rectangular block of `src`.
    pub fn slice(&mut self, src: Var, rows: Range<usize>, cols: Range<usize>) -> Var {
        let (r, c) = self.shape(src);
        assert!(rows.end <= r && cols.end <= c, "slice out of bounds");
        let sv = self.value(src);
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            out.extend_from_slice(&sv[i * c + cols.start..i * c + cols.end]);
        }
        let g = self.grad_flag(&[src]);
        self.push(
            rows.len(),
            cols.len(),
            out,
            Op::Slice {
                src,
                row0: rows.start,
                col0: cols.start,
            },
            g,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, r, "concat_cols: row mismatch");
                self.shape(p).1
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let g = self.grad_flag(parts);
        self.push(r, total, out, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            assert_eq!(self.shape(p).1, c, "concat_rows: column mismatch");
            out.extend_from_slice(self.value(p));
            rows += self.shape(p).0;
        }
        let g = self.grad_flag(parts);
        self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn select_rows(&mut self, src: Var, rows: &[usize]) -> Var {
        let (r, c) = self.shape(src);
        let sv = self.value(src);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            assert!(i < r, "select_rows: row {i} outside {r}");
            out.extend_from_slice(&sv[i * c..(i + 1) * c]);
        }
        let g = self.grad_flag(&[src]);
        self.push(rows.len(), c, out, Op::SelectRows(src, rows.to_vec()), g)
    }

    /// Sum of all elements, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let g = self.grad_flag(&[a]);
        self.push(1, 1, vec![s], Op::Sum(a), g)
    }

    /// Mean token-level cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return Err(Error::shape(format!(
                "cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        let lv = self.value(logits);
        if lv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cross_entropy: non-finite logits".into()));
        }
        let mut probs = vec![T::zero(); r * c];
        let mut total = T::zero();
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= c {
                return Err(Error::Index(format!(
                    "cross_entropy: target {t} outside [0, {c})"
                )));
            }
            let row = &lv[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            total += lse - row[t];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let loss = total / T::of(count as f64);
        let g = self.grad_flag(&[logits]);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            g,
        ))
    }

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward: loss must be a 1x1 node"));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dout, &mut grads);
            grads[idx] = Some(dout);
        }

        let params = self
            .params
            .iter()
            .map(|(name, v)| {
                let n = &self.nodes[v.0];
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![T::zero(); n.value.len()]);
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }

    fn propagate(&self, node: &Node<T>, dout: &[T], grads: &mut [Option<Vec<T>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.node(*a).needs_grad {
                    // dA = dC . B^T
                    let bv = self.value(*b);
                    let ga = slot(grads, *a, m * k);
                    for i in 0..m {
                        let dci = &dout[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(dci, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if self.node(*b).needs_grad {
                    // dB = A^T . dC
                    let av = self.value(*a);
                    let gb = slot(grads, *b, k * n);
                    for i in 0..m {
                        let dci = &dout[i * n..(i + 1) * n];
                        for p in 0..k {
                            let s = av[i * k + p];
                            if s == T::zero() {
                                continue;
                            }
                            axpy(s, dci, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.node(*a).needs_grad {
                    // dA = dC . B
                    let bv = self.value(*b);
                    let ga = slot(grads, *a, m * k);
                    matmul_acc(dout, bv, ga, m, n, k);
                }
                if self.node(*b).needs_grad {
                    // dB = dC^T . A
                    let av = self.value(*a);
                    let gb = slot(grads, *b, n * k);
                    for i in 0..m {
                        let ai = &av[i * k..(i + 1) * k];
                        for j in 0..n {
                            let s = dout[i * n + j];
                            if s == T::zero() {
                                continue;
                            }
                            axpy(s, ai, &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.node(*v).needs_grad {
                        let g = slot(grads, *v, dout.len());
                        axpy(T::one(), dout, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.node(*a).needs_grad {
                    let bv = self.value(*b);
                    let g = slot(grads, *a, dout.len());
                    for i in 0..dout.len() {
                        g[i] += dout[i] * bv[i];
                    }
                }
                if self.node(*b).needs_grad {
                    let av = self.value(*a);
                    let g = slot(grads, *b, dout.len());
                    for i in 0..dout.len() {
                        g[i] += dout[i] * av[i];
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.node(*a).needs_grad {
                    axpy(T::one(), dout, slot(grads, *a, dout.len()));
                }
                if self.node(*row).needs_grad {
                    let g = slot(grads, *row, cols);
                    for chunk in dout.chunks(cols) {
                        axpy(T::one(), chunk, g);
                    }
                }
            }
            Op::AddConstRow(a) => {
                if self.node(*a).needs_grad {
                    axpy(T::one(), dout, slot(grads, *a, dout.len()));
                }
            }
            Op::MulConst(a, factor) => {
                if self.node(*a).needs_grad {
                    let g = slot(grads, *a, dout.len());
                    for i in 0..dout.len() {
                        g[i] += dout[i] * factor[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.node(*a).needs_grad {
                    axpy(*s, dout, slot(grads, *a, dout.len()));
                }
            }
            Op::Gelu(a) => {
                if self.node(*a).needs_grad {
                    let av = self.value(*a);
                    let g = slot(grads, *a, dout.len());
                    for i in 0..dout.len() {
                        g[i] += dout[i] * gelu_grad(av[i]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = cols;
                if self.node(*gain).needs_grad {
                    let g = slot(grads, *gain, c);
                    for (dchunk, xchunk) in dout.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            g[j] += dchunk[j] * xchunk[j];
                        }
                    }
                }
                if self.node(*bias).needs_grad {
                    let g = slot(grads, *bias, c);
                    for dchunk in dout.chunks(c) {
                        axpy(T::one(), dchunk, g);
                    }
                }
                if self.node(*x).needs_grad {
                    let gv = self.value(*gain).to_vec();
                    let n = T::of(c as f64);
                    let gx = slot(grads, *x, rows * c);
                    for i in 0..rows {
                        let d = &dout[i * c..(i + 1) * c];
                        let xh = &xhat[i * c..(i + 1) * c];
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..c {
                            let dxh = d[j] * gv[j];
                            sum_d += dxh;
                            sum_dx += dxh * xh[j];
                        }
                        let r = rstd[i];
                        for j in 0..c {
                            let dxh = d[j] * gv[j];
                            gx[i * c + j] += r * (dxh - sum_d / n - xh[j] * sum_dx / n);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if self.node(*a).needs_grad {
                    let y = &node.value;
                    let g = slot(grads, *a, rows * cols);
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let dr = &dout[i * cols..(i + 1) * cols];
                        let s = dot(yr, dr);
                        for j in 0..cols {
                            g[i * cols + j] += yr[j] * (dr[j] - s);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.node(*table).needs_grad {
                    let (tr, c) = self.shape(*table);
                    let g = slot(grads, *table, tr * c);
                    for (i, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &dout[i * c..(i + 1) * c], &mut g[id * c..(id + 1) * c]);
                    }
                }
            }
            Op::Slice { src, row0, col0 } => {
                if self.node(*src).needs_grad {
                    let (sr, sc) = self.shape(*src);
                    let g = slot(grads, *src, sr * sc);
                    for i in 0..rows {
                        let dst = (row0 + i) * sc + col0;
                        axpy(T::one(), &dout[i * cols..(i + 1) * cols], &mut g[dst..dst + cols]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if self.node(p).needs_grad {
                        let g = slot(grads, p, pr * pc);
                        for i in 0..pr {
                            let src = &dout[i * cols + offset..i * cols + offset + pc];
                            axpy(T::one(), src, &mut g[i * pc..(i + 1) * pc]);
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.node(p).value.len();
                    if self.node(p).needs_grad {
                        axpy(T::one(), &dout[offset..offset + len], slot(grads, p, len));
                    }
                    offset += len;
                }
            }
            Op::SelectRows(src, picked) => {
                if self.node(*src).needs_grad {
                    let (sr, c) = self.shape(*src);
                    let g = slot(grads, *src, sr * c);
                    for (i, &r) in picked.iter().enumerate() {
                        axpy(T::one(), &dout[i * c..(i + 1) * c], &mut g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Sum(a) => {
                if self.node(*a).needs_grad {
                    let len = self.node(*a).value.len();
                    let g = slot(grads, *a, len);
                    for v in g.iter_mut() {
                        *v += dout[0];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if self.node(*logits).needs_grad {
                    let (r, c) = self.shape(*logits);
                    let scale = dout[0] / T::of(*count as f64);
                    let g = slot(grads, *logits, r * c);
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..c {
                            g[i * c + j] += probs[i * c + j] * scale;
                        }
                        g[i * c + t] -= scale;
                    }
                }
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c[m,n] += a[m,k] . b[k,n]`
fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            axpy(s, &b[p * n..(p + 1) * n], ci);
        }
    }
}
