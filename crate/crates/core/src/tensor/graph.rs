//! Tape-based reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints into
//! the leaves that require gradients. Parameters are borrowed from a
//! [`ParameterStore`] without copying; their gradients are handed back with
//! [`Graph::into_param_grads`].

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::dense::{Tensor, TensorError, TensorResult};
use super::store::{ParamGrads, ParameterStore};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p> {
    Owned(Vec<f64>),
    Borrowed(&'p [f64]),
}

impl Value<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeafKind {
    Constant,
    Variable,
    Param,
}

enum Op {
    Leaf(LeafKind),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    ScaleShift(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    LogClamped(Var, f64),
    Sum(Var),
    RowSums(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Gather {
        table: Var,
        ids: Vec<usize>,
        freeze_padding: bool,
    },
    Reparam {
        mean: Var,
        sigma: Var,
        eps: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
}

struct Node<'p> {
    rows: usize,
    cols: usize,
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    param: Option<String>,
}

/// Recorded computation. Confined to one thread; borrows the parameter
/// store for its lifetime.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<(*const ParameterStore, String), Var>,
}

fn dim_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::Dimension {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        let requires_grad = match &op {
            Op::Leaf(kind) => *kind != LeafKind::Constant,
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::Mul(a, b) => self.rg(*a) || self.rg(*b),
            Op::ScaleShift(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::LogClamped(a, _)
            | Op::Sum(a)
            | Op::RowSums(a)
            | Op::Softmax(a)
            | Op::SliceCols(a, _) => self.rg(*a),
            Op::Concat(parts) => parts.iter().any(|p| self.rg(*p)),
            Op::Gather { table, .. } => self.rg(*table),
            Op::Reparam { mean, sigma, .. } => self.rg(*mean) || self.rg(*sigma),
            Op::LayerNorm { x, .. } => self.rg(*x),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(value),
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, tensor: &Tensor, kind: LeafKind) -> TensorResult<Var> {
        let (m, n) = tensor.dims2()?;
        Ok(self.push(m, n, tensor.values().to_vec(), Op::Leaf(kind)))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: &Tensor) -> TensorResult<Var> {
        self.leaf(tensor, LeafKind::Constant)
    }

    pub fn constant_from(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> TensorResult<Var> {
        if rows * cols != values.len() || rows == 0 || cols == 0 {
            return Err(dim_err("constant", (rows, cols), (values.len(), 1)));
        }
        Ok(self.push(rows, cols, values, Op::Leaf(LeafKind::Constant)))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(1, 1, vec![value], Op::Leaf(LeafKind::Constant))
    }

    /// A free leaf whose gradient is kept on the graph (see [`Graph::grad`]).
    pub fn variable(&mut self, tensor: &Tensor) -> TensorResult<Var> {
        self.leaf(tensor, LeafKind::Variable)
    }

    /// Borrows a named parameter from the store as a differentiable leaf.
    /// Repeated requests for the same parameter return the same node.
    pub fn param(&mut self, store: &'p ParameterStore, name: &str) -> TensorResult<Var> {
        let key = (store as *const ParameterStore, name.to_string());
        if let Some(&v) = self.params.get(&key) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let (rows, cols) = t.dims2()?;
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Borrowed(t.values()),
            op: Op::Leaf(LeafKind::Param),
            requires_grad: true,
            grad: None,
            param: Some(name.to_string()),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        Ok(v)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let (m, n) = self.shape(v);
        Tensor::new(vec![m, n], self.value(v).to_vec()).expect("node shapes are consistent")
    }

    /// Accumulated gradient of a leaf, if it has received one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(vec![node.rows, node.cols], g.clone()).expect("consistent"))
    }

    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.value.as_slice().iter().all(|x| x.is_finite())
                && n.grad
                    .as_ref()
                    .is_none_or(|g| g.iter().all(|x| x.is_finite()))
        })
    }

    // ---- operations ----

    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(dim_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(dim_err("matmul_t", (m, k), (n, k2)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMulT(a, b)))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> TensorResult<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb || sb == (1, 1) {
            Ok(sa)
        } else if sa == (1, 1) {
            Ok(sb)
        } else {
            Err(dim_err(op, sa, sb))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let va = self.value(a);
        let vb = self.value(b);
        match (va.len(), vb.len()) {
            (x, y) if x == y => va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect(),
            (_, 1) => va.iter().map(|x| f(*x, vb[0])).collect(),
            _ => vb.iter().map(|y| f(va[0], *y)).collect(),
        }
    }

    /// Elementwise sum; either side may be a 1×1 scalar.
    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (m, n) = self.broadcast_check("add", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.push(m, n, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Elementwise (Hadamard) product; either side may be a 1×1 scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (m, n) = self.broadcast_check("mul", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.push(m, n, out, Op::Mul(a, b)))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> TensorResult<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(dim_err("add_row", (m, n), self.shape(row)));
        }
        let r = self.value(row);
        let out: Vec<f64> = self
            .value(a)
            .chunks(n)
            .flat_map(|x| x.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(m, n, out, Op::AddRow(a, row)))
    }

    /// Scales every row of an `m×n` matrix elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> TensorResult<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(dim_err("mul_row", (m, n), self.shape(row)));
        }
        let r = self.value(row);
        let out: Vec<f64> = self
            .value(a)
            .chunks(n)
            .flat_map(|x| x.iter().zip(r).map(|(x, y)| x * y))
            .collect();
        Ok(self.push(m, n, out, Op::MulRow(a, row)))
    }

    /// `a · factor + shift` with constant coefficients.
    pub fn scale_shift(&mut self, a: Var, factor: f64, shift: f64) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * factor + shift).collect();
        self.push(m, n, out, Op::ScaleShift(a, factor))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.scale_shift(a, factor, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push(m, n, out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(m, n, out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(m, n, out, Op::Exp(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.max(floor).ln()).collect();
        self.push(m, n, out, Op::LogClamped(a, floor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Sums along the last dimension: `m×n -> m×1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).chunks(n).map(|r| r.iter().sum()).collect();
        self.push(m, 1, out, Op::RowSums(a))
    }

    /// Row-wise dot products of two equally shaped matrices: `m×n, m×n -> m×1`.
    pub fn row_dots(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("row_dots", self.shape(a), self.shape(b)));
        }
        let p = self.mul(a, b)?;
        Ok(self.row_sums(p))
    }

    /// Numerically stable row softmax. `mask[i*n + j] == false` removes an
    /// entry (output exactly 0). A row with no unmasked entry is an error.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> TensorResult<Var> {
        self.softmax_impl(x, mask, false)
    }

    /// As [`Graph::softmax_rows`] but a fully masked row yields all zeros.
    pub fn softmax_rows_or_zero(&mut self, x: Var, mask: Option<&[bool]>) -> TensorResult<Var> {
        self.softmax_impl(x, mask, true)
    }

    fn softmax_impl(
        &mut self,
        x: Var,
        mask: Option<&[bool]>,
        allow_empty: bool,
    ) -> TensorResult<Var> {
        let (m, n) = self.shape(x);
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(dim_err("softmax_rows", (m, n), (mask.len(), 1)));
            }
        }
        let keep = |i: usize| mask.is_none_or(|mk| mk[i]);
        let xv = self.value(x);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let max = (0..n)
                .filter(|&j| keep(r * n + j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                if allow_empty {
                    continue;
                }
                return Err(TensorError::DegenerateRow { row: r });
            }
            let o = &mut out[r * n..(r + 1) * n];
            let mut z = 0.0;
            for j in 0..n {
                if keep(r * n + j) {
                    o[j] = (row[j] - max).exp();
                    z += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.push(m, n, out, Op::Softmax(x)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> TensorResult<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Contract("concat of zero tensors".into()));
        };
        let m = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != m {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let w = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(m, total, out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> TensorResult<Var> {
        let (m, n) = self.shape(x);
        if width == 0 || start + width > n {
            return Err(dim_err("slice_cols", (m, n), (start, width)));
        }
        let out: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|r| r[start..start + width].iter().copied())
            .collect();
        Ok(self.push(m, width, out, Op::SliceCols(x, start)))
    }

    pub fn split_cols(&mut self, x: Var, sizes: &[usize]) -> TensorResult<Vec<Var>> {
        let (m, n) = self.shape(x);
        if sizes.iter().sum::<usize>() != n {
            return Err(TensorError::Dimension {
                op: "split_cols",
                left: vec![m, n],
                right: sizes.to_vec(),
            });
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &w in sizes {
            out.push(self.slice_cols(x, start, w)?);
            start += w;
        }
        Ok(out)
    }

    fn gather(&mut self, table: Var, ids: &[usize], freeze_padding: bool) -> TensorResult<Var> {
        let (v, d) = self.shape(table);
        if ids.is_empty() {
            return Err(TensorError::Contract("gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(TensorError::Index { id: bad, len: v });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            ids.len(),
            d,
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                freeze_padding,
            },
        ))
    }

    /// Embedding row gather. Row 0 is the padding row and never receives
    /// gradient.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> TensorResult<Var> {
        self.gather(table, ids, true)
    }

    /// Plain row gather with full gradient routing.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> TensorResult<Var> {
        self.gather(x, rows, false)
    }

    /// `mean + sigma · ε` with ε ~ N(0, 1) i.i.d. per entry.
    pub fn gaussian_reparam<R: Rng + ?Sized>(
        &mut self,
        mean: Var,
        sigma: Var,
        rng: &mut R,
    ) -> TensorResult<Var> {
        let (m, n) = self.shape(mean);
        let eps: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
        self.reparam_with_noise(mean, sigma, eps)
    }

    /// Reparameterized sample with caller-supplied standard-normal noise.
    pub fn reparam_with_noise(
        &mut self,
        mean: Var,
        sigma: Var,
        eps: Vec<f64>,
    ) -> TensorResult<Var> {
        let (m, n) = self.shape(mean);
        if self.shape(sigma) != (1, 1) {
            return Err(dim_err("gaussian_reparam", (m, n), self.shape(sigma)));
        }
        if eps.len() != m * n {
            return Err(dim_err("gaussian_reparam", (m, n), (eps.len(), 1)));
        }
        let s = self.scalar_value(sigma);
        if s.is_nan() || s < 0.0 {
            return Err(TensorError::Domain(format!("sigma must be >= 0, got {s}")));
        }
        let out = self
            .value(mean)
            .iter()
            .zip(&eps)
            .map(|(mu, e)| mu + s * e)
            .collect();
        Ok(self.push(m, n, out, Op::Reparam { mean, sigma, eps }))
    }

    /// Normalizes each row to zero mean and unit variance.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let (m, n) = self.shape(x);
        let mut out = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for r in self.value(x).chunks(n) {
            let mean = r.iter().sum::<f64>() / n as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            out.extend(r.iter().map(|v| (v - mean) * is));
            inv_std.push(is);
        }
        self.push(m, n, out, Op::LayerNorm { x, inv_std })
    }

    // ---- reverse pass ----

    /// Accumulates `d loss / d leaf` into every leaf that requires a gradient
    /// and is reachable from `loss`. Calling it twice doubles the gradients.
    pub fn backward(&mut self, loss: Var) -> TensorResult<()> {
        if self.shape(loss) != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf(_) = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => add_into(acc, &g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (m, n) = (node.rows, node.cols);
        let mut send = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].rows * self.nodes[v.0].cols;
            let buf = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let k = self.nodes[a.0].cols;
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, &|buf| gemm_nt(g, vb, buf, m, n, k));
                send(*b, &|buf| gemm_tn(va, g, buf, m, k, n));
            }
            Op::MatMulT(a, b) => {
                // c = a bᵀ, a: m×k, b: n×k
                let k = self.nodes[a.0].cols;
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, &|buf| gemm_nn(g, vb, buf, m, n, k));
                send(*b, &|buf| gemm_tn(g, va, buf, m, n, k));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    send(v, &|buf| {
                        if buf.len() == g.len() {
                            add_into(buf, g);
                        } else {
                            buf[0] += g.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    let ov = self.value(other);
                    send(v, &|buf| {
                        if buf.len() == g.len() {
                            if ov.len() == g.len() {
                                buf.iter_mut()
                                    .zip(g)
                                    .zip(ov)
                                    .for_each(|((d, g), o)| *d += g * o);
                            } else {
                                buf.iter_mut().zip(g).for_each(|(d, g)| *d += g * ov[0]);
                            }
                        } else {
                            buf[0] += g.iter().zip(ov).map(|(g, o)| g * o).sum::<f64>();
                        }
                    });
                }
            }
            Op::AddRow(a, row) => {
                send(*a, &|buf| add_into(buf, g));
                send(*row, &|buf| {
                    for r in g.chunks(n) {
                        add_into(buf, r);
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                send(*a, &|buf| {
                    for (br, gr) in buf.chunks_mut(n).zip(g.chunks(n)) {
                        br.iter_mut()
                            .zip(gr)
                            .zip(vr)
                            .for_each(|((d, g), r)| *d += g * r);
                    }
                });
                send(*row, &|buf| {
                    for (gr, ar) in g.chunks(n).zip(va.chunks(n)) {
                        buf.iter_mut()
                            .zip(gr)
                            .zip(ar)
                            .for_each(|((d, g), a)| *d += g * a);
                    }
                });
            }
            Op::ScaleShift(a, factor) => {
                send(*a, &|buf| {
                    buf.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor)
                });
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                send(*a, &|buf| {
                    buf.iter_mut().zip(g).zip(va).for_each(|((d, g), x)| {
                        if *x > 0.0 {
                            *d += g
                        }
                    });
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.as_slice();
                send(*a, &|buf| {
                    buf.iter_mut()
                        .zip(g)
                        .zip(y)
                        .for_each(|((d, g), y)| *d += g * y * (1.0 - y));
                });
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.as_slice();
                send(*a, &|buf| {
                    buf.iter_mut()
                        .zip(g)
                        .zip(y)
                        .for_each(|((d, g), y)| *d += g * y)
                });
            }
            Op::LogClamped(a, floor) => {
                let va = self.value(*a);
                send(*a, &|buf| {
                    buf.iter_mut().zip(g).zip(va).for_each(|((d, g), x)| {
                        if *x > *floor {
                            *d += g / x
                        }
                    });
                });
            }
            Op::Sum(a) => {
                send(*a, &|buf| buf.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::RowSums(a) => {
                let w = self.nodes[a.0].cols;
                send(*a, &|buf| {
                    for (br, gv) in buf.chunks_mut(w).zip(g) {
                        br.iter_mut().for_each(|d| *d += gv);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = self.nodes[i].value.as_slice();
                send(*a, &|buf| {
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            buf[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].cols;
                    send(*p, &|buf| {
                        for r in 0..m {
                            add_into(
                                &mut buf[r * w..(r + 1) * w],
                                &g[r * n + offset..r * n + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let w = self.nodes[x.0].cols;
                send(*x, &|buf| {
                    for r in 0..m {
                        add_into(
                            &mut buf[r * w + start..r * w + start + n],
                            &g[r * n..(r + 1) * n],
                        );
                    }
                });
            }
            Op::Gather {
                table,
                ids,
                freeze_padding,
            } => {
                send(*table, &|buf| {
                    for (r, &id) in ids.iter().enumerate() {
                        if *freeze_padding && id == 0 {
                            continue;
                        }
                        add_into(&mut buf[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Reparam { mean, sigma, eps } => {
                send(*mean, &|buf| add_into(buf, g));
                send(*sigma, &|buf| {
                    buf[0] += g.iter().zip(eps).map(|(g, e)| g * e).sum::<f64>()
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.nodes[i].value.as_slice();
                send(*x, &|buf| {
                    let nf = n as f64;
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let sg: f64 = gr.iter().sum();
                        let sgy: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for j in 0..n {
                            buf[r * n + j] += inv_std[r] / nf * (nf * gr[j] - sg - yr[j] * sgy);
                        }
                    }
                });
            }
        }
    }

    /// Consumes the graph, returning accumulated gradients of every borrowed
    /// parameter that received one. A parameter borrowed several times has
    /// its contributions summed.
    pub fn into_param_grads(self) -> ParamGrads {
        let mut out: ParamGrads = Vec::new();
        for node in self.nodes {
            if let (Some(name), Some(g)) = (node.param, node.grad) {
                match out.iter_mut().find(|(n, _)| *n == name) {
                    Some((_, acc)) => add_into(acc, &g),
                    None => out.push((name, g)),
                }
            }
        }
        out
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
