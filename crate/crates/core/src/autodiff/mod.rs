//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every minibatch: each operation evaluates its
//! forward value immediately and records itself, and [`Tape::backward`]
//! walks the records in reverse to accumulate gradients. Tensors are at most
//! two-dimensional and hold `f64` values in row-major order.

pub mod gradcheck;
mod nn;
mod tensor;

use thiserror::Error;

pub use nn::{Activation, Adam, AdamConfig, Mlp, ParamId, ParamStore};
pub use tensor::Tensor;

/// Floor applied to probabilities before taking logs. Masked-out entries of
/// [`Tape::log_softmax`] carry `ln(PROB_FLOOR)`.
pub const PROB_FLOOR: f64 = 1e-30;

pub fn log_floor() -> f64 {
    PROB_FLOOR.ln()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    LeakyRelu(Var, f64),
    LogSoftmax(Var, Option<Vec<bool>>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Gather(Var, Vec<Option<usize>>),
    ScatterSum(Var, Vec<usize>),
    Broadcast(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to the leaf `v`; zeros when `v` does not reach
    /// the root. Interior nodes are not retained.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.nodes[v.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Gradient for a parameter leaf, summed over every leaf created for it.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for &(pid, var) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.nodes[var.0] {
                match &mut acc {
                    Some(a) => a.add_assign(g),
                    None => acc = Some(g.clone()),
                }
            }
        }
        acc
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(AutodiffError::ShapeMismatch { op, left: t.shape().to_vec(), right: vec![] }),
    }
}

/// `c = beta·c + op(a)·op(b)` where `op` optionally transposes.
/// `op(a)` is `m×k`, `op(b)` is `k×n`, `c` is `m×n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the dimensions and strides given above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise masked log-softmax of a `rows × cols` buffer.
pub fn log_softmax_rows(data: &[f64], cols: usize, mask: Option<&[bool]>) -> Vec<f64> {
    let floor = log_floor();
    let mut out = vec![floor; data.len()];
    for (r, row) in data.chunks(cols).enumerate() {
        let ok = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if ok(j) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let sum: f64 = row.iter().enumerate().filter(|(j, _)| ok(*j)).map(|(_, &v)| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for (j, &v) in row.iter().enumerate() {
            if ok(j) {
                out[r * cols + j] = v - lse;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that is not a parameter (inputs, or anything to differentiate
    /// against directly through [`Gradients::wrt`]).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(None))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Leaf(Some(id)))
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, n) = matrix_dims("matmul", self.value(b))?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        Ok(self.push(Tensor::from_vec(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// Adds the vector `b` (length `n`) to every row of `a: m×n`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = matrix_dims("add_row", self.value(a))?;
        if self.value(b).len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&bias).for_each(|(x, b)| *x += b);
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    /// `W·x + b` in row-batch form: `x: m×in`, `w: in×out`, `b: out`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        same_shape(op, self.value(a), self.value(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_vec(shape, data), rec))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    /// Adds a constant tensor; no gradient flows into the constant.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        same_shape("add_const", self.value(a), c)?;
        let mut out = self.value(a).clone();
        out.add_assign(c);
        Ok(self.push(out, Op::AddConst(a)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// Row-wise log-softmax over the entries where `mask` is true. Masked
    /// entries read `ln(PROB_FLOOR)` and receive no gradient. A 1-D input is
    /// treated as a single row.
    pub fn log_softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let t = self.value(a);
        let cols = match *t.shape() {
            [c] => c,
            [_, c] => c,
            _ => return Err(AutodiffError::ShapeMismatch { op: "log_softmax", left: t.shape().to_vec(), right: vec![] }),
        };
        if let Some(m) = &mask {
            if m.len() != t.len() {
                return Err(AutodiffError::ShapeMismatch { op: "log_softmax", left: t.shape().to_vec(), right: vec![m.len()] });
            }
        }
        let out = log_softmax_rows(t.data(), cols.max(1), mask.as_deref());
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_vec(shape, out), Op::LogSoftmax(a, mask)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = matrix_dims("slice_cols", self.value(a))?;
        if start > end || end > n {
            return Err(AutodiffError::IndexOutOfRange { op: "slice_cols", index: end, len: n });
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        Ok(self.push(Tensor::from_vec(vec![m, w], out), Op::SliceCols(a, start)))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let (m, n) = matrix_dims("gather_rows", self.value(a))?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            if r >= m {
                return Err(AutodiffError::IndexOutOfRange { op: "gather_rows", index: r, len: m });
            }
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        Ok(self.push(Tensor::from_vec(vec![rows.len(), n], out), Op::GatherRows(a, rows)))
    }

    /// Vector of flat-indexed elements; `None` yields a constant zero.
    pub fn gather(&mut self, a: Var, idx: Vec<Option<usize>>) -> Result<Var> {
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len());
        for &i in &idx {
            match i {
                Some(i) if i >= src.len() => {
                    return Err(AutodiffError::IndexOutOfRange { op: "gather", index: i, len: src.len() })
                }
                Some(i) => out.push(src[i]),
                None => out.push(0.0),
            }
        }
        Ok(self.push(Tensor::from_vec(vec![idx.len()], out), Op::Gather(a, idx)))
    }

    /// `out[targets[i]] += a[i]` into a vector of length `n`.
    pub fn scatter_sum(&mut self, a: Var, targets: Vec<usize>, n: usize) -> Result<Var> {
        let src = self.value(a).data();
        if targets.len() != src.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_sum",
                left: self.value(a).shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut out = vec![0.0; n];
        for (&t, &v) in targets.iter().zip(src) {
            if t >= n {
                return Err(AutodiffError::IndexOutOfRange { op: "scatter_sum", index: t, len: n });
            }
            out[t] += v;
        }
        Ok(self.push(Tensor::from_vec(vec![n], out), Op::ScatterSum(a, targets)))
    }

    /// Repeats a one-element tensor into a vector of length `n`.
    pub fn broadcast(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != 1 {
            return Err(AutodiffError::ShapeMismatch { op: "broadcast", left: t.shape().to_vec(), right: vec![1] });
        }
        let v = t.data()[0];
        Ok(self.push(Tensor::from_vec(vec![n], vec![v; n]), Op::Broadcast(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all elements; zero for an empty tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = if t.is_empty() { 0.0 } else { t.data().iter().sum::<f64>() / t.len() as f64 };
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Reverse pass from a scalar root. Gradient buffers start at zero on
    /// every call.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::from_vec(rv.shape().to_vec(), vec![1.0]));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if let Op::Leaf(_) = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf(_) => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = matrix_dims("matmul", self.value(*a))?;
                    let (_, n) = matrix_dims("matmul", self.value(*b))?;
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut ga, 0.0);
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut gb, 0.0);
                    acc(&mut grads, *a, Tensor::from_vec(vec![m, k], ga));
                    acc(&mut grads, *b, Tensor::from_vec(self.value(*b).shape().to_vec(), gb));
                }
                Op::AddRow(a, b) => {
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    acc(&mut grads, *b, Tensor::from_vec(self.value(*b).shape().to_vec(), gb));
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::LeakyRelu(a, slope) => {
                    let ga = g.zip_map(self.value(*a), |gx, x| if x > 0.0 { gx } else { slope * gx });
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a, mask) => {
                    let out = &node.value;
                    let cols = *out.shape().last().unwrap_or(&1);
                    let mut ga = vec![0.0; out.len()];
                    for r in 0..out.len() / cols.max(1) {
                        let range = r * cols..(r + 1) * cols;
                        let ok = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
                        let gsum: f64 = range.clone().filter(|&j| ok(j)).map(|j| g.data()[j]).sum();
                        for j in range {
                            if ok(j) {
                                ga[j] = g.data()[j] - out.data()[j].exp() * gsum;
                            }
                        }
                    }
                    acc(&mut grads, *a, Tensor::from_vec(out.shape().to_vec(), ga));
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = matrix_dims("slice_cols", self.value(*a))?;
                    let w = g.len() / m.max(1);
                    let mut ga = vec![0.0; m * n];
                    for r in 0..m {
                        ga[r * n + start..r * n + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    acc(&mut grads, *a, Tensor::from_vec(vec![m, n], ga));
                }
                Op::GatherRows(a, rows) => {
                    let (m, n) = matrix_dims("gather_rows", self.value(*a))?;
                    let mut ga = vec![0.0; m * n];
                    for (i, &r) in rows.iter().enumerate() {
                        ga[r * n..(r + 1) * n]
                            .iter_mut()
                            .zip(&g.data()[i * n..(i + 1) * n])
                            .for_each(|(s, v)| *s += v);
                    }
                    acc(&mut grads, *a, Tensor::from_vec(vec![m, n], ga));
                }
                Op::Gather(a, idx) => {
                    let src = self.value(*a);
                    let mut ga = vec![0.0; src.len()];
                    for (k, i) in idx.iter().enumerate() {
                        if let Some(i) = i {
                            ga[*i] += g.data()[k];
                        }
                    }
                    acc(&mut grads, *a, Tensor::from_vec(src.shape().to_vec(), ga));
                }
                Op::ScatterSum(a, targets) => {
                    let ga = targets.iter().map(|&t| g.data()[t]).collect();
                    acc(&mut grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), ga));
                }
                Op::Broadcast(a) => {
                    let s: f64 = g.data().iter().sum();
                    acc(&mut grads, *a, Tensor::from_vec(self.value(*a).shape().to_vec(), vec![s]));
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |gx, x| 2.0 * x * gx);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let v = g.data()[0];
                    acc(&mut grads, *a, self.value(*a).map(|_| v));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let v = g.data()[0] / t.len().max(1) as f64;
                    acc(&mut grads, *a, t.map(|_| v));
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf(Some(id)) => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { nodes: grads, params, shapes })
    }
}
