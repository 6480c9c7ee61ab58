use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Arithmetic precision of recorded values.
///
/// `F32` rounds every forward value and every adjoint contribution to the
/// nearest single-precision float while still storing `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sigmoid,
    Tanh,
    Exp,
    Relu,
    AddRow,
    MulRow,
    Softmax,
    ConcatLast,
    SliceLast,
    Row,
    ConcatRows,
    MeanRows,
    SumAll,
    MeanAll,
    LayerNorm,
    Conv1d,
    SqDist,
    L2NormalizeRows,
    Gather,
    CrossEntropy,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Relu(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    ConcatLast(Var, Var),
    SliceLast {
        x: Var,
        start: usize,
    },
    Row {
        x: Var,
        index: usize,
    },
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    SqDist(Var, Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Exp(..) => OpKind::Exp,
            Op::Relu(..) => OpKind::Relu,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::ConcatLast(..) => OpKind::ConcatLast,
            Op::SliceLast { .. } => OpKind::SliceLast,
            Op::Row { .. } => OpKind::Row,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::SumAll(..) => OpKind::SumAll,
            Op::MeanAll(..) => OpKind::MeanAll,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::SqDist(..) => OpKind::SqDist,
            Op::L2NormalizeRows { .. } => OpKind::L2NormalizeRows,
            Op::Gather { .. } => OpKind::Gather,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::ConcatLast(a, b)
            | Op::SqDist(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Exp(x)
            | Op::Relu(x)
            | Op::MeanRows(x)
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::Softmax { x, .. }
            | Op::SliceLast { x, .. }
            | Op::Row { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::L2NormalizeRows { x, .. }
            | Op::Gather { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::ConcatRows(xs) => xs.clone(),
            Op::Conv1d { x, kernel, bias } => vec![*x, *kernel, *bias],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it. `backward` may run once per graph; build a fresh graph for the next
/// step.
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    grad_enabled: bool,
    param_vars: HashMap<ParamId, Var>,
    grads: Option<Vec<Option<Tensor>>>,
    fault: Option<(OpKind, f64)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn round32(xs: &mut [f64]) {
    for x in xs {
        *x = *x as f32 as f64;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain `[m×k]·[k×n]` product into a fresh buffer.
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose2(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
            grad_enabled: true,
            param_vars: HashMap::new(),
            grads: None,
            fault: None,
        }
    }

    /// A graph that records values only. Parameters enter as constants and
    /// `backward` is unavailable.
    pub fn inference(precision: Precision) -> Self {
        let mut g = Self::with_precision(precision);
        g.grad_enabled = false;
        g
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every adjoint produced by operations of `kind` by `factor`.
    /// Exists to prove that gradient checks detect a wrong adjoint.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inputs of the operation that produced `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        if self.precision == Precision::F32 {
            round32(value.data_mut());
        }
        let requires_grad = self.grad_enabled && op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            round32(value.data_mut());
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records a parameter from `store`; repeated requests return the same
    /// node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.param_vars.insert(id, v);
        v
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let data = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", x)?;
        let data = transpose2(self.value(x).data(), m, n);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        Ok(self.binary(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        Ok(self.binary(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        Ok(self.binary(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// `s · x` for a constant scalar `s`.
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    /// `x + s` for a constant scalar `s`.
    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    fn check_row_vector(&self, op: &'static str, x: Var, v: Var) -> Result<()> {
        if self.value(v).numel() != self.value(x).cols() {
            return Err(Error::dim(op, self.shape(x), self.shape(v)));
        }
        Ok(())
    }

    /// Adds the vector `v` (length = last dim of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.check_row_vector("add_row", x, v)?;
        let (vx, vv) = (self.value(x), self.value(v));
        let n = vv.numel();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a + vv.data()[i % n])
            .collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, v)))
    }

    /// Multiplies every row of `x` elementwise by the vector `v`.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.check_row_vector("mul_row", x, v)?;
        let (vx, vv) = (self.value(x), self.value(v));
        let n = vv.numel();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a * vv.data()[i % n])
            .collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulRow(x, v)))
    }

    /// Softmax along `axis`, stabilised by subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| src[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for a in 0..len {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    sum += e;
                }
                for a in 0..len {
                    out[idx(a)] /= sum;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax { x, axis }))
    }

    /// Concatenation along the last dimension.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat_last", sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let (ca, cb) = (va.cols(), vb.cols());
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::ConcatLast(a, b)))
    }

    /// Columns `start..start+len` of the last dimension.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.cols();
        if len == 0 || start + len > c {
            return Err(Error::dim("slice_last", vx.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(vx.rows() * len);
        for r in 0..vx.rows() {
            data.extend_from_slice(&vx.row(r)[start..start + len]);
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::SliceLast { x, start }))
    }

    /// Row `index` of a matrix as a `[1×n]` matrix.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("row", x)?;
        if index >= m {
            return Err(Error::dim("row", &[m, n], &[index]));
        }
        let data = self.value(x).row(index).to_vec();
        Ok(self.push(Tensor::new(vec![1, n], data)?, Op::Row { x, index }))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of zero tensors".into()))?;
        let (_, n) = self.matrix_dims("concat_rows", first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let (m, n2) = self.matrix_dims("concat_rows", x)?;
            if n2 != n {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(x)));
            }
            rows += m;
            data.extend_from_slice(self.value(x).data());
        }
        let t = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(t, Op::ConcatRows(xs.to_vec())))
    }

    /// Mean over rows: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("mean_rows", x)?;
        let vx = self.value(x);
        let mut data = vec![0.0; n];
        for r in 0..m {
            for (d, v) in data.iter_mut().zip(vx.row(r)) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        Ok(self.push(Tensor::new(vec![1, n], data)?, Op::MeanRows(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x))
    }

    /// Normalises each row (last dimension) to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let n = vx.cols();
        let mut out = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (v - mean) * inv));
            inv_std.push(inv);
        }
        let t = Tensor::new(vx.shape().to_vec(), out).expect("same shape");
        self.push(t, Op::LayerNorm { x, inv_std })
    }

    /// Same-length 1-D cross-correlation over time.
    ///
    /// `x` is `[T×c_in]`, `kernel` is `[k×c_in×c_out]` with odd `k`, `bias`
    /// is `[c_out]`. Zero padding of `(k−1)/2` on each side.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (t_len, c_in) = self.matrix_dims("conv1d", x)?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 3 || ks[1] != c_in {
            return Err(Error::dim("conv1d", self.shape(x), &ks));
        }
        let (k, c_out) = (ks[0], ks[2]);
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel size must be odd, got {k}")));
        }
        if self.value(bias).numel() != c_out {
            return Err(Error::dim("conv1d", &ks, self.shape(bias)));
        }
        let pad = (k - 1) / 2;
        let (vx, vk, vb) = (self.value(x), self.value(kernel), self.value(bias));
        let mut out = Vec::with_capacity(t_len * c_out);
        for _ in 0..t_len {
            out.extend_from_slice(vb.data());
        }
        for t in 0..t_len {
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < t_len) else {
                    continue;
                };
                let xrow = vx.row(src);
                let orow = &mut out[t * c_out..(t + 1) * c_out];
                for (c, &xv) in xrow.iter().enumerate() {
                    let krow = &vk.data()[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                    for (o, kv) in orow.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![t_len, c_out], out)?;
        Ok(self.push(t, Op::Conv1d { x, kernel, bias }))
    }

    /// Squared Euclidean distances between the rows of `x` `[T×d]` and the
    /// rows of `centers` `[K×d]`, giving `[T×K]`.
    pub fn sq_dist(&mut self, x: Var, centers: Var) -> Result<Var> {
        let (t_len, d) = self.matrix_dims("sq_dist", x)?;
        let (k, d2) = self.matrix_dims("sq_dist", centers)?;
        if d != d2 {
            return Err(Error::dim("sq_dist", self.shape(x), self.shape(centers)));
        }
        let (vx, vc) = (self.value(x), self.value(centers));
        let mut out = Vec::with_capacity(t_len * k);
        for i in 0..t_len {
            for c in 0..k {
                out.push(vx.row(i).iter().zip(vc.row(c)).map(|(a, b)| (a - b) * (a - b)).sum());
            }
        }
        let t = Tensor::new(vec![t_len, k], out)?;
        Ok(self.push(t, Op::SqDist(x, centers)))
    }

    /// Scales each row to unit Euclidean norm. Zero rows map to zero rows
    /// and pass no gradient.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = Vec::with_capacity(vx.numel());
        let mut norms = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.extend(row.iter().map(|v| v / norm));
            } else {
                out.extend(std::iter::repeat_n(0.0, row.len()));
            }
            norms.push(norm);
        }
        let t = Tensor::new(vx.shape().to_vec(), out).expect("same shape");
        self.push(t, Op::L2NormalizeRows { x, norms })
    }

    /// Picks flat (row-major) elements of `x`, giving a vector `[len]`.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        let vx = self.value(x);
        if indices.is_empty() {
            return Err(Error::Contract("gather with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= vx.numel()) {
            return Err(Error::dim("gather", vx.shape(), &[bad]));
        }
        let data = indices.iter().map(|&i| vx.data()[i]).collect();
        let t = Tensor::new(vec![indices.len()], data)?;
        Ok(self.push(t, Op::Gather { x, indices }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)` row
    /// by row, computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix_dims("cross_entropy", logits)?;
        if labels.len() != n {
            return Err(Error::dim("cross_entropy", &[n, c], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let vl = self.value(logits);
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = vl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Propagates adjoints from the scalar `loss` to every node that
    /// requires a gradient. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.grad_enabled {
            return Err(Error::Contract("backward on an inference graph".into()));
        }
        if self.grads.is_some() {
            return Err(Error::Contract(
                "backward already ran on this graph; rebuild it with a fresh forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.adjoints(idx, &g);
            grads[idx] = Some(g);
            let factor = match self.fault {
                Some((kind, f)) if kind == self.nodes[idx].op.kind() => f,
                _ => 1.0,
            };
            for (input, mut contrib) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if factor != 1.0 {
                    contrib.iter_mut().for_each(|c| *c *= factor);
                }
                if self.precision == Precision::F32 {
                    round32(&mut contrib);
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` was
    /// reachable and differentiable.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    /// Gradient for a parameter recorded through [`Graph::param`].
    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars.get(&id).and_then(|&v| self.grad(v))
    }

    /// Adjoint contributions of node `idx` to each of its inputs.
    fn adjoints(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                let mut res = Vec::new();
                if self.nodes[a.0].requires_grad {
                    let bt = transpose2(val(*b), k, n);
                    res.push((*a, gemm(g, &bt, m, n, k)));
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose2(val(*a), m, k);
                    res.push((*b, gemm(&at, g, k, m, n)));
                }
                res
            }
            Op::Transpose(x) => {
                let (m, n) = (shape(*x)[0], shape(*x)[1]);
                vec![(*x, transpose2(g, n, m))]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![
                    (*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(va).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale(x, s) => vec![(*x, g.iter().map(|v| v * s).collect())],
            Op::AddScalar(x) => vec![(*x, g.to_vec())],
            Op::Sigmoid(x) => vec![(*x, g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect())],
            Op::Tanh(x) => vec![(*x, g.iter().zip(out).map(|(g, t)| g * (1.0 - t * t)).collect())],
            Op::Exp(x) => vec![(*x, g.iter().zip(out).map(|(g, e)| g * e).collect())],
            Op::Relu(x) => vec![(
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            )],
            Op::AddRow(x, v) => {
                let n = val(*v).len();
                let mut gv = vec![0.0; n];
                for (i, gi) in g.iter().enumerate() {
                    gv[i % n] += gi;
                }
                vec![(*x, g.to_vec()), (*v, gv)]
            }
            Op::MulRow(x, v) => {
                let (vx, vv) = (val(*x), val(*v));
                let n = vv.len();
                let mut gv = vec![0.0; n];
                let mut gx = vec![0.0; g.len()];
                for (i, gi) in g.iter().enumerate() {
                    gx[i] = gi * vv[i % n];
                    gv[i % n] += gi * vx[i];
                }
                vec![(*x, gx), (*v, gv)]
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(shape(*x), *axis);
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[idx(a)] * out[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = out[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::ConcatLast(a, b) => {
                let ca = *shape(*a).last().unwrap();
                let cb = *shape(*b).last().unwrap();
                let rows = g.len() / (ca + cb);
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::SliceLast { x, start } => {
                let c = *shape(*x).last().unwrap();
                let len = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; val(*x).len()];
                for r in 0..g.len() / len {
                    gx[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*x, gx)]
            }
            Op::Row { x, index } => {
                let n = shape(*x)[1];
                let mut gx = vec![0.0; val(*x).len()];
                gx[index * n..(index + 1) * n].copy_from_slice(g);
                vec![(*x, gx)]
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let len = val(x).len();
                        let part = g[offset..offset + len].to_vec();
                        offset += len;
                        (x, part)
                    })
                    .collect()
            }
            Op::MeanRows(x) => {
                let (m, n) = (shape(*x)[0], shape(*x)[1]);
                let mut gx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    gx.extend(g.iter().map(|v| v / m as f64));
                }
                vec![(*x, gx)]
            }
            Op::SumAll(x) => vec![(*x, vec![g[0]; val(*x).len()])],
            Op::MeanAll(x) => {
                let n = val(*x).len();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::LayerNorm { x, inv_std } => {
                let n = *shape(*x).last().unwrap();
                let mut gx = Vec::with_capacity(g.len());
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &out[r * n..(r + 1) * n];
                    let sum_g: f64 = gr.iter().sum();
                    let sum_gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    gx.extend(
                        gr.iter()
                            .zip(yr)
                            .map(|(gi, yi)| inv / n as f64 * (n as f64 * gi - sum_g - yi * sum_gy)),
                    );
                }
                vec![(*x, gx)]
            }
            Op::Conv1d { x, kernel, bias } => {
                let (t_len, c_in) = (shape(*x)[0], shape(*x)[1]);
                let ks = shape(*kernel);
                let (k, c_out) = (ks[0], ks[2]);
                let pad = (k - 1) / 2;
                let (vx, vk) = (val(*x), val(*kernel));
                let mut gx = vec![0.0; vx.len()];
                let mut gk = vec![0.0; vk.len()];
                let mut gb = vec![0.0; c_out];
                for t in 0..t_len {
                    let grow = &g[t * c_out..(t + 1) * c_out];
                    gb.iter_mut().zip(grow).for_each(|(b, gv)| *b += gv);
                    for j in 0..k {
                        let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < t_len) else {
                            continue;
                        };
                        for c in 0..c_in {
                            let base = (j * c_in + c) * c_out;
                            let xv = vx[src * c_in + c];
                            let mut acc = 0.0;
                            for o in 0..c_out {
                                acc += grow[o] * vk[base + o];
                                gk[base + o] += grow[o] * xv;
                            }
                            gx[src * c_in + c] += acc;
                        }
                    }
                }
                vec![(*x, gx), (*kernel, gk), (*bias, gb)]
            }
            Op::SqDist(x, centers) => {
                let (t_len, d) = (shape(*x)[0], shape(*x)[1]);
                let k = shape(*centers)[0];
                let (vx, vc) = (val(*x), val(*centers));
                let mut gx = vec![0.0; vx.len()];
                let mut gc = vec![0.0; vc.len()];
                for i in 0..t_len {
                    for c in 0..k {
                        let gic = 2.0 * g[i * k + c];
                        for j in 0..d {
                            let diff = vx[i * d + j] - vc[c * d + j];
                            gx[i * d + j] += gic * diff;
                            gc[c * d + j] -= gic * diff;
                        }
                    }
                }
                vec![(*x, gx), (*centers, gc)]
            }
            Op::L2NormalizeRows { x, norms } => {
                let n = *shape(*x).last().unwrap();
                let mut gx = Vec::with_capacity(g.len());
                for (r, &norm) in norms.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    if norm > 0.0 {
                        let yr = &out[r * n..(r + 1) * n];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        gx.extend(gr.iter().zip(yr).map(|(gi, yi)| (gi - yi * dot) / norm));
                    } else {
                        gx.extend(std::iter::repeat_n(0.0, n));
                    }
                }
                vec![(*x, gx)]
            }
            Op::Gather { x, indices } => {
                let mut gx = vec![0.0; val(*x).len()];
                for (gi, &i) in g.iter().zip(indices) {
                    gx[i] += gi;
                }
                vec![(*x, gx)]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * c + y] -= scale;
                }
                vec![(*logits, gl)]
            }
        }
    }
}

/// `(outer, axis_len, inner)` strides for iterating slices along `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
