use super::linalg;
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Causal attention pattern over `size` positions: row `r` may attend to
/// columns `0..=r` and nothing after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalMask {
    size: usize,
}

impl CausalMask {
    pub fn new(size: usize) -> Self {
        CausalMask { size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        col <= row
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Softmax(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Determinant(Var),
    Cosine(Var, Var),
    RowNormalize(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    Element(Var, usize),
    Clamp(Var, f64, f64),
    DivScalar(Var, Var),
    RepeatRows(Var),
    BceWithLogits(Var, Vec<f64>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | MatMulBt(a, b) | Add(a, b) | AddRow(a, b) | Mul(a, b)
            | Cosine(a, b) | ConcatCols(a, b) | DivScalar(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Sum(a) | Softmax(a) | MaskedSoftmax(a) | Sigmoid(a)
            | Relu(a) | Log(a) | Determinant(a) | RowNormalize(a) | GatherRows(a, _)
            | Element(a, _) | Clamp(a, _, _) | RepeatRows(a) | BceWithLogits(a, _) => vec![*a],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            ConcatRows(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of executed primitives.
///
/// Graphs are single-threaded; independent forward passes use independent
/// graphs.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a·bᵀ` for `a: m×k`, `b: n×k`.
fn matmul_bt_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ·b` for `a: m×k`, `b: m×n`.
fn matmul_at_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn softmax_row(x: &[f64], allowed: impl Fn(usize) -> bool) -> Vec<f64> {
    let max = x
        .iter()
        .enumerate()
        .filter(|(j, _)| allowed(*j))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(j, v)| if allowed(j) { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
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
            Op::Leaf => false,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Var {
        let v = self.push(rows, cols, data, Op::Leaf);
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    /// Copies a tensor in as a leaf that receives gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims();
        self.leaf(r, c, t.data().to_vec(), true)
    }

    /// Copies a tensor in as a leaf with no gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims();
        self.leaf(r, c, t.data().to_vec(), false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant_matrix shape mismatch");
        self.leaf(rows, cols, data, false)
    }

    pub fn param_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "param_matrix shape mismatch");
        self.leaf(rows, cols, data, true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        let (r, c) = self.dims(v);
        vec![r, c]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a node, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Adds the gradient collected for `v` into `t.grad`.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) {
        if let Some(g) = self.grad(v) {
            t.grad_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            lhs: self.shape(a),
            rhs: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let out = matmul_kernel(self.value(a), self.value(b), m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// `a·bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul_bt", a, b));
        }
        let out = matmul_bt_kernel(self.value(a), self.value(b), m, k, n);
        Ok(self.push(m, n, out, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err("add", a, b));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let (r, c) = self.dims(a);
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(self.shape_err("add_row", a, row));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(m, n, out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let (r, c) = self.dims(a);
        Ok(self.push(r, c, out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * factor).collect();
        let (r, c) = self.dims(a);
        self.push(r, c, out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Var {
        let out = self.value(a).iter().map(|x| x + shift).collect();
        let (r, c) = self.dims(a);
        self.push(r, c, out, Op::AddScalar(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Sum of scalar nodes, left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter().copied();
        let first = iter.next().ok_or(TensorError::Invalid {
            op: "add_all",
            detail: "no terms".into(),
        })?;
        iter.try_fold(first, |acc, t| self.add(acc, t))
    }

    fn check_finite(&self, a: Var, op: &'static str) -> Result<()> {
        if self.value(a).iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check_finite(a, "softmax_rows")?;
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|row| softmax_row(row, |_| true))
            .collect();
        Ok(self.push(m, n, out, Op::Softmax(a)))
    }

    /// Row-wise softmax where disallowed columns get weight exactly zero
    /// (equivalent to adding `-inf` before normalising).
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &CausalMask) -> Result<Var> {
        self.check_finite(a, "masked_softmax_rows")?;
        let (m, n) = self.dims(a);
        if m != mask.size() || n != mask.size() {
            return Err(TensorError::Shape {
                op: "masked_softmax_rows",
                lhs: vec![m, n],
                rhs: vec![mask.size(), mask.size()],
            });
        }
        let out = self
            .value(a)
            .chunks(n)
            .enumerate()
            .flat_map(|(r, row)| softmax_row(row, |c| mask.allows(r, c)))
            .collect();
        Ok(self.push(m, n, out, Op::MaskedSoftmax(a)))
    }

    /// Per-row standardisation (population variance, ε = 1e-5) followed by
    /// an affine `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(gain) != (1, n) {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        if self.dims(bias) != (1, n) {
            return Err(self.shape_err("layer_norm", x, bias));
        }
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for row in self.value(x).chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            xhat.extend(row.iter().map(|v| (v - mean) * inv));
            inv_std.push(inv);
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let out = xhat
            .chunks(n)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((h, g), b)| h * g + b))
            .collect();
        Ok(self.push(
            m,
            n,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.dims(a);
        self.push(r, c, out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let (r, c) = self.dims(a);
        self.push(r, c, out, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.ln()).collect();
        let (r, c) = self.dims(a);
        self.push(r, c, out, Op::Log(a))
    }

    /// Determinant by LU with partial pivoting; returns a `1×1` node.
    pub fn determinant(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != c {
            return Err(TensorError::NotSquare {
                op: "determinant",
                shape: vec![r, c],
            });
        }
        let det = linalg::determinant(self.value(a), r);
        Ok(self.push(1, 1, vec![det], Op::Determinant(a)))
    }

    /// Cosine similarity of two rows; zero if either has zero norm.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        if ra != 1 || self.dims(b) != (1, ca) {
            return Err(self.shape_err("cosine_rows", a, b));
        }
        let (x, y) = (self.value(a), self.value(b));
        let (nx, ny) = (norm(x), norm(y));
        let cos = if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (nx * ny)
        };
        Ok(self.push(1, 1, vec![cos], Op::Cosine(a, b)))
    }

    /// Scales each row to unit length; zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|row| {
                let nr = norm(row);
                row.iter()
                    .map(move |v| if nr == 0.0 { 0.0 } else { v / nr })
            })
            .collect();
        self.push(m, n, out, Op::RowNormalize(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "concat_rows",
            detail: "no parts".into(),
        })?;
        let cols = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(self.shape_err("concat_cols", a, b));
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&self.value(a)[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&self.value(b)[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(ra, ca + cb, out, Op::ConcatCols(a, b)))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {m} rows"),
            });
        }
        let src = self.value(a);
        let out = rows
            .iter()
            .flat_map(|&r| src[r * n..(r + 1) * n].iter().copied())
            .collect();
        Ok(self.push(rows.len(), n, out, Op::GatherRows(a, rows.to_vec())))
    }

    /// Row-major element `index` as a `1×1` node.
    pub fn element(&mut self, a: Var, index: usize) -> Result<Var> {
        let v = *self.value(a).get(index).ok_or_else(|| TensorError::Invalid {
            op: "element",
            detail: format!("index {index} out of range"),
        })?;
        Ok(self.push(1, 1, vec![v], Op::Element(a, index)))
    }

    /// Clamps to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).iter().map(|x| x.clamp(lo, hi)).collect();
        let (r, c) = self.dims(a);
        self.push(r, c, out, Op::Clamp(a, lo, hi))
    }

    /// Divides every entry of `a` by the scalar node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.dims(s) != (1, 1) {
            return Err(self.shape_err("div_scalar", a, s));
        }
        let d = self.scalar(s);
        let out = self.value(a).iter().map(|x| x / d).collect();
        let (r, c) = self.dims(a);
        Ok(self.push(r, c, out, Op::DivScalar(a, s)))
    }

    /// Stacks a `1×n` row `count` times.
    pub fn repeat_rows(&mut self, a: Var, count: usize) -> Result<Var> {
        let (r, n) = self.dims(a);
        if r != 1 {
            return Err(TensorError::Invalid {
                op: "repeat_rows",
                detail: format!("expected a single row, got {r} rows"),
            });
        }
        let out = self.value(a).repeat(count);
        Ok(self.push(count, n, out, Op::RepeatRows(a)))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        if self.value(logits).len() != targets.len() {
            return Err(TensorError::Invalid {
                op: "bce_with_logits",
                detail: format!(
                    "{} logits vs {} targets",
                    self.value(logits).len(),
                    targets.len()
                ),
            });
        }
        let loss = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum();
        Ok(self.push(1, 1, vec![loss], Op::BceWithLogits(logits, targets.to_vec())))
    }

    /// Nodes that receive gradient from `loss`, in the order backward visits
    /// them (reverse execution order, each exactly once).
    pub fn backward_order(&self, loss: Var) -> Vec<Var> {
        let mut reachable = vec![false; loss.0 + 1];
        reachable[loss.0] = true;
        let mut order = Vec::new();
        for i in (0..=loss.0).rev() {
            if !reachable[i] || !self.nodes[i].requires_grad {
                continue;
            }
            order.push(Var(i));
            for input in self.nodes[i].op.inputs() {
                reachable[input.0] = true;
            }
        }
        order
    }

    /// Reverse pass from a scalar `loss`; gradients of leaves accumulate
    /// across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let (r, c) = self.dims(loss);
        if r * c != 1 {
            return Err(TensorError::NotScalar { shape: vec![r, c] });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for v in self.backward_order(loss) {
            let Some(g) = grads[v.0].take() else { continue };
            if matches!(self.nodes[v.0].op, Op::Leaf) {
                add_into(&mut self.grads[v.0], &g);
                continue;
            }
            self.propagate(v, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, v: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[v.0];
        let (rows, cols) = (node.rows, node.cols);
        let out = &node.value;
        let wants = |x: Var| self.nodes[x.0].requires_grad;
        let send = |x: Var, grad: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if wants(x) {
                add_into(&mut grads[x.0], &grad);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if wants(*a) {
                    send(*a, matmul_bt_kernel(g, self.value(*b), m, n, k), grads);
                }
                if wants(*b) {
                    send(*b, matmul_at_kernel(self.value(*a), g, m, k, n), grads);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if wants(*a) {
                    send(*a, matmul_kernel(g, self.value(*b), m, n, k), grads);
                }
                if wants(*b) {
                    send(*b, matmul_at_kernel(g, self.value(*a), m, n, k), grads);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.to_vec(), grads);
            }
            Op::AddRow(a, row) => {
                send(*a, g.to_vec(), grads);
                if wants(*row) {
                    send(*row, column_sums(g, cols), grads);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let ga = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    send(*a, ga, grads);
                }
                if wants(*b) {
                    let gb = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    send(*b, gb, grads);
                }
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|x| x * f).collect(), grads),
            Op::AddScalar(a) => send(*a, g.to_vec(), grads),
            Op::Sum(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0]; n], grads);
            }
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                let mut ga = Vec::with_capacity(rows * cols);
                for (y, gy) in out.chunks(cols).zip(g.chunks(cols)) {
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    ga.extend(y.iter().zip(gy).map(|(p, q)| p * (q - dot)));
                }
                send(*a, ga, grads);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                if wants(*gain) {
                    let mut gg = vec![0.0; cols];
                    for (h, gy) in xhat.chunks(cols).zip(g.chunks(cols)) {
                        for j in 0..cols {
                            gg[j] += gy[j] * h[j];
                        }
                    }
                    send(*gain, gg, grads);
                }
                if wants(*bias) {
                    send(*bias, column_sums(g, cols), grads);
                }
                if wants(*x) {
                    let n = cols as f64;
                    let mut gx = Vec::with_capacity(rows * cols);
                    for ((h, gy), inv) in xhat.chunks(cols).zip(g.chunks(cols)).zip(inv_std) {
                        let dh: Vec<f64> = gy.iter().zip(gv).map(|(p, q)| p * q).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dh.iter().zip(h).map(|(p, q)| p * q).sum::<f64>() / n;
                        gx.extend(
                            dh.iter()
                                .zip(h)
                                .map(|(d, hh)| inv * (d - mean_dh - hh * mean_dh_h)),
                        );
                    }
                    send(*x, gx, grads);
                }
            }
            Op::Sigmoid(a) => {
                let ga = g.iter().zip(out).map(|(q, y)| q * y * (1.0 - y)).collect();
                send(*a, ga, grads);
            }
            Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(q, x)| if *x > 0.0 { *q } else { 0.0 })
                    .collect();
                send(*a, ga, grads);
            }
            Op::Log(a) => {
                let ga = g.iter().zip(self.value(*a)).map(|(q, x)| q / x).collect();
                send(*a, ga, grads);
            }
            Op::Determinant(a) => {
                let (n, _) = self.dims(*a);
                let ga = linalg::determinant_gradient(self.value(*a), n)
                    .into_iter()
                    .map(|d| d * g[0])
                    .collect();
                send(*a, ga, grads);
            }
            Op::Cosine(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (nx, ny) = (norm(x), norm(y));
                if nx == 0.0 || ny == 0.0 {
                    return;
                }
                let cos = out[0];
                if wants(*a) {
                    let ga = x
                        .iter()
                        .zip(y)
                        .map(|(p, q)| g[0] * (q / (nx * ny) - cos * p / (nx * nx)))
                        .collect();
                    send(*a, ga, grads);
                }
                if wants(*b) {
                    let gb = x
                        .iter()
                        .zip(y)
                        .map(|(p, q)| g[0] * (p / (nx * ny) - cos * q / (ny * ny)))
                        .collect();
                    send(*b, gb, grads);
                }
            }
            Op::RowNormalize(a) => {
                let mut ga = Vec::with_capacity(rows * cols);
                for ((x, n), gy) in self
                    .value(*a)
                    .chunks(cols)
                    .zip(out.chunks(cols))
                    .zip(g.chunks(cols))
                {
                    let nr = norm(x);
                    if nr == 0.0 {
                        ga.extend(std::iter::repeat_n(0.0, cols));
                        continue;
                    }
                    let dot: f64 = gy.iter().zip(n).map(|(p, q)| p * q).sum();
                    ga.extend(gy.iter().zip(n).map(|(p, q)| (p - q * dot) / nr));
                }
                send(*a, ga, grads);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    send(p, g[offset..offset + len].to_vec(), grads);
                    offset += len;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.dims(*a).1;
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for row in g.chunks(cols) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                send(*a, ga, grads);
                send(*b, gb, grads);
            }
            Op::GatherRows(a, idx) => {
                if wants(*a) {
                    let mut ga = vec![0.0; self.value(*a).len()];
                    for (k, &r) in idx.iter().enumerate() {
                        for j in 0..cols {
                            ga[r * cols + j] += g[k * cols + j];
                        }
                    }
                    send(*a, ga, grads);
                }
            }
            Op::Element(a, index) => {
                let mut ga = vec![0.0; self.value(*a).len()];
                ga[*index] = g[0];
                send(*a, ga, grads);
            }
            Op::Clamp(a, lo, hi) => {
                let ga = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(q, x)| if x >= lo && x <= hi { *q } else { 0.0 })
                    .collect();
                send(*a, ga, grads);
            }
            Op::DivScalar(a, s) => {
                let d = self.scalar(*s);
                send(*a, g.iter().map(|q| q / d).collect(), grads);
                if wants(*s) {
                    let gs: f64 = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(q, x)| -q * x / (d * d))
                        .sum();
                    send(*s, vec![gs], grads);
                }
            }
            Op::RepeatRows(a) => send(*a, column_sums(g, cols), grads),
            Op::BceWithLogits(a, targets) => {
                let ga = self
                    .value(*a)
                    .iter()
                    .zip(targets)
                    .map(|(&z, t)| g[0] * (sigmoid(z) - t))
                    .collect();
                send(*a, ga, grads);
            }
        }
    }
}

fn column_sums(g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in g.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}
