use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{Activation, AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x · wᵀ (+ b)` over the rows of `x`.
    Linear {
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
    },
    /// Plain `a · b`.
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine {
        x: NodeId,
        scale: f64,
    },
    Act(Activation, NodeId),
    Abs(NodeId),
    Softmax(NodeId),
    Sum(NodeId),
    RowSum(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    StackCols(Vec<NodeId>),
    Column {
        x: NodeId,
        index: usize,
    },
    Gather {
        x: NodeId,
        index: Vec<usize>,
    },
    ScaleRows {
        v: NodeId,
        x: NodeId,
    },
    Reshape(NodeId),
    BceWithLogits {
        logits: NodeId,
        target: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// One tape per forward pass: build it, call [`Tape::backward`] once or
/// many times, then drop it. Node ids are only meaningful for the tape that
/// produced them.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Reverse-mode gradients for every node reachable from a scalar root.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, or `None` when `id` does
    /// not influence the root (or does not require gradients).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`], but materializes zeros of the node's shape.
    pub fn get_or_zeros(&self, tape: &Tape, id: NodeId) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(id).shape()))
    }
}

fn mismatch(op: &'static str, expected: &[usize], actual: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

/// `out = beta·out + a' · b'` where `a'`/`b'` are optionally transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    out: &mut [f64],
    a: &[f64],
    a_dims: (usize, usize),
    trans_a: bool,
    b: &[f64],
    b_dims: (usize, usize),
    trans_b: bool,
    beta: f64,
) {
    let av = ArrayView2::from_shape(a_dims, a).expect("lhs dims");
    let bv = ArrayView2::from_shape(b_dims, b).expect("rhs dims");
    let av = if trans_a { av.t() } else { av };
    let bv = if trans_b { bv.t() } else { bv };
    let mut cv = ArrayViewMut2::from_shape((av.nrows(), bv.ncols()), out).expect("out dims");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf whose gradient is tracked (a learnable parameter).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Affine map applied to every row of `x`: `x · wᵀ + b`.
    ///
    /// `w` is `[m × n]`, `x` is `[n]` or `[r × n]`, `b` is `[m]`. The result
    /// keeps the rank of `x`.
    pub fn linear(
        &mut self,
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId, AutodiffError> {
        let wv = self.value(w);
        let xv = self.value(x);
        if wv.rank() != 2 {
            return Err(mismatch("linear.weight", &[0, xv.cols()], wv.shape()));
        }
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        if xv.rank() == 0 || xv.cols() != n {
            let expected = if xv.rank() == 2 {
                vec![xv.rows(), n]
            } else {
                vec![n]
            };
            return Err(mismatch("linear.input", &expected, xv.shape()));
        }
        let rows = xv.rows();
        let mut out = vec![0.0; rows * m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [m] {
                return Err(mismatch("linear.bias", &[m], bv.shape()));
            }
            for r in 0..rows {
                out[r * m..(r + 1) * m].copy_from_slice(bv.data());
            }
        }
        gemm(
            &mut out,
            xv.data(),
            (rows, n),
            false,
            wv.data(),
            (m, n),
            true,
            if b.is_some() { 1.0 } else { 0.0 },
        );
        let shape = if xv.rank() == 2 { vec![rows, m] } else { vec![m] };
        let value = Tensor::new(shape, out)?;
        let mut parents = vec![w, x];
        parents.extend(b);
        let rg = self.any_grad(&parents);
        Ok(self.push(value, Op::Linear { w, x, b }, rg))
    }

    /// Matrix product `a · b` with `a: [r × k]` (or `[k]`) and `b: [k × c]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        let bv = self.value(b);
        if bv.rank() != 2 || av.rank() == 0 || av.cols() != bv.shape()[0] {
            return Err(mismatch("matmul", &[av.cols(), bv.cols()], bv.shape()));
        }
        let (r, k, c) = (av.rows(), av.cols(), bv.shape()[1]);
        let mut out = vec![0.0; r * c];
        gemm(&mut out, av.data(), (r, k), false, bv.data(), (k, c), false, 0.0);
        let shape = if av.rank() == 2 { vec![r, c] } else { vec![c] };
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise `scale·x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.requires_grad(x);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    /// Elementwise `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 1.0)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.affine(x, factor, 0.0)
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> NodeId {
        if kind == Activation::Identity {
            return x;
        }
        let value = self.value(x).map(|v| match kind {
            Activation::Identity => v,
            Activation::Relu => relu(v),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        });
        let rg = self.requires_grad(x);
        self.push(value, Op::Act(kind, x), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Tanh, x)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::abs);
        let rg = self.requires_grad(x);
        self.push(value, Op::Abs(x), rg)
    }

    /// Softmax over the last axis, row by row, with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.numel() == 0 || xv.rank() == 0 {
            return Err(AutodiffError::Empty { op: "softmax" });
        }
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Sum along the last axis of a matrix: `[r × c] -> [r]`.
    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(mismatch("row_sum", &[xv.rows(), xv.cols()], xv.shape()));
        }
        let data = xv
            .data()
            .chunks(xv.cols())
            .map(|r| r.iter().sum())
            .collect();
        let value = Tensor::vector(data);
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::RowSum(x), rg))
    }

    /// Concatenate along the last axis. All parts share rank and row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "concat_cols" })?;
        let rank = self.value(*first).rank();
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rank() != rank || v.rows() != rows || rank == 0 {
                return Err(mismatch("concat_cols", self.value(*first).shape(), v.shape()));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stack matrices vertically: `[r_i × c] -> [Σr_i × c]`.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "concat_rows" })?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rank() != 2 || v.cols() != cols {
                return Err(mismatch("concat_rows", &[v.rows(), cols], v.shape()));
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Use equal-length vectors as the columns of a matrix: `K × [r] -> [r × K]`.
    pub fn stack_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "stack_cols" })?;
        let rows = self.value(*first).numel();
        for p in parts {
            let v = self.value(*p);
            if v.rank() != 1 || v.numel() != rows {
                return Err(mismatch("stack_cols", &[rows], v.shape()));
            }
        }
        let k = parts.len();
        let mut data = vec![0.0; rows * k];
        for (j, p) in parts.iter().enumerate() {
            for (i, v) in self.value(*p).data().iter().enumerate() {
                data[i * k + j] = *v;
            }
        }
        let value = Tensor::matrix(rows, k, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::StackCols(parts.to_vec()), rg))
    }

    /// Column `index` of a matrix as a vector.
    pub fn column(&mut self, x: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 || index >= xv.cols() {
            return Err(mismatch("column", &[xv.rows(), index + 1], xv.shape()));
        }
        let data = (0..xv.rows()).map(|r| xv.at(r, index)).collect();
        let value = Tensor::vector(data);
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Column { x, index }, rg))
    }

    /// Picks entry `index[r]` from each row `r`: `[r × c] -> [r]`.
    pub fn gather(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 || index.len() != xv.rows() {
            return Err(mismatch("gather", &[index.len(), xv.cols()], xv.shape()));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= xv.cols()) {
            return Err(mismatch("gather.index", &[xv.cols()], &[*bad]));
        }
        let data = index.iter().enumerate().map(|(r, &c)| xv.at(r, c)).collect();
        let value = Tensor::vector(data);
        let rg = self.requires_grad(x);
        Ok(self.push(
            value,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Multiplies row `i` of `x` by `v[i]`.
    pub fn scale_rows(&mut self, v: NodeId, x: NodeId) -> Result<NodeId, AutodiffError> {
        let vv = self.value(v);
        let xv = self.value(x);
        if vv.rank() != 1 || xv.rank() != 2 || vv.numel() != xv.rows() {
            return Err(mismatch("scale_rows", &[xv.rows()], vv.shape()));
        }
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, s) in data.chunks_mut(cols).zip(vv.data()) {
            for e in row {
                *e *= s;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.any_grad(&[v, x]);
        Ok(self.push(value, Op::ScaleRows { v, x }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Elementwise binary cross-entropy between `sigmoid(logits)` and `target`,
    /// computed stably from the logits.
    pub fn bce_with_logits(
        &mut self,
        logits: NodeId,
        target: &[f64],
    ) -> Result<NodeId, AutodiffError> {
        let zv = self.value(logits);
        if zv.numel() != target.len() {
            return Err(mismatch("bce_with_logits", zv.shape(), &[target.len()]));
        }
        let data = zv
            .data()
            .iter()
            .zip(target)
            .map(|(&z, &t)| relu(z) - t * z + (-z.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(zv.shape().to_vec(), data)?;
        let rg = self.requires_grad(logits);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar root.
    ///
    /// The tape is not modified, so calling this again yields the same
    /// gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, AutodiffError> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::filled(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn with_data(&self, id: NodeId, data: Vec<f64>) -> Tensor {
        Tensor::new(self.value(id).shape().to_vec(), data).expect("gradient shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { w, x, b } => {
                let wv = self.value(*w);
                let xv = self.value(*x);
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; rows * n];
                    gemm(&mut dx, gd, (rows, m), false, wv.data(), (m, n), false, 0.0);
                    let t = self.with_data(*x, dx);
                    self.accumulate(grads, *x, t);
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![0.0; m * n];
                    gemm(&mut dw, gd, (rows, m), true, xv.data(), (rows, n), false, 0.0);
                    let t = self.with_data(*w, dw);
                    self.accumulate(grads, *w, t);
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; m];
                        for row in gd.chunks(m) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        let t = self.with_data(*b, db);
                        self.accumulate(grads, *b, t);
                    }
                }
            }
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (r, k, c) = (av.rows(), av.cols(), bv.shape()[1]);
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; r * k];
                    gemm(&mut da, gd, (r, c), false, bv.data(), (k, c), true, 0.0);
                    let t = self.with_data(*a, da);
                    self.accumulate(grads, *a, t);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * c];
                    gemm(&mut db, av.data(), (r, k), true, gd, (r, c), false, 0.0);
                    let t = self.with_data(*b, db);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    let d = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let t = self.with_data(*a, d);
                    self.accumulate(grads, *a, t);
                }
                if self.requires_grad(*b) {
                    let d = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                    let t = self.with_data(*b, d);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Act(kind, x) => {
                let y = node.value.data();
                let xv = self.value(*x).data();
                let d: Vec<f64> = match kind {
                    Activation::Identity => gd.to_vec(),
                    Activation::Relu => gd
                        .iter()
                        .zip(xv)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => {
                        gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()
                    }
                    Activation::Tanh => gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                };
                let t = self.with_data(*x, d);
                self.accumulate(grads, *x, t);
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let t = self.with_data(*x, d);
                self.accumulate(grads, *x, t);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut d = vec![0.0; y.len()];
                for ((drow, yrow), grow) in d
                    .chunks_mut(cols)
                    .zip(y.chunks(cols))
                    .zip(gd.chunks(cols))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((dv, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = yv * (gv - dot);
                    }
                }
                let t = self.with_data(*x, d);
                self.accumulate(grads, *x, t);
            }
            Op::Sum(x) => {
                let t = Tensor::filled(self.value(*x).shape(), gd[0]);
                self.accumulate(grads, *x, t);
            }
            Op::RowSum(x) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = Vec::with_capacity(xv.numel());
                for &gv in gd {
                    d.extend(std::iter::repeat(gv).take(cols));
                }
                let t = self.with_data(*x, d);
                self.accumulate(grads, *x, t);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                        }
                        let t = self.with_data(*p, d);
                        self.accumulate(grads, *p, t);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.requires_grad(*p) {
                        let t = self.with_data(*p, gd[offset..offset + n].to_vec());
                        self.accumulate(grads, *p, t);
                    }
                    offset += n;
                }
            }
            Op::StackCols(parts) => {
                let k = parts.len();
                for (j, p) in parts.iter().enumerate() {
                    if self.requires_grad(*p) {
                        let d = gd.iter().skip(j).step_by(k).copied().collect();
                        let t = self.with_data(*p, d);
                        self.accumulate(grads, *p, t);
                    }
                }
            }
            Op::Column { x, index } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![0.0; xv.numel()];
                for (r, gv) in gd.iter().enumerate() {
                    d[r * cols + index] = *gv;
                }
                let t = self.with_data(*x, d);
                self.accumulate(grads, *x, t);
            }
            Op::Gather { x, index } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![0.0; xv.numel()];
                for (r, (gv, c)) in gd.iter().zip(index).enumerate() {
                    d[r * cols + c] = *gv;
                }
                let t = self.with_data(*x, d);
                self.accumulate(grads, *x, t);
            }
            Op::ScaleRows { v, x } => {
                let vv = self.value(*v).data();
                let xv = self.value(*x);
                let cols = xv.cols();
                if self.requires_grad(*v) {
                    let d = gd
                        .chunks(cols)
                        .zip(xv.data().chunks(cols))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    let t = self.with_data(*v, d);
                    self.accumulate(grads, *v, t);
                }
                if self.requires_grad(*x) {
                    let mut d = gd.to_vec();
                    for (row, s) in d.chunks_mut(cols).zip(vv) {
                        for e in row {
                            *e *= s;
                        }
                    }
                    let t = self.with_data(*x, d);
                    self.accumulate(grads, *x, t);
                }
            }
            Op::Reshape(x) => {
                let t = g.reshaped(self.value(*x).shape()).expect("gradient shape");
                self.accumulate(grads, *x, t);
            }
            Op::BceWithLogits { logits, target } => {
                let z = self.value(*logits).data();
                let d = gd
                    .iter()
                    .zip(z)
                    .zip(target)
                    .map(|((g, &z), t)| g * (sigmoid(z) - t))
                    .collect();
                let t = self.with_data(*logits, d);
                self.accumulate(grads, *logits, t);
            }
        }
    }
}
