use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities inside [`Graph::bce_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Exp,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Hadamard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    Reduce {
        op: Reduction,
        input: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    Bce {
        p: Var,
        target: f64,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of tensor operations.
///
/// Nodes are appended in execution order, so every operand precedes its
/// consumer and a single reverse sweep replays the adjoints. A graph serves
/// exactly one backward pass; build a fresh one for every forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// `c = beta * c + a * b` with `a: m×k` and `b: k×n` addressed by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds, and `c`
    // is a distinct mutable slice so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    let t = &nodes[v.0].value;
    if !t.requires_grad() {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; t.len()]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn reduce_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

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

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, values, requires_grad),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.node(v);
        t.dims2().ok_or_else(|| Error::Dimension {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0],
        })
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_values(), Op::Leaf, false)
    }

    /// Records a copy of `t`, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.node(v)
    }

    /// Gradient of `v`, available after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad()
    }

    /// Adds the gradient recorded for `v` into `target`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        let g = self
            .grad(v)
            .ok_or_else(|| Error::State("no gradient recorded for this node".into()))?;
        target.accumulate_grad(g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.node(a).values(),
            (k, 1),
            self.node(b).values(),
            (n, 1),
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let src = self.node(a).values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], out, Op::Transpose(a), rg))
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let t = self.node(a);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Relu => |x| x.max(0.0),
        };
        let out = t.values().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = t.requires_grad();
        self.push(shape, out, Op::Unary(op, a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.node(a), self.node(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "elementwise",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Hadamard => |x, y| x * y,
        };
        let out = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        let rg = ta.requires_grad() || tb.requires_grad();
        Ok(self.push(shape, out, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Hadamard, a, b)
    }

    /// Multiplies every element by the constant `factor`.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.node(a);
        let out = t.values().iter().map(|x| x * factor).collect();
        let shape = t.shape().to_vec();
        let rg = t.requires_grad();
        self.push(shape, out, Op::Scale(a, factor), rg)
    }

    /// Adds a length-`m` bias to every row of an `n×m` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims(x, "add_row_bias")?;
        let b = self.node(bias);
        if b.len() != m {
            return Err(Error::Dimension {
                op: "add_row_bias",
                lhs: vec![n, m],
                rhs: b.shape().to_vec(),
            });
        }
        let bv = b.values();
        let mut out = self.node(x).values().to_vec();
        for row in out.chunks_exact_mut(m) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(vec![n, m], out, Op::AddRowBias(x, bias), rg))
    }

    /// Scales row `i` of an `n×m` matrix by `weights[i]`.
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims(x, "scale_rows")?;
        let w = self.node(weights);
        if w.len() != n {
            return Err(Error::Dimension {
                op: "scale_rows",
                lhs: vec![n, m],
                rhs: w.shape().to_vec(),
            });
        }
        let wv = w.values();
        let mut out = self.node(x).values().to_vec();
        for (row, &s) in out.chunks_exact_mut(m).zip(wv) {
            row.iter_mut().for_each(|o| *o *= s);
        }
        let rg = self.rg(x) || self.rg(weights);
        Ok(self.push(vec![n, m], out, Op::ScaleRows(x, weights), rg))
    }

    /// Reduces along `axis`, keeping it as an extent of one.
    ///
    /// For [`Reduction::Max`] the lowest index wins ties and receives the
    /// whole upstream gradient.
    pub fn reduce(&mut self, op: Reduction, a: Var, axis: usize) -> Result<Var> {
        let t = self.node(a);
        if axis >= t.rank() {
            return Err(Error::Contract(format!(
                "reduction axis {axis} out of range for shape {:?}",
                t.shape()
            )));
        }
        let (outer, len, inner) = reduce_layout(t.shape(), axis);
        if len == 0 {
            return Err(Error::Degenerate("reduction over an empty axis".into()));
        }
        let src = t.values();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match op {
            Reduction::Sum | Reduction::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += src[base + i];
                        }
                    }
                }
                if op == Reduction::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            }
            Reduction::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = src[o * len * inner + i];
                        let mut best_l = 0;
                        for l in 1..len {
                            let v = src[(o * len + l) * inner + i];
                            if v > best {
                                best = v;
                                best_l = l;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = best_l;
                    }
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let rg = t.requires_grad();
        Ok(self.push(
            shape,
            out,
            Op::Reduce {
                op,
                input: a,
                axis,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduction::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduction::Mean, a, axis)
    }

    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduction::Max, a, axis)
    }

    /// Softmax over all elements of `a`, computed with the maximum
    /// subtracted first. The output keeps the input shape.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.node(a);
        if t.is_empty() {
            return Err(Error::Degenerate("softmax of an empty tensor".into()));
        }
        let src = t.values();
        let peak = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::Contract("softmax input must be finite".into()));
        }
        let mut out: Vec<f64> = src.iter().map(|&v| (v - peak).exp()).collect();
        // Summing in sorted order makes the weights bit-identical under any
        // permutation of the input.
        let mut sorted = out.clone();
        sorted.sort_by(f64::total_cmp);
        let total: f64 = sorted.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        let shape = t.shape().to_vec();
        let rg = t.requires_grad();
        Ok(self.push(shape, out, Op::Softmax(a), rg))
    }

    /// Binary cross-entropy of a single probability against a 0/1 target.
    ///
    /// `p` is clamped into `[BCE_EPSILON, 1 - BCE_EPSILON]`; the gradient is
    /// evaluated at the clamped value.
    pub fn bce_loss(&mut self, p: Var, target: f64) -> Result<Var> {
        let t = self.node(p);
        if t.len() != 1 {
            return Err(Error::Dimension {
                op: "bce_loss",
                lhs: t.shape().to_vec(),
                rhs: vec![1],
            });
        }
        if !(target == 0.0 || target == 1.0) {
            return Err(Error::Contract(format!("bce target {target} is not 0 or 1")));
        }
        let pc = t.item().clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        let loss = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
        let rg = t.requires_grad();
        Ok(self.push(vec![1], vec![loss], Op::Bce { p, target }, rg))
    }

    /// Rows `start..end` of an `n×m` matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.matrix_dims(x, "slice_rows")?;
        if start >= end || end > n {
            return Err(Error::Contract(format!(
                "row range {start}..{end} invalid for {n} rows"
            )));
        }
        let out = self.node(x).values()[start * m..end * m].to_vec();
        let rg = self.rg(x);
        Ok(self.push(vec![end - start, m], out, Op::SliceRows { input: x, start }, rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Degenerate("concat_rows of nothing".into()))?;
        let (_, m) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != m {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![rows, m],
                    rhs: vec![r, c],
                });
            }
            rows += r;
            out.extend_from_slice(self.node(p).values());
            rg |= self.rg(p);
        }
        Ok(self.push(vec![rows, m], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.node(a);
        if shape.contains(&0) || shape.iter().product::<usize>() != t.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = t.values().to_vec();
        let rg = t.requires_grad();
        Ok(self.push(shape, out, Op::Reshape(a), rg))
    }

    /// Propagates adjoints from the scalar `loss` to every node.
    ///
    /// Afterwards every node with `requires_grad` holds a gradient; nodes the
    /// loss does not depend on hold zeros. A graph accepts one call only.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; rebuild it for another pass".into(),
            ));
        }
        if self.node(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g);
        }
        for node in &mut self.nodes {
            if node.value.requires_grad() && node.value.grad().is_none() {
                let zeros = vec![0.0; node.value.len()];
                node.value.set_grad(zeros);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = ta.dims2().unwrap();
                let n = tb.dims2().unwrap().1;
                if let Some(ga) = slot(nodes, grads, *a) {
                    // ga += g · bᵀ
                    gemm(m, n, k, g, (n, 1), tb.values(), (1, n), 1.0, ga);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    // gb += aᵀ · g
                    gemm(k, m, n, ta.values(), (1, k), g, (n, 1), 1.0, gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = nodes[a.0].value.dims2().unwrap();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Unary(op, a) => {
                let y = out.values();
                let x = nodes[a.0].value.values();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for idx in 0..g.len() {
                        let d = match op {
                            UnaryOp::Tanh => 1.0 - y[idx] * y[idx],
                            UnaryOp::Sigmoid => y[idx] * (1.0 - y[idx]),
                            UnaryOp::Exp => y[idx],
                            UnaryOp::Relu => {
                                if x[idx] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        ga[idx] += g[idx] * d;
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let (va, vb) = (nodes[a.0].value.values(), nodes[b.0].value.values());
                match op {
                    BinaryOp::Add | BinaryOp::Sub => {
                        let sign = if *op == BinaryOp::Sub { -1.0 } else { 1.0 };
                        if let Some(ga) = slot(nodes, grads, *a) {
                            ga.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                        }
                        if let Some(gb) = slot(nodes, grads, *b) {
                            gb.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                        }
                    }
                    BinaryOp::Hadamard => {
                        if let Some(ga) = slot(nodes, grads, *a) {
                            for idx in 0..g.len() {
                                ga[idx] += g[idx] * vb[idx];
                            }
                        }
                        if let Some(gb) = slot(nodes, grads, *b) {
                            for idx in 0..g.len() {
                                gb[idx] += g[idx] * va[idx];
                            }
                        }
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, g)| *d += factor * g);
                }
            }
            Op::AddRowBias(x, bias) => {
                let m = out.dims2().unwrap().1;
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for row in g.chunks_exact(m) {
                        gb.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::ScaleRows(x, weights) => {
                let m = out.dims2().unwrap().1;
                let xv = nodes[x.0].value.values();
                let wv = nodes[weights.0].value.values();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (r, (grow, drow)) in g.chunks_exact(m).zip(gx.chunks_exact_mut(m)).enumerate() {
                        drow.iter_mut().zip(grow).for_each(|(d, g)| *d += g * wv[r]);
                    }
                }
                if let Some(gw) = slot(nodes, grads, *weights) {
                    for (r, (grow, xrow)) in g.chunks_exact(m).zip(xv.chunks_exact(m)).enumerate() {
                        gw[r] += grow.iter().zip(xrow).map(|(g, x)| g * x).sum::<f64>();
                    }
                }
            }
            Op::Reduce {
                op,
                input,
                axis,
                argmax,
            } => {
                let (outer, len, inner) = reduce_layout(nodes[input.0].value.shape(), *axis);
                if let Some(ga) = slot(nodes, grads, *input) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let gi = g[o * inner + i];
                            match op {
                                Reduction::Sum | Reduction::Mean => {
                                    let share = if *op == Reduction::Mean {
                                        gi / len as f64
                                    } else {
                                        gi
                                    };
                                    for l in 0..len {
                                        ga[(o * len + l) * inner + i] += share;
                                    }
                                }
                                Reduction::Max => {
                                    let l = argmax[o * inner + i];
                                    ga[(o * len + l) * inner + i] += gi;
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = out.values();
                if let Some(ga) = slot(nodes, grads, *a) {
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    for idx in 0..g.len() {
                        ga[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
            Op::Bce { p, target } => {
                let pc = nodes[p.0]
                    .value
                    .item()
                    .clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
                if let Some(gp) = slot(nodes, grads, *p) {
                    gp[0] += g[0] * (-target / pc + (1.0 - target) / (1.0 - pc));
                }
            }
            Op::SliceRows { input, start } => {
                let m = out.dims2().unwrap().1;
                if let Some(ga) = slot(nodes, grads, *input) {
                    let off = start * m;
                    ga[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, g)| *d += g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = slot(nodes, grads, *p) {
                        gp.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(d, g)| *d += g);
                    }
                    off += len;
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
    }
}
