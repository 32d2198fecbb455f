//! Reverse-mode differentiation over a closed set of dense and graph
//! operations.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates vector-Jacobian products. Nodes built
//! only from constants never receive gradients, so constant feature matrices
//! cost nothing on the way back.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::params::ParamStore;
use super::tensor::{dot, gemm, Tensor};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Lower clamp for probabilities entering a logarithm.
pub const PROB_EPS: f64 = 1e-12;
/// Floor applied to `(1 + cos) / 2` before taking its logarithm.
pub const COS_LOGIT_FLOOR: f64 = 1e-6;

/// How a sampled selection enters the forward pass and the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Forward emits the hard one-hot vector, backward uses the relaxed
    /// vector's Jacobian.
    StraightThrough,
    /// Forward emits the hard one-hot vector and no gradient flows back.
    Detached,
    /// Forward emits the relaxed vector itself (exact gradients).
    Soft,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    Affine { a: Var, scale: f64 },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    GatherRows { a: Var, idx: Vec<usize> },
    ScatterAddRows { a: Var, idx: Vec<usize> },
    SoftmaxRows(Var),
    RowNormalize(Var),
    RowDot(Var, Var),
    RowSqNorm(Var),
    WeightedSum { a: Var, weights: Vec<f64> },
    CosLogit(Var),
    GumbelSoftmax { logits: Var, tau: f64 },
    Select { relaxed: Var, pass: bool },
    Bce { logits: Var, targets: Vec<f64>, rows: Vec<usize> },
    Propagate { adj: Arc<NormalizedAdjacency>, x: Var },
    AugPropagate { adj: Arc<NormalizedAdjacency>, users: Arc<Vec<usize>>, aug: Var, x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, String)>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, values.len());
        let value = Tensor::matrix(rows, cols, values).expect("shape checked by caller");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Adds a constant (never differentiated) as a matrix node.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.into_values(), Op::Leaf, false)
    }

    /// Adds a differentiable leaf that is not bound to a parameter name.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.into_values(), Op::Leaf, true)
    }

    /// Binds a named parameter from `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store.get(name)?.clone();
        let v = self.variable(t);
        self.params.push((v, name.to_string()));
        Ok(v)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::dim(what, format!("{da:?}"), format!("{db:?}")));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (k, n) = if trans_b { (bc, br) } else { (br, bc) };
        if ac != k {
            return Err(Error::dim("matmul inner dimension", ac, k));
        }
        let mut out = vec![0.0; ar * n];
        gemm(self.vals(a), ar, ac, false, self.vals(b), br, bc, trans_b, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(ar, n, out, Op::MatMul { a, b, trans_b }, ng))
    }

    fn zip_with(&mut self, what: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.same_shape(what, a, b)?;
        let out = self.vals(a).iter().zip(self.vals(b)).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(Error::dim("add_row bias", format!("(1, {c})"), format!("{:?}", self.dims(row))));
        }
        let bias = self.vals(row).to_vec();
        let out = self
            .vals(a)
            .chunks(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(&bias).map(|(x, b)| x + b).collect::<Vec<_>>())
            .collect();
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(r, c, out, Op::AddRow { a, row }, ng))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.vals(a).iter().map(|x| scale * x + shift).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Affine { a, scale }, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.vals(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(r, c, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::dim("concat_cols rows", rows, r));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.vals(p)[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, total, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::dim("concat_rows cols", cols, c));
            }
            rows += r;
            out.extend_from_slice(self.vals(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(Error::dim("slice_rows range", format!("<= {r}"), start + len));
        }
        let out = self.vals(a)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(len, c, out, Op::SliceRows { a, start }, ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::dim("gather_rows index", format!("< {r}"), i));
            }
            out.extend_from_slice(&self.vals(a)[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        Ok(self.push(idx.len(), c, out, Op::GatherRows { a, idx: idx.to_vec() }, ng))
    }

    /// Output row `idx[i]` accumulates input row `i`; the output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if idx.len() != r {
            return Err(Error::dim("scatter_add_rows index length", r, idx.len()));
        }
        let mut out = vec![0.0; rows * c];
        for (i, &t) in idx.iter().enumerate() {
            if t >= rows {
                return Err(Error::dim("scatter_add_rows target", format!("< {rows}"), t));
            }
            for j in 0..c {
                out[t * c + j] += self.vals(a)[i * c + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(rows, c, out, Op::ScatterAddRows { a, idx: idx.to_vec() }, ng))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.vals(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::SoftmaxRows(a), ng)
    }

    /// Scales every row to unit Euclidean norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.vals(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let n = dot(row, row).sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::RowNormalize(a), ng)
    }

    /// Per-row dot products, as an `r × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("row_dot", a, b)?;
        let out = (0..r)
            .map(|i| dot(&self.vals(a)[i * c..(i + 1) * c], &self.vals(b)[i * c..(i + 1) * c]))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, 1, out, Op::RowDot(a, b), ng))
    }

    /// Per-row squared Euclidean norms, as an `r × 1` column.
    pub fn row_sq_norm(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.vals(a).chunks(c.max(1)).map(|row| dot(row, row)).collect();
        let ng = self.ng(a);
        self.push(r, 1, out, Op::RowSqNorm(a), ng)
    }

    /// `Σ_i weights_i · a_i` over the flattened values, as a `1 × 1` scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.vals(a).len() {
            return Err(Error::dim("weighted_sum weights", self.vals(a).len(), weights.len()));
        }
        let s = dot(self.vals(a), &weights);
        let ng = self.ng(a);
        Ok(self.push(1, 1, vec![s], Op::WeightedSum { a, weights }, ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let w = vec![1.0; self.vals(a).len()];
        self.weighted_sum(a, w).expect("weights sized from input")
    }

    /// Maps cosine similarities in `[-1, 1]` to positive log-weights
    /// `log(clamp((1 + s) / 2, 1e-6, 1))`.
    pub fn cos_logit(&mut self, a: Var) -> Var {
        self.unary(a, cos_logit, Op::CosLogit(a))
    }

    /// Row-wise `softmax((logits + noise) / tau)` with fixed Gumbel noise.
    pub fn gumbel_softmax_rows(&mut self, logits: Var, noise: &[f64], tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
        }
        let (r, c) = self.dims(logits);
        if noise.len() != r * c {
            return Err(Error::dim("gumbel noise", r * c, noise.len()));
        }
        let mut out: Vec<f64> = self.vals(logits).iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let ng = self.ng(logits);
        Ok(self.push(r, c, out, Op::GumbelSoftmax { logits, tau }, ng))
    }

    /// Discretizes each row of `relaxed` to a one-hot vector at its argmax
    /// (lowest index on ties), according to `mode`.
    pub fn select(&mut self, relaxed: Var, mode: Selection) -> Var {
        let (r, c) = self.dims(relaxed);
        let out = match mode {
            Selection::Soft => self.vals(relaxed).to_vec(),
            Selection::StraightThrough | Selection::Detached => {
                let mut out = vec![0.0; r * c];
                for (i, row) in self.vals(relaxed).chunks(c.max(1)).enumerate() {
                    out[i * c + argmax(row)] = 1.0;
                }
                out
            }
        };
        let pass = mode != Selection::Detached;
        let ng = pass && self.ng(relaxed);
        self.push(r, c, out, Op::Select { relaxed, pass }, ng)
    }

    /// Summed binary cross-entropy over `rows` of an `r × 1` logit column,
    /// evaluated as `softplus(z) − y·z` so saturated logits keep a gradient.
    pub fn bce_logits(&mut self, logits: Var, targets: &[f64], rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if c != 1 {
            return Err(Error::dim("bce logits columns", 1, c));
        }
        if targets.len() != r {
            return Err(Error::dim("bce targets", r, targets.len()));
        }
        if rows.is_empty() {
            return Err(Error::Parameter("bce mask is empty".into()));
        }
        let z = self.vals(logits);
        let mut loss = 0.0;
        for &i in rows {
            if i >= r {
                return Err(Error::dim("bce mask index", format!("< {r}"), i));
            }
            loss += softplus(z[i]) - targets[i] * z[i];
        }
        let ng = self.ng(logits);
        Ok(self.push(1, 1, vec![loss], Op::Bce { logits, targets: targets.to_vec(), rows: rows.to_vec() }, ng))
    }

    /// `Â · x` for a fixed normalized adjacency.
    pub fn propagate(&mut self, adj: &Arc<NormalizedAdjacency>, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r != adj.n_nodes() {
            return Err(Error::dim("propagate rows", adj.n_nodes(), r));
        }
        let mut out = vec![0.0; r * c];
        adj.spmm_acc(self.vals(x), c, &mut out);
        let ng = self.ng(x);
        Ok(self.push(r, c, out, Op::Propagate { adj: Arc::clone(adj), x }, ng))
    }

    /// `Â' · x` where `Â'` was normalized from a base adjacency plus the
    /// `users.len() × n_items` block `aug` added to the listed user rows.
    /// Gradients reach `aug` through both the edge weights and the degrees.
    pub fn propagate_augmented(
        &mut self,
        adj: &Arc<NormalizedAdjacency>,
        users: &Arc<Vec<usize>>,
        aug: Var,
        x: Var,
    ) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r != adj.n_nodes() {
            return Err(Error::dim("propagate_augmented rows", adj.n_nodes(), r));
        }
        let (ar, ac) = self.dims(aug);
        if ar != users.len() || ac != adj.n_items() {
            return Err(Error::dim(
                "propagate_augmented block",
                format!("({}, {})", users.len(), adj.n_items()),
                format!("({ar}, {ac})"),
            ));
        }
        let mut out = vec![0.0; r * c];
        adj.spmm_acc(self.vals(x), c, &mut out);
        let ng = self.ng(x) || self.ng(aug);
        Ok(self.push(
            r,
            c,
            out,
            Op::AugPropagate { adj: Arc::clone(adj), users: Arc::clone(users), aug, x },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::dim("backward seed", "(1, 1)", format!("{:?}", self.dims(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.values();
        let (r, c) = node.value.dims2();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (ar, ac) = self.dims(*a);
                let (br, bc) = self.dims(*b);
                if self.ng(*a) {
                    let da = acc_buf(grads, *a, ar * ac);
                    // dA = G · op(B)ᵀ
                    gemm(g, r, c, false, self.vals(*b), br, bc, !trans_b, da, 1.0);
                }
                if self.ng(*b) {
                    let db = acc_buf(grads, *b, br * bc);
                    if *trans_b {
                        gemm(g, r, c, true, self.vals(*a), ar, ac, false, db, 1.0);
                    } else {
                        gemm(self.vals(*a), ar, ac, true, g, r, c, false, db, 1.0);
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_scaled(grads, *a, g, 1.0);
                self.acc_scaled(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.vals(*b);
                    let da = acc_buf(grads, *a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] * bv[k];
                    }
                }
                if self.ng(*b) {
                    let av = self.vals(*a);
                    let db = acc_buf(grads, *b, g.len());
                    for k in 0..g.len() {
                        db[k] += g[k] * av[k];
                    }
                }
            }
            Op::AddRow { a, row } => {
                self.acc_scaled(grads, *a, g, 1.0);
                if self.ng(*row) {
                    let dr = acc_buf(grads, *row, c);
                    for chunk in g.chunks(c.max(1)) {
                        for j in 0..c {
                            dr[j] += chunk[j];
                        }
                    }
                }
            }
            Op::Affine { a, scale } => self.acc_scaled(grads, *a, g, *scale),
            Op::Relu(a) => self.acc_map(grads, *a, g.len(), |k| if y[k] > 0.0 { g[k] } else { 0.0 }),
            Op::Sigmoid(a) => self.acc_map(grads, *a, g.len(), |k| g[k] * y[k] * (1.0 - y[k])),
            Op::Tanh(a) => self.acc_map(grads, *a, g.len(), |k| g[k] * (1.0 - y[k] * y[k])),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    if self.ng(p) {
                        let dp = acc_buf(grads, p, r * pc);
                        for i in 0..r {
                            for j in 0..pc {
                                dp[i * pc + j] += g[i * c + offset + j];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.vals(p).len();
                    self.acc_scaled(grads, p, &g[offset..offset + n], 1.0);
                    offset += n;
                }
            }
            Op::SliceRows { a, start } => {
                if self.ng(*a) {
                    let n = self.vals(*a).len();
                    let da = acc_buf(grads, *a, n);
                    for (k, gv) in g.iter().enumerate() {
                        da[start * c + k] += gv;
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                if self.ng(*a) {
                    let n = self.vals(*a).len();
                    let da = acc_buf(grads, *a, n);
                    for (i, &t) in idx.iter().enumerate() {
                        for j in 0..c {
                            da[t * c + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::ScatterAddRows { a, idx } => {
                if self.ng(*a) {
                    let n = self.vals(*a).len();
                    let da = acc_buf(grads, *a, n);
                    for (i, &t) in idx.iter().enumerate() {
                        for j in 0..c {
                            da[i * c + j] += g[t * c + j];
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => self.softmax_backward(grads, *a, y, g, c, 1.0),
            Op::GumbelSoftmax { logits, tau } => self.softmax_backward(grads, *logits, y, g, c, 1.0 / tau),
            Op::RowNormalize(a) => {
                if self.ng(*a) {
                    let x = self.vals(*a);
                    let da = acc_buf(grads, *a, x.len());
                    for i in 0..r {
                        let xr = &x[i * c..(i + 1) * c];
                        let n = dot(xr, xr).sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let proj = dot(yr, gr);
                        for j in 0..c {
                            da[i * c + j] += (gr[j] - yr[j] * proj) / n;
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let cols = self.dims(*a).1;
                if self.ng(*a) {
                    let bv = self.vals(*b);
                    let da = acc_buf(grads, *a, bv.len());
                    for i in 0..r {
                        for j in 0..cols {
                            da[i * cols + j] += g[i] * bv[i * cols + j];
                        }
                    }
                }
                if self.ng(*b) {
                    let av = self.vals(*a);
                    let db = acc_buf(grads, *b, av.len());
                    for i in 0..r {
                        for j in 0..cols {
                            db[i * cols + j] += g[i] * av[i * cols + j];
                        }
                    }
                }
            }
            Op::RowSqNorm(a) => {
                if self.ng(*a) {
                    let cols = self.dims(*a).1;
                    let av = self.vals(*a);
                    let da = acc_buf(grads, *a, av.len());
                    for i in 0..r {
                        for j in 0..cols {
                            da[i * cols + j] += 2.0 * g[i] * av[i * cols + j];
                        }
                    }
                }
            }
            Op::WeightedSum { a, weights } => {
                let s = g[0];
                self.acc_map(grads, *a, weights.len(), |k| s * weights[k]);
            }
            Op::CosLogit(a) => {
                let x = self.vals(*a);
                self.acc_map(grads, *a, g.len(), |k| {
                    let v = 0.5 * (1.0 + x[k]);
                    if v > COS_LOGIT_FLOOR && v < 1.0 {
                        g[k] * 0.5 / v
                    } else {
                        0.0
                    }
                });
            }
            Op::Select { relaxed, pass } => {
                if *pass {
                    self.acc_scaled(grads, *relaxed, g, 1.0);
                }
            }
            Op::Bce { logits, targets, rows } => {
                let s = g[0];
                if self.ng(*logits) {
                    let z = self.vals(*logits);
                    let dz = acc_buf(grads, *logits, z.len());
                    for &i in rows {
                        dz[i] += s * (sigmoid(z[i]) - targets[i]);
                    }
                }
            }
            Op::Propagate { adj, x } => {
                if self.ng(*x) {
                    let dx = acc_buf(grads, *x, g.len());
                    adj.spmm_acc(g, c, dx);
                }
            }
            Op::AugPropagate { adj, users, aug, x } => {
                if self.ng(*x) {
                    let dx = acc_buf(grads, *x, g.len());
                    adj.spmm_acc(g, c, dx);
                }
                if self.ng(*aug) {
                    let block = adj.augmentation_gradient(users, g, self.vals(*x), c);
                    self.acc_scaled(grads, *aug, &block, 1.0);
                }
            }
        }
    }

    fn softmax_backward(&self, grads: &mut [Option<Vec<f64>>], a: Var, y: &[f64], g: &[f64], c: usize, scale: f64) {
        if !self.ng(a) {
            return;
        }
        let da = acc_buf(grads, a, y.len());
        for (i, (yr, gr)) in y.chunks(c.max(1)).zip(g.chunks(c.max(1))).enumerate() {
            let s = dot(yr, gr);
            for j in 0..c {
                da[i * c + j] += scale * yr[j] * (gr[j] - s);
            }
        }
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<f64>>], a: Var, g: &[f64], scale: f64) {
        if !self.ng(a) {
            return;
        }
        let da = acc_buf(grads, a, g.len());
        for (d, v) in da.iter_mut().zip(g) {
            *d += scale * v;
        }
    }

    fn acc_map(&self, grads: &mut [Option<Vec<f64>>], a: Var, n: usize, f: impl Fn(usize) -> f64) {
        if !self.ng(a) {
            return;
        }
        let da = acc_buf(grads, a, n);
        for (k, d) in da.iter_mut().enumerate() {
            *d += f(k);
        }
    }
}

fn acc_buf(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every named parameter bound on `tape`; parameters the
    /// loss does not depend on get zeros.
    pub fn named(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (v, name) in &tape.params {
            let n = tape.value(*v).numel();
            let g = self.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            match out.get_mut(name) {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }

    /// Writes the named gradients into the matching tensors of `store`.
    pub fn write_into(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (name, g) in self.named(tape) {
            store.get_mut(&name)?.set_grad(g)?;
        }
        Ok(())
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn cos_logit(x: f64) -> f64 {
    (0.5 * (1.0 + x)).clamp(COS_LOGIT_FLOOR, 1.0).ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, grad_check_fn};

    fn mat(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.constant(mat(1, 2, &[1.0, 2.0]));
        let w = t.variable(mat(2, 1, &[3.0, 4.0]));
        let y = t.matmul(x, w).unwrap();
        let l = t.sum_all(y);
        let g = t.backward(l).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn dimension_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.constant(mat(2, 3, &[0.0; 6]));
        let b = t.constant(mat(2, 3, &[0.0; 6]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        let c = t.constant(mat(3, 2, &[0.0; 6]));
        assert!(t.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn select_modes() {
        let mut t = Tape::new();
        let r = t.variable(mat(1, 3, &[0.2, 0.5, 0.3]));
        let hard = t.select(r, Selection::StraightThrough);
        assert_eq!(t.value(hard).values(), &[0.0, 1.0, 0.0]);
        let soft = t.select(r, Selection::Soft);
        assert_eq!(t.value(soft).values(), &[0.2, 0.5, 0.3]);
        let w = t.constant(mat(1, 3, &[1.0, 2.0, 3.0]));
        let p = t.mul(hard, w).unwrap();
        let l = t.sum_all(p);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(r).unwrap(), &[1.0, 2.0, 3.0]);

        let mut t = Tape::new();
        let r = t.variable(mat(1, 3, &[0.2, 0.5, 0.3]));
        let det = t.select(r, Selection::Detached);
        let l = t.sum_all(det);
        let g = t.backward(l).unwrap();
        assert!(g.get(r).is_none());
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let err = grad_check_fn(
            &[mat(2, 3, &[0.3, -0.7, 1.1, 0.5, -0.2, 0.9]), mat(2, 3, &[-0.4, 0.8, 0.1, 0.6, 1.3, -1.0])],
            |t, v| {
                let s = t.sigmoid(v[0]);
                let h = t.tanh(v[1]);
                let m = t.mul(s, h)?;
                let r = t.relu(v[0]);
                let d = t.sub(m, r)?;
                let a = t.affine(d, 1.7, 0.3);
                let sm = t.softmax_rows(a);
                let n = t.row_normalize(v[1]);
                let rd = t.row_dot(sm, n)?;
                let sq = t.row_sq_norm(a);
                let both = t.add(rd, sq)?;
                t.weighted_sum(both, vec![0.7, -1.3])
            },
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let err = grad_check_fn(
            &[mat(3, 2, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]), mat(2, 3, &[0.7, -0.8, 0.9, 1.0, 0.2, -0.3]), mat(1, 2, &[0.05, -0.1])],
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let q = t.matmul_nt(p, p)?;
                let cat = t.concat_cols(&[q, v[0]])?;
                let sl = t.slice_rows(cat, 1, 2)?;
                let ga = t.gather_rows(cat, &[2, 0, 2])?;
                let rows = t.concat_rows(&[sl, ga])?;
                let sc = t.scatter_add_rows(rows, &[0, 1, 1, 0, 2], 3)?;
                let first = t.slice_rows(sc, 0, 3)?;
                let narrow = t.matmul_nt(first, cat)?;
                let nb = t.slice_rows(narrow, 0, 1)?;
                let b2 = t.matmul(v[2], v[1])?;
                let s = t.add(nb, b2)?;
                let sq = t.row_sq_norm(s);
                Ok(t.sum_all(sq))
            },
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn bias_and_logit_ops_match_finite_differences() {
        let err = grad_check_fn(
            &[mat(2, 3, &[0.3, -0.7, 0.1, 0.5, -0.2, 0.9]), mat(1, 3, &[0.1, 0.2, -0.3])],
            |t, v| {
                let b = t.add_row(v[0], v[1])?;
                let cs = t.row_normalize(b);
                let unit = t.constant(mat(2, 3, &[0.6, 0.8, 0.0, 0.0, 0.6, 0.8]));
                let d = t.row_dot(cs, unit)?;
                let l = t.cos_logit(d);
                let gs = t.gumbel_softmax_rows(b, &[0.1, -0.2, 0.3, 0.0, 0.5, -0.1], 0.7)?;
                let p = t.sigmoid(l);
                let ps = t.sum_all(p);
                let bce = t.bce_logits(l, &[1.0, 0.0], &[0, 1])?;
                let bce = t.add(bce, ps)?;
                let s = t.sum_all(gs);
                let sq = t.row_sq_norm(gs);
                let sqs = t.sum_all(sq);
                let x = t.add(bce, sqs)?;
                t.add(x, s)
            },
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn quadratic_grad_check() {
        let mut p = ParamStore::new(0);
        p.insert("w", Tensor::vector(vec![3.0])).unwrap();
        let err = grad_check(
            |t, p| {
                let w = t.param(p, "w")?;
                let sq = t.mul(w, w)?;
                Ok(t.sum_all(sq))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn gumbel_rejects_non_positive_tau() {
        let mut t = Tape::new();
        let l = t.constant(mat(1, 2, &[0.0, 0.0]));
        assert!(matches!(t.gumbel_softmax_rows(l, &[0.0, 0.0], 0.0), Err(Error::Parameter(_))));
    }
}
