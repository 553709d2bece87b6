use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    Relu(Var),
    Reshape(Var),
    MeanAxis {
        input: Var,
        outer: usize,
        axis: usize,
        inner: usize,
    },
    Mse(Var, Var),
    GatherRows {
        table: Var,
        index: Arc<[usize]>,
    },
    GatherDot {
        a: Var,
        b: Var,
        a_index: Arc<[usize]>,
        b_index: Arc<[usize]>,
        scale: f64,
    },
    ScaleRows(Var, Var),
    SegmentSoftmax {
        scores: Var,
        segments: Arc<[usize]>,
        num_segments: usize,
    },
    SegmentSum {
        input: Var,
        segments: Arc<[usize]>,
    },
    WeightedAggregate {
        weights: Var,
        values: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
    },
    /// Per-channel `gamma * (x - mean) * inv_std + beta`; with batch
    /// statistics the mean and variance depend on `x`.
    Normalize {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape serves one forward/backward pass; build a fresh one per step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when the loss does
    /// not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_slice(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn shape_err(op: &'static str, detail: &'static str) -> DiffError {
    DiffError::Shape { op, detail }
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize), DiffError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(shape_err(op, "expected a matrix")),
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], name: &'static str) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: name });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn val(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// `(m x k) . (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = as_matrix(self.val(a), "matmul")?;
        let (k2, n) = as_matrix(self.val(b), "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", "inner dimensions differ"));
        }
        let (av, bv) = (self.val(a).data(), self.val(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(av[i * k + p], &bv[p * n..(p + 1) * n], row);
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        self.push(t, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(shape_err("add", "operand shapes differ"));
        }
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.val(a).shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds the length-`n` vector `bias` to every row of the `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (_, n) = as_matrix(self.val(a), "add_row")?;
        if self.val(bias).len() != n {
            return Err(shape_err("add_row", "bias length differs from column count"));
        }
        let mut data = self.val(a).data().to_vec();
        let bv = self.val(bias).data();
        for row in data.chunks_exact_mut(n.max(1)) {
            for (x, b) in row.iter_mut().zip(bv) {
                *x += b;
            }
        }
        let t = Tensor::new(self.val(a).shape().to_vec(), data)?;
        self.push(t, Op::AddRow(a, bias), &[a, bias], "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(shape_err("mul", "operand shapes differ"));
        }
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.val(a).shape().to_vec(), data)?;
        self.push(t, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, DiffError> {
        let data = self.val(a).data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(self.val(a).shape().to_vec(), data)?;
        self.push(t, Op::Scale(a, factor), &[a], "scale")
    }

    /// Concatenates two matrices along the last dimension.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, p) = as_matrix(self.val(a), "concat_cols")?;
        let (m2, q) = as_matrix(self.val(b), "concat_cols")?;
        if m != m2 {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let (av, bv) = (self.val(a).data(), self.val(b).data());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&av[i * p..(i + 1) * p]);
            out.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        let t = Tensor::matrix(m, p + q, out)?;
        self.push(t, Op::ConcatCols(a, b), &[a, b], "concat_cols")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let data = self.val(a).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(self.val(a).shape().to_vec(), data)?;
        self.push(t, Op::Relu(a), &[a], "relu")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let t = Tensor::new(shape.to_vec(), self.val(a).data().to_vec())
            .map_err(|_| shape_err("reshape", "volume changes"))?;
        self.push(t, Op::Reshape(a), &[a], "reshape")
    }

    /// Mean over dimension `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let shape = self.val(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(shape_err("mean_axis", "axis out of range"));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        if len == 0 {
            return Err(shape_err("mean_axis", "empty axis"));
        }
        let av = self.val(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let base = (o * len + l) * inner;
                axpy(1.0, &av[base..base + inner], dst);
            }
            for v in dst.iter_mut() {
                *v /= len as f64;
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let t = Tensor::new(out_shape, out)?;
        self.push(
            t,
            Op::MeanAxis {
                input: a,
                outer,
                axis: len,
                inner,
            },
            &[a],
            "mean_axis",
        )
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, DiffError> {
        let (p, t) = (self.val(pred), self.val(target));
        if p.shape() != t.shape() {
            return Err(shape_err("mse", "prediction and target shapes differ"));
        }
        if p.is_empty() {
            return Err(shape_err("mse", "empty input"));
        }
        let sum: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let loss = Tensor::scalar(sum / p.len() as f64);
        self.push(loss, Op::Mse(pred, target), &[pred, target], "mse")
    }

    /// Row `index[r]` of `table` becomes row `r` of the output.
    pub fn gather_rows(&mut self, table: Var, index: Arc<[usize]>) -> Result<Var, DiffError> {
        let (rows, cols) = as_matrix(self.val(table), "gather_rows")?;
        if index.iter().any(|&i| i >= rows) {
            return Err(shape_err("gather_rows", "index out of range"));
        }
        let tv = self.val(table).data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            out.extend_from_slice(&tv[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::matrix(index.len(), cols, out)?;
        self.push(t, Op::GatherRows { table, index }, &[table], "gather_rows")
    }

    /// `out[r] = scale * <a[a_index[r]], b[b_index[r]]>` without
    /// materializing the gathered rows.
    pub fn gather_dot(
        &mut self,
        a: Var,
        b: Var,
        a_index: Arc<[usize]>,
        b_index: Arc<[usize]>,
        scale: f64,
    ) -> Result<Var, DiffError> {
        let (ra, ca) = as_matrix(self.val(a), "gather_dot")?;
        let (rb, cb) = as_matrix(self.val(b), "gather_dot")?;
        if ca != cb || a_index.len() != b_index.len() {
            return Err(shape_err("gather_dot", "column counts or index lengths differ"));
        }
        if a_index.iter().any(|&i| i >= ra) || b_index.iter().any(|&i| i >= rb) {
            return Err(shape_err("gather_dot", "index out of range"));
        }
        let (av, bv) = (self.val(a).data(), self.val(b).data());
        let out = a_index
            .iter()
            .zip(b_index.iter())
            .map(|(&i, &j)| scale * dot(&av[i * ca..(i + 1) * ca], &bv[j * ca..(j + 1) * ca]))
            .collect();
        let t = Tensor::vector(out);
        self.push(
            t,
            Op::GatherDot {
                a,
                b,
                a_index,
                b_index,
                scale,
            },
            &[a, b],
            "gather_dot",
        )
    }

    /// Multiplies row `r` of an `m x n` matrix by `weights[r]`.
    pub fn scale_rows(&mut self, m: Var, weights: Var) -> Result<Var, DiffError> {
        let (rows, cols) = as_matrix(self.val(m), "scale_rows")?;
        if self.val(weights).len() != rows {
            return Err(shape_err("scale_rows", "one weight per row required"));
        }
        let mut out = self.val(m).data().to_vec();
        let wv = self.val(weights).data();
        for (row, w) in out.chunks_exact_mut(cols.max(1)).zip(wv) {
            for x in row.iter_mut() {
                *x *= w;
            }
        }
        let t = Tensor::matrix(rows, cols, out)?;
        self.push(t, Op::ScaleRows(m, weights), &[m, weights], "scale_rows")
    }

    /// Softmax of `scores` within each group of equal segment id.
    ///
    /// Each group is shifted by its maximum before exponentiation.
    pub fn segment_softmax(
        &mut self,
        scores: Var,
        segments: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, DiffError> {
        let sv = self.val(scores).data();
        if sv.len() != segments.len() {
            return Err(shape_err("segment_softmax", "one segment id per score required"));
        }
        if segments.iter().any(|&s| s >= num_segments) {
            return Err(shape_err("segment_softmax", "segment id out of range"));
        }
        let mut max = vec![f64::NEG_INFINITY; num_segments];
        for (&s, &x) in segments.iter().zip(sv) {
            if x > max[s] {
                max[s] = x;
            }
        }
        let mut out: Vec<f64> = segments.iter().zip(sv).map(|(&s, &x)| libm::exp(x - max[s])).collect();
        let mut sum = vec![0.0; num_segments];
        for (&s, &e) in segments.iter().zip(&out) {
            sum[s] += e;
        }
        for (&s, e) in segments.iter().zip(out.iter_mut()) {
            *e /= sum[s];
        }
        let t = Tensor::vector(out);
        self.push(
            t,
            Op::SegmentSoftmax {
                scores,
                segments,
                num_segments,
            },
            &[scores],
            "segment_softmax",
        )
    }

    /// Sums rows of `input` into `num_segments` output rows by segment id;
    /// segments without rows stay zero.
    pub fn segment_sum(
        &mut self,
        input: Var,
        segments: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, DiffError> {
        let (rows, cols) = as_matrix(self.val(input), "segment_sum")?;
        if rows != segments.len() {
            return Err(shape_err("segment_sum", "one segment id per row required"));
        }
        if segments.iter().any(|&s| s >= num_segments) {
            return Err(shape_err("segment_sum", "segment id out of range"));
        }
        let iv = self.val(input).data();
        let mut out = vec![0.0; num_segments * cols];
        for (r, &s) in segments.iter().enumerate() {
            axpy(1.0, &iv[r * cols..(r + 1) * cols], &mut out[s * cols..(s + 1) * cols]);
        }
        let t = Tensor::matrix(num_segments, cols, out)?;
        self.push(t, Op::SegmentSum { input, segments }, &[input], "segment_sum")
    }

    /// `out[dst[a]] += weights[a] * values[src[a]]` over arcs `a`: the
    /// fusion of gather_rows, scale_rows and segment_sum.
    pub fn weighted_aggregate(
        &mut self,
        weights: Var,
        values: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, DiffError> {
        let (rows, cols) = as_matrix(self.val(values), "weighted_aggregate")?;
        if self.val(weights).len() != src.len() || src.len() != dst.len() {
            return Err(shape_err("weighted_aggregate", "one weight, source and destination per arc"));
        }
        if src.iter().any(|&s| s >= rows) || dst.iter().any(|&t| t >= num_segments) {
            return Err(shape_err("weighted_aggregate", "index out of range"));
        }
        let (wv, vv) = (self.val(weights).data(), self.val(values).data());
        let mut out = vec![0.0; num_segments * cols];
        for ((&s, &t), &w) in src.iter().zip(dst.iter()).zip(wv) {
            axpy(w, &vv[s * cols..(s + 1) * cols], &mut out[t * cols..(t + 1) * cols]);
        }
        let t = Tensor::matrix(num_segments, cols, out)?;
        self.push(
            t,
            Op::WeightedAggregate {
                weights,
                values,
                src,
                dst,
            },
            &[weights, values],
            "weighted_aggregate",
        )
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var, DiffError> {
        let (rows, cols) = as_matrix(self.val(x), "batch_norm")?;
        if self.val(gamma).len() != cols || self.val(beta).len() != cols {
            return Err(shape_err("batch_norm", "scale/shift length differs from channel count"));
        }
        let xv = self.val(x).data();
        let (g, b) = (self.val(gamma).data(), self.val(beta).data());
        let mut normalized = vec![0.0; rows * cols];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                normalized[k] = (xv[k] - mean[c]) * inv_std[c];
                out[k] = g[c] * normalized[k] + b[c];
            }
        }
        let t = Tensor::matrix(rows, cols, out)?;
        self.push(
            t,
            Op::Normalize {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
            "batch_norm",
        )
    }

    /// Walks the tape backwards from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        if self.val(loss).len() != 1 {
            return Err(DiffError::NotScalar);
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Gradient accumulator for `v`, or `None` when `v` needs no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.val(a).rows(), self.val(a).cols());
                let n = self.val(b).cols();
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                if let Some(ga) = self.slot(grads, a) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(gi, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(av[i * k + p], gi, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, v) {
                        axpy(1.0, g, gv);
                    }
                }
            }
            &Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(1.0, g, ga);
                }
                let n = self.val(bias).len();
                if let Some(gb) = self.slot(grads, bias) {
                    for row in g.chunks_exact(n.max(1)) {
                        axpy(1.0, row, gb);
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                if let Some(ga) = self.slot(grads, a) {
                    for ((s, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *s += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((s, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *s += gi * ai;
                    }
                }
            }
            &Op::Scale(a, factor) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(factor, g, ga);
                }
            }
            &Op::ConcatCols(a, b) => {
                let (p, q) = (self.val(a).cols(), self.val(b).cols());
                let w = p + q;
                if let Some(ga) = self.slot(grads, a) {
                    for (dst, row) in ga.chunks_exact_mut(p.max(1)).zip(g.chunks_exact(w)) {
                        axpy(1.0, &row[..p], dst);
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for (dst, row) in gb.chunks_exact_mut(q.max(1)).zip(g.chunks_exact(w)) {
                        axpy(1.0, &row[p..], dst);
                    }
                }
            }
            &Op::Relu(a) => {
                let av = self.val(a).data();
                if let Some(ga) = self.slot(grads, a) {
                    for ((s, gi), x) in ga.iter_mut().zip(g).zip(av) {
                        if *x > 0.0 {
                            *s += gi;
                        }
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(1.0, g, ga);
                }
            }
            &Op::MeanAxis {
                input,
                outer,
                axis,
                inner,
            } => {
                if let Some(gi) = self.slot(grads, input) {
                    let w = 1.0 / axis as f64;
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..axis {
                            let base = (o * axis + l) * inner;
                            axpy(w, src, &mut gi[base..base + inner]);
                        }
                    }
                }
            }
            &Op::Mse(pred, target) => {
                let (p, t) = (self.val(pred).data(), self.val(target).data());
                let w = 2.0 * g[0] / p.len() as f64;
                if let Some(gp) = self.slot(grads, pred) {
                    for ((s, a), b) in gp.iter_mut().zip(p).zip(t) {
                        *s += w * (a - b);
                    }
                }
                if let Some(gt) = self.slot(grads, target) {
                    for ((s, a), b) in gt.iter_mut().zip(p).zip(t) {
                        *s -= w * (a - b);
                    }
                }
            }
            Op::GatherRows { table, index } => {
                let cols = self.val(*table).cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &i) in index.iter().enumerate() {
                        axpy(1.0, &g[r * cols..(r + 1) * cols], &mut gt[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::GatherDot {
                a,
                b,
                a_index,
                b_index,
                scale,
            } => {
                let c = self.val(*a).cols();
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((&i, &j), gr) in a_index.iter().zip(b_index.iter()).zip(g) {
                        axpy(scale * gr, &bv[j * c..(j + 1) * c], &mut ga[i * c..(i + 1) * c]);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((&i, &j), gr) in a_index.iter().zip(b_index.iter()).zip(g) {
                        axpy(scale * gr, &av[i * c..(i + 1) * c], &mut gb[j * c..(j + 1) * c]);
                    }
                }
            }
            &Op::ScaleRows(m, weights) => {
                let cols = self.val(m).cols();
                let (mv, wv) = (self.val(m).data(), self.val(weights).data());
                if let Some(gm) = self.slot(grads, m) {
                    for ((dst, row), w) in gm.chunks_exact_mut(cols.max(1)).zip(g.chunks_exact(cols.max(1))).zip(wv) {
                        axpy(*w, row, dst);
                    }
                }
                if let Some(gw) = self.slot(grads, weights) {
                    for ((s, row), mrow) in gw.iter_mut().zip(g.chunks_exact(cols.max(1))).zip(mv.chunks_exact(cols.max(1))) {
                        *s += dot(row, mrow);
                    }
                }
            }
            Op::SegmentSoftmax {
                scores,
                segments,
                num_segments,
            } => {
                let y = out.data();
                if let Some(gs) = self.slot(grads, *scores) {
                    let mut weighted = vec![0.0; *num_segments];
                    for ((&s, yi), gi) in segments.iter().zip(y).zip(g) {
                        weighted[s] += yi * gi;
                    }
                    for (((slot, &s), yi), gi) in gs.iter_mut().zip(segments.iter()).zip(y).zip(g) {
                        *slot += yi * (gi - weighted[s]);
                    }
                }
            }
            Op::SegmentSum { input, segments } => {
                let cols = self.val(*input).cols();
                if let Some(gi) = self.slot(grads, *input) {
                    for (r, &s) in segments.iter().enumerate() {
                        axpy(1.0, &g[s * cols..(s + 1) * cols], &mut gi[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::WeightedAggregate {
                weights,
                values,
                src,
                dst,
            } => {
                let cols = self.val(*values).cols();
                let (wv, vv) = (self.val(*weights).data(), self.val(*values).data());
                if let Some(gw) = self.slot(grads, *weights) {
                    for ((slot, &s), &t) in gw.iter_mut().zip(src.iter()).zip(dst.iter()) {
                        *slot += dot(&g[t * cols..(t + 1) * cols], &vv[s * cols..(s + 1) * cols]);
                    }
                }
                if let Some(gv) = self.slot(grads, *values) {
                    for ((&s, &t), &w) in src.iter().zip(dst.iter()).zip(wv) {
                        axpy(w, &g[t * cols..(t + 1) * cols], &mut gv[s * cols..(s + 1) * cols]);
                    }
                }
            }
            Op::Normalize {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let (rows, cols) = (self.val(*x).rows(), self.val(*x).cols());
                let gv = self.val(*gamma).data();
                let mut sum_g = vec![0.0; cols];
                let mut sum_gx = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let k = r * cols + c;
                        sum_g[c] += g[k];
                        sum_gx[c] += g[k] * normalized[k];
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    axpy(1.0, &sum_g, gb);
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    axpy(1.0, &sum_gx, gg);
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let m = rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            let k = r * cols + c;
                            gx[k] += if *batch_stats {
                                gv[c] * inv_std[c] / m * (m * g[k] - sum_g[c] - normalized[k] * sum_gx[c])
                            } else {
                                gv[c] * inv_std[c] * g[k]
                            };
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Batch-normalization running statistics for one layer.
///
/// Training normalizes each channel over all rows with the biased batch
/// variance and folds the batch mean and unbiased variance into the
/// running estimates; evaluation uses the running estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Records `gamma * normalize(x) + beta`; in training mode also updates
    /// the running statistics (pass `update = false` to leave them alone).
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        update: bool,
    ) -> Result<Var, DiffError> {
        let (rows, cols) = as_matrix(tape.val(x), "batch_norm")?;
        if cols != self.channels() {
            return Err(shape_err("batch_norm", "channel count differs from state"));
        }
        match mode {
            NormMode::Eval => {
                let inv_std = self.running_var.iter().map(|v| 1.0 / libm::sqrt(v + self.eps)).collect();
                let mean = self.running_mean.clone();
                tape.normalize(x, gamma, beta, &mean, inv_std, false)
            }
            NormMode::Train => {
                if rows < 2 {
                    return Err(DiffError::TooFewRows { op: "batch_norm" });
                }
                let xv = tape.val(x).data();
                let mut mean = vec![0.0; cols];
                for row in xv.chunks_exact(cols) {
                    axpy(1.0, row, &mut mean);
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; cols];
                for row in xv.chunks_exact(cols) {
                    for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                let inv_std = var.iter().map(|v| 1.0 / libm::sqrt(v + self.eps)).collect();
                let out = tape.normalize(x, gamma, beta, &mean, inv_std, true)?;
                if update {
                    let unbias = rows as f64 / (rows as f64 - 1.0);
                    for c in 0..cols {
                        self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
                        self.running_var[c] =
                            (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c] * unbias;
                    }
                }
                Ok(out)
            }
        }
    }
}
