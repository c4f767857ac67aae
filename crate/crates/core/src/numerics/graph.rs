//! Reverse-mode tape over [`Matrix`] values.
//!
//! Every op appends a node holding its output; `backward` walks the tape in
//! reverse node-index order, so gradient accumulation order is fixed and
//! reruns are bit-identical.

use super::matrix::{self, matmul_at, matmul_bt, row_moments, Matrix};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered set of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let name = name.into();
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, idx: usize) -> &Matrix {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.values[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    BlockRowDot {
        q: NodeId,
        k: NodeId,
        block: usize,
    },
    BlockMix {
        w: NodeId,
        v: NodeId,
        block: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    // `None` for parameter leaves, which read through to the borrowed set.
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Parameters are borrowed, never copied.
pub struct Graph<'p> {
    params: &'p ParamSet,
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node>,
}

static EMPTY: ParamSet = ParamSet {
    names: Vec::new(),
    values: Vec::new(),
};

impl Default for Graph<'static> {
    fn default() -> Self {
        Graph::new(&EMPTY)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(i)) => self.params.get(*i),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        ensure!(
            v.shape() == (1, 1),
            Contract,
            "expected scalar node, found {:?}",
            v.shape()
        );
        Ok(v.get(0, 0))
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Constant,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf for parameter `idx`; repeated calls return the same node.
    pub fn param(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(idx),
            needs_grad: true,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[idx] = Some(id);
        id
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<NodeId> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        Ok(self.param(idx))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        ensure!(sa == sb, Dimension, "{what}: {sa:?} vs {sb:?}");
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = matrix::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        ensure!(
            va.cols() == vb.cols(),
            Dimension,
            "matmul_bt {:?} by transpose of {:?}",
            va.shape(),
            vb.shape()
        );
        let out = matmul_bt(va, vb);
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    /// Adds a `1×C` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        ensure!(
            vr.rows() == 1 && vr.cols() == va.cols(),
            Dimension,
            "add_row {:?} with {:?}",
            va.shape(),
            vr.shape()
        );
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vr.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let out = matrix::softmax_rows(self.value(a))?;
        Ok(self.push(out, Op::SoftmaxRows(a), &[a]))
    }

    /// `gain`/`bias` are `1×C` nodes.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let out = matrix::layer_norm(
            self.value(x),
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        )?;
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }, &[x, gain, bias]))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        ensure!(
            start + len <= va.cols(),
            Dimension,
            "slice_cols {start}+{len} of {} columns",
            va.cols()
        );
        let out = va.slice_cols(start, len);
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        ensure!(!parts.is_empty(), Dimension, "concat of nothing");
        let rows = self.value(parts[0]).rows();
        ensure!(
            parts.iter().all(|p| self.value(*p).rows() == rows),
            Dimension,
            "concat_cols with differing row counts"
        );
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        ensure!(
            indices.iter().all(|&i| i < va.rows()),
            Range,
            "gather index beyond {} rows",
            va.rows()
        );
        let mut out = Matrix::zeros(indices.len(), va.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(va.row(i));
        }
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    /// For `q: F×h` and `k: (F·block)×h`, returns `F×block` with
    /// `out[f][l] = q_f · k_{f·block+l}`. Row `f` never touches another
    /// frame's keys.
    pub fn block_row_dot(&mut self, q: NodeId, k: NodeId, block: usize) -> Result<NodeId> {
        let (vq, vk) = (self.value(q), self.value(k));
        ensure!(
            block >= 1 && vk.rows() == vq.rows() * block && vk.cols() == vq.cols(),
            Dimension,
            "block_row_dot q {:?}, k {:?}, block {block}",
            vq.shape(),
            vk.shape()
        );
        let mut out = Matrix::zeros(vq.rows(), block);
        for f in 0..vq.rows() {
            for l in 0..block {
                out.set(f, l, matrix::dot(vq.row(f), vk.row(f * block + l)));
            }
        }
        Ok(self.push(out, Op::BlockRowDot { q, k, block }, &[q, k]))
    }

    /// For `w: F×block` and `v: (F·block)×h`, returns `F×h` with
    /// `out_f = Σ_l w[f][l]·v_{f·block+l}`.
    pub fn block_mix(&mut self, w: NodeId, v: NodeId, block: usize) -> Result<NodeId> {
        let (vw, vv) = (self.value(w), self.value(v));
        ensure!(
            vw.cols() == block && vv.rows() == vw.rows() * block,
            Dimension,
            "block_mix w {:?}, v {:?}, block {block}",
            vw.shape(),
            vv.shape()
        );
        let mut out = Matrix::zeros(vw.rows(), vv.cols());
        for f in 0..vw.rows() {
            for l in 0..block {
                let wl = vw.get(f, l);
                let src = vv.row(f * block + l);
                for (o, s) in out.row_mut(f).iter_mut().zip(src) {
                    *o += wl * s;
                }
            }
        }
        Ok(self.push(out, Op::BlockMix { w, v, block }, &[w, v]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.data().len() as f64;
        self.push(Matrix::filled(1, 1, s), Op::Mean(a), &[a])
    }

    /// Mean squared difference, as a scalar node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.scalar(loss)?;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params = vec![None; self.params.len()];
        for (p, node) in self.param_nodes.iter().enumerate() {
            if let Some(id) = node {
                params[p] = grads[id.0].take();
            }
        }
        Ok(Gradients {
            params,
            shapes: self.params.values().iter().map(Matrix::shape).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let wants = |id: NodeId| self.nodes[id.0].needs_grad;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, matmul_bt(g, self.value(*b)));
                }
                if wants(*b) {
                    accumulate(grads, *b, matmul_at(self.value(*a), g));
                }
            }
            Op::MatMulBt(a, b) => {
                if wants(*a) {
                    let mut da = Matrix::zeros(g.rows(), self.value(*b).cols());
                    matrix::matmul_into(g, self.value(*b), &mut da);
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    accumulate(grads, *b, matmul_at(g, self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let da = g.zip_map(self.value(*b), |x, y| x * y).expect("shape");
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    let db = g.zip_map(self.value(*a), |x, y| x * y).expect("shape");
                    accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.map(|v| v * k)),
            Op::AddRow(a, row) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*row) {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in dr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *row, dr);
                }
            }
            Op::Gelu(a) => {
                let da = g.zip_map(self.value(*a), |gv, x| gv * gelu_grad(x)).expect("shape");
                accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.as_ref().expect("softmax output");
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = matrix::dot(g.row(r), y.row(r));
                    for ((d, gv), yv) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = yv * (gv - inner);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let vx = self.value(*x);
                let vg = self.value(*gain).row(0);
                let cols = vx.cols();
                let n = cols as f64;
                let mut dx = Matrix::zeros(vx.rows(), cols);
                let mut dgain = Matrix::zeros(1, cols);
                let mut dbias = Matrix::zeros(1, cols);
                let mut xhat = vec![0.0; cols];
                let mut dxhat = vec![0.0; cols];
                for r in 0..vx.rows() {
                    let (mean, inv_std) = row_moments(vx.row(r), *eps);
                    for c in 0..cols {
                        xhat[c] = (vx.get(r, c) - mean) * inv_std;
                        let gv = g.get(r, c);
                        dxhat[c] = gv * vg[c];
                        dgain.data_mut()[c] += gv * xhat[c];
                        dbias.data_mut()[c] += gv;
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dx = matrix::dot(&dxhat, &xhat) / n;
                    for c in 0..cols {
                        dx.set(r, c, inv_std * (dxhat[c] - mean_d - xhat[c] * mean_dx));
                    }
                }
                if wants(*x) {
                    accumulate(grads, *x, dx);
                }
                if wants(*gain) {
                    accumulate(grads, *gain, dgain);
                }
                if wants(*bias) {
                    accumulate(grads, *bias, dbias);
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut da = Matrix::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if wants(*p) {
                        accumulate(grads, *p, g.slice_cols(c0, w));
                    }
                    c0 += w;
                }
            }
            Op::GatherRows(a, indices) => {
                let va = self.value(*a);
                let mut da = Matrix::zeros(va.rows(), va.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (d, v) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::BlockRowDot { q, k, block } => {
                let (vq, vk) = (self.value(*q), self.value(*k));
                if wants(*q) {
                    let mut dq = Matrix::zeros(vq.rows(), vq.cols());
                    for f in 0..vq.rows() {
                        for l in 0..*block {
                            let gv = g.get(f, l);
                            for (d, kv) in dq.row_mut(f).iter_mut().zip(vk.row(f * block + l)) {
                                *d += gv * kv;
                            }
                        }
                    }
                    accumulate(grads, *q, dq);
                }
                if wants(*k) {
                    let mut dk = Matrix::zeros(vk.rows(), vk.cols());
                    for f in 0..vq.rows() {
                        for l in 0..*block {
                            let gv = g.get(f, l);
                            for (d, qv) in dk.row_mut(f * block + l).iter_mut().zip(vq.row(f)) {
                                *d += gv * qv;
                            }
                        }
                    }
                    accumulate(grads, *k, dk);
                }
            }
            Op::BlockMix { w, v, block } => {
                let (vw, vv) = (self.value(*w), self.value(*v));
                if wants(*w) {
                    let mut dw = Matrix::zeros(vw.rows(), vw.cols());
                    for f in 0..vw.rows() {
                        for l in 0..*block {
                            dw.set(f, l, matrix::dot(g.row(f), vv.row(f * block + l)));
                        }
                    }
                    accumulate(grads, *w, dw);
                }
                if wants(*v) {
                    let mut dv = Matrix::zeros(vv.rows(), vv.cols());
                    for f in 0..vw.rows() {
                        for l in 0..*block {
                            let wl = vw.get(f, l);
                            for (d, gv) in dv.row_mut(f * block + l).iter_mut().zip(g.row(f)) {
                                *d += wl * gv;
                            }
                        }
                    }
                    accumulate(grads, *v, dv);
                }
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, Matrix::filled(va.rows(), va.cols(), g.get(0, 0)));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let k = g.get(0, 0) / va.data().len() as f64;
                accumulate(grads, *a, Matrix::filled(va.rows(), va.cols(), k));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, contribution: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Per-parameter gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of parameter `idx`; zero when it did not reach the loss.
    pub fn param(&self, idx: usize) -> Matrix {
        match &self.params[idx] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[idx].0, self.shapes[idx].1),
        }
    }

    pub fn param_ref(&self, idx: usize) -> Option<&Matrix> {
        self.params[idx].as_ref()
    }

    pub fn into_dense(self) -> Vec<Matrix> {
        self.params
            .into_iter()
            .zip(self.shapes)
            .map(|(g, (r, c))| g.unwrap_or_else(|| Matrix::zeros(r, c)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("a", Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap());
        p.push("b", Matrix::row_vector(&[1.0, 2.0, 3.0]));
        p
    }

    #[test]
    fn sum_of_parameters_has_unit_gradients() {
        let p = params();
        let mut g = Graph::new(&p);
        let a = g.param(0);
        let b = g.param(1);
        let sa = g.sum(a);
        let sb = g.sum(b);
        let loss = g.add(sa, sb).unwrap();
        let grads = g.backward(loss).unwrap().into_dense();
        assert!(grads[0].data().iter().all(|v| *v == 1.0));
        assert!(grads[1].data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn repeated_param_is_one_leaf() {
        let p = params();
        let mut g = Graph::new(&p);
        let a1 = g.param(0);
        let a2 = g.param(0);
        assert_eq!(a1, a2);
        let prod = g.mul(a1, a2).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        let expect = p.get(0).map(|v| 2.0 * v);
        assert_eq!(grads.param(0), expect);
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let p = params();
        let mut g = Graph::new(&p);
        let a = g.param(0);
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let p = params();
        let mut g = Graph::new(&p);
        let a = g.param(0);
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert!(grads.param_ref(1).is_none());
        assert_eq!(grads.param(1), Matrix::zeros(1, 3));
    }

    #[test]
    fn block_ops_stay_inside_their_block() {
        let mut g = Graph::default();
        let q = g.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let k = g.constant(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]])
                .unwrap(),
        );
        let s = g.block_row_dot(q, k, 2).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 3.0, 6.0, 8.0]);
        let w = g.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap());
        let m = g.block_mix(w, k, 2).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 2.0, 6.0, 7.0]);
    }
}
