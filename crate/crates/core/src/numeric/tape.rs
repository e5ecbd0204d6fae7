//! Wengert tape: forward ops are recorded in order, `backward` walks the
//! record in reverse and accumulates vector-Jacobian products.
//!
//! The tape is rebuilt for every forward pass (define-by-run). Parameters
//! enter through [`Tape::param`], which snapshots the current values; their
//! gradients are scattered back into the [`ParamSet`] by
//! [`Tape::apply_param_grads`].

use std::collections::HashMap;

use rand::Rng;

use super::{ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    /// Row gather from an embedding table; gradient is scattered sparsely.
    EmbedRows { param: ParamId, ids: Vec<usize> },
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddList(Vec<NodeId>),
    /// mat (m,n) + col (m,1), broadcast across columns.
    AddColBroadcast(NodeId, NodeId),
    /// mat (m,n) + row stored as (n,1), broadcast across rows.
    AddRowBroadcast(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// out = k * x + c, elementwise.
    AffineScalar { x: NodeId, k: f64 },
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Softmax down each column (the reduced axis is axis 0).
    SoftmaxCols(NodeId),
    /// Inverted dropout: mask entries are 0 or 1/(1-rate).
    Dropout { x: NodeId, mask: Vec<f64> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    /// Submatrix copy starting at (r0, c0).
    Block { x: NodeId, r0: usize, c0: usize },
    /// Column-wise max over rows (max over time); argmax row per column.
    MaxCols { x: NodeId, argmax: Vec<usize> },
    /// Column-wise log-sum-exp over rows -> (cols, 1).
    LogSumExpCols(NodeId),
    SumAll(NodeId),
    /// Single flat-index pick -> (1,1).
    Element { x: NodeId, idx: usize },
    Reshape(NodeId),
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { op })
    }
}

/// a (m,k) * b (k,n), row-major.
fn matmul_plain(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// a (m,k) * b^T where b is (n,k) -> (m,n).
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[j * k + l];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// a^T * b where a is (k,m), b is (k,n) -> (m,n).
fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
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

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { rows, cols, values, op, requires_grad });
        id
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<NodeId> {
        if values.len() != rows * cols {
            return Err(Error::Argument(format!(
                "leaf data length {} does not match shape {rows}x{cols}",
                values.len()
            )));
        }
        check_finite("leaf", &values)?;
        Ok(self.push(rows, cols, values, Op::Leaf, false))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Leaf, false)
    }

    /// Snapshot a parameter onto the tape. Repeated calls for the same
    /// parameter return the same node, so gradients accumulate in one place.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let t = &params.get(id).value;
        let node = self.push(t.rows(), t.cols(), t.values.clone(), Op::Param(id), t.requires_grad);
        self.param_nodes.insert(id, node);
        node
    }

    /// Gather rows `ids` from an embedding table parameter -> (ids.len(), dim).
    pub fn embed_rows(&mut self, params: &ParamSet, id: ParamId, ids: &[usize]) -> Result<NodeId> {
        let t = &params.get(id).value;
        let dim = t.cols();
        let mut values = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            if i >= t.rows() {
                return Err(Error::Argument(format!(
                    "embedding row {i} out of range for table with {} rows",
                    t.rows()
                )));
            }
            values.extend_from_slice(&t.values[i * dim..(i + 1) * dim]);
        }
        Ok(self.push(
            ids.len(),
            dim,
            values,
            Op::EmbedRows { param: id, ids: ids.to_vec() },
            t.requires_grad,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape { op: "matmul", lhs: (m, k), rhs: (k2, n) });
        }
        let values = matmul_plain(&self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        check_finite("matmul", &values)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, values, Op::Matmul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Shape { op: "add", lhs: sa, rhs: sb });
        }
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        check_finite("add", &values)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(sa.0, sa.1, values, Op::Add(a, b), rg))
    }

    pub fn add_list(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("add_list needs at least one input".into()))?;
        let shape = self.shape(first);
        let mut values = self.nodes[first.0].values.clone();
        let mut rg = self.requires(first);
        for &p in &parts[1..] {
            let sp = self.shape(p);
            if sp != shape {
                return Err(Error::Shape { op: "add_list", lhs: shape, rhs: sp });
            }
            for (o, v) in values.iter_mut().zip(&self.nodes[p.0].values) {
                *o += v;
            }
            rg |= self.requires(p);
        }
        check_finite("add_list", &values)?;
        Ok(self.push(shape.0, shape.1, values, Op::AddList(parts.to_vec()), rg))
    }

    /// mat (m,n) + col (m,1), col broadcast across columns.
    pub fn add_col_broadcast(&mut self, mat: NodeId, col: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(mat);
        let sc = self.shape(col);
        if sc != (m, 1) {
            return Err(Error::Shape { op: "add_col_broadcast", lhs: (m, n), rhs: sc });
        }
        let mut values = self.nodes[mat.0].values.clone();
        for i in 0..m {
            let c = self.nodes[col.0].values[i];
            for v in &mut values[i * n..(i + 1) * n] {
                *v += c;
            }
        }
        check_finite("add_col_broadcast", &values)?;
        let rg = self.requires(mat) || self.requires(col);
        Ok(self.push(m, n, values, Op::AddColBroadcast(mat, col), rg))
    }

    /// mat (m,n) + row (n,1), row broadcast down the rows.
    pub fn add_row_broadcast(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(mat);
        let sr = self.shape(row);
        if sr != (n, 1) {
            return Err(Error::Shape { op: "add_row_broadcast", lhs: (m, n), rhs: sr });
        }
        let mut values = self.nodes[mat.0].values.clone();
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] += self.nodes[row.0].values[j];
            }
        }
        check_finite("add_row_broadcast", &values)?;
        let rg = self.requires(mat) || self.requires(row);
        Ok(self.push(m, n, values, Op::AddRowBroadcast(mat, row), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Shape { op: "mul", lhs: sa, rhs: sb });
        }
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        check_finite("mul", &values)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(sa.0, sa.1, values, Op::Mul(a, b), rg))
    }

    /// Elementwise k*x + c.
    pub fn affine(&mut self, x: NodeId, k: f64, c: f64) -> Result<NodeId> {
        let (m, n) = self.shape(x);
        let values: Vec<f64> = self.nodes[x.0].values.iter().map(|v| k * v + c).collect();
        check_finite("affine", &values)?;
        let rg = self.requires(x);
        Ok(self.push(m, n, values, Op::AffineScalar { x, k }, rg))
    }

    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -1.0, 1.0)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(x);
        let values: Vec<f64> = self.nodes[x.0].values.iter().map(|v| v.tanh()).collect();
        check_finite("tanh", &values)?;
        let rg = self.requires(x);
        Ok(self.push(m, n, values, Op::Tanh(x), rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(x);
        let values: Vec<f64> = self.nodes[x.0]
            .values
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        check_finite("sigmoid", &values)?;
        let rg = self.requires(x);
        Ok(self.push(m, n, values, Op::Sigmoid(x), rg))
    }

    /// Softmax over axis 0 (down each column). For a column vector this is
    /// the ordinary softmax.
    pub fn softmax_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(x);
        if m == 0 {
            return Err(Error::Argument("softmax over empty axis".into()));
        }
        let xv = &self.nodes[x.0].values;
        let mut values = vec![0.0; m * n];
        for j in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..m {
                mx = mx.max(xv[i * n + j]);
            }
            let mut z = 0.0;
            for i in 0..m {
                let e = (xv[i * n + j] - mx).exp();
                values[i * n + j] = e;
                z += e;
            }
            for i in 0..m {
                values[i * n + j] /= z;
            }
        }
        check_finite("softmax", &values)?;
        let rg = self.requires(x);
        Ok(self.push(m, n, values, Op::SoftmaxCols(x), rg))
    }

    /// Inverted dropout. In eval mode this is the identity (the input node is
    /// returned unchanged).
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        train_mode: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!("dropout rate {rate} outside [0,1)")));
        }
        if !train_mode || rate == 0.0 {
            return Ok(x);
        }
        let (m, n) = self.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let values: Vec<f64> = self.nodes[x.0].values.iter().zip(&mask).map(|(v, k)| v * k).collect();
        let rg = self.requires(x);
        Ok(self.push(m, n, values, Op::Dropout { x, mask }, rg))
    }

    /// Vertical stack; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows needs at least one input".into()))?;
        let (_, cols) = self.shape(first);
        let mut rows = 0;
        let mut values = Vec::new();
        let mut rg = false;
        for &p in parts {
            let sp = self.shape(p);
            if sp.1 != cols {
                return Err(Error::Shape { op: "concat_rows", lhs: (rows, cols), rhs: sp });
            }
            rows += sp.0;
            values.extend_from_slice(&self.nodes[p.0].values);
            rg |= self.requires(p);
        }
        Ok(self.push(rows, cols, values, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Horizontal stack; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols needs at least one input".into()))?;
        let (rows, _) = self.shape(first);
        let mut cols = 0;
        let mut rg = false;
        for &p in parts {
            let sp = self.shape(p);
            if sp.0 != rows {
                return Err(Error::Shape { op: "concat_cols", lhs: (rows, cols), rhs: sp });
            }
            cols += sp.1;
            rg |= self.requires(p);
        }
        let mut values = vec![0.0; rows * cols];
        let mut c0 = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            for i in 0..pr {
                for j in 0..pc {
                    values[i * cols + c0 + j] = self.nodes[p.0].values[i * pc + j];
                }
            }
            c0 += pc;
        }
        Ok(self.push(rows, cols, values, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Copy of the `rows x cols` submatrix whose top-left corner is (r0, c0).
    pub fn block(&mut self, x: NodeId, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<NodeId> {
        let (m, n) = self.shape(x);
        if r0 + rows > m || c0 + cols > n {
            return Err(Error::Shape { op: "block", lhs: (m, n), rhs: (r0 + rows, c0 + cols) });
        }
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let base = (r0 + i) * n + c0;
            values.extend_from_slice(&self.nodes[x.0].values[base..base + cols]);
        }
        let rg = self.requires(x);
        Ok(self.push(rows, cols, values, Op::Block { x, r0, c0 }, rg))
    }

    /// Rows [start, start+len) of a column vector.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (_, cols) = self.shape(x);
        self.block(x, start, 0, len, cols)
    }

    /// Row `r` of a matrix, returned as a (cols, 1) column vector.
    pub fn row_vector(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let (_, cols) = self.shape(x);
        let b = self.block(x, r, 0, 1, cols)?;
        self.reshape(b, cols, 1)
    }

    /// Column `c` of a matrix as a (rows, 1) vector.
    pub fn col_vector(&mut self, x: NodeId, c: usize) -> Result<NodeId> {
        let (rows, _) = self.shape(x);
        self.block(x, 0, c, rows, 1)
    }

    /// Max over rows for each column (max over time) -> (cols, 1).
    /// Ties resolve to the lowest row index.
    pub fn max_over_time(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(x);
        if m == 0 {
            return Err(Error::Argument("max_over_time over empty axis".into()));
        }
        let xv = &self.nodes[x.0].values;
        let mut values = vec![f64::NEG_INFINITY; n];
        let mut argmax = vec![0usize; n];
        for j in 0..n {
            for i in 0..m {
                let v = xv[i * n + j];
                if v > values[j] {
                    values[j] = v;
                    argmax[j] = i;
                }
            }
        }
        check_finite("max_over_time", &values)?;
        let rg = self.requires(x);
        Ok(self.push(n, 1, values, Op::MaxCols { x, argmax }, rg))
    }

    /// log(sum(exp)) over rows for each column -> (cols, 1).
    pub fn logsumexp_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(x);
        if m == 0 {
            return Err(Error::Argument("logsumexp over empty axis".into()));
        }
        let xv = &self.nodes[x.0].values;
        let mut values = vec![0.0; n];
        for j in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..m {
                mx = mx.max(xv[i * n + j]);
            }
            let mut z = 0.0;
            for i in 0..m {
                z += (xv[i * n + j] - mx).exp();
            }
            values[j] = mx + z.ln();
        }
        check_finite("logsumexp", &values)?;
        let rg = self.requires(x);
        Ok(self.push(n, 1, values, Op::LogSumExpCols(x), rg))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x.0].values.iter().sum();
        check_finite("sum_all", &[s])?;
        let rg = self.requires(x);
        Ok(self.push(1, 1, vec![s], Op::SumAll(x), rg))
    }

    /// Dot product of two equal-shape tensors -> (1,1).
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        self.sum_all(p)
    }

    /// Single entry at flat index -> (1,1).
    pub fn element(&mut self, x: NodeId, idx: usize) -> Result<NodeId> {
        let node = &self.nodes[x.0];
        if idx >= node.values.len() {
            return Err(Error::Argument(format!(
                "element index {idx} out of range for {}x{}",
                node.rows, node.cols
            )));
        }
        let v = node.values[idx];
        let rg = node.requires_grad;
        Ok(self.push(1, 1, vec![v], Op::Element { x, idx }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let node = &self.nodes[x.0];
        if node.values.len() != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                lhs: (node.rows, node.cols),
                rhs: (rows, cols),
            });
        }
        let values = node.values.clone();
        let rg = node.requires_grad;
        Ok(self.push(rows, cols, values, Op::Reshape(x), rg))
    }

    pub fn scalar_value(&self, x: NodeId) -> f64 {
        self.nodes[x.0].values[0]
    }

    /// Reverse pass from a scalar loss. Fills per-node gradients; call
    /// [`Tape::apply_param_grads`] afterwards to accumulate into parameters.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let ln = &self.nodes[loss.0];
        if (ln.rows, ln.cols) != (1, 1) {
            return Err(Error::Argument(format!(
                "backward requires a scalar loss, got {}x{}",
                ln.rows, ln.cols
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let gout = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<f64> {
        let len = self.nodes[id.0].values.len();
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&mut self, i: usize, gout: &[f64]) {
        // Ops only route gradient into parents that require it; leaves and
        // params terminate the recursion.
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) | Op::EmbedRows { .. } => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = self.shape(a);
                let (_, n) = self.shape(b);
                if self.requires(a) {
                    let da = matmul_nt(gout, &self.nodes[b.0].values, m, n, k);
                    for (g, d) in self.grad_buf(a).iter_mut().zip(da) {
                        *g += d;
                    }
                }
                if self.requires(b) {
                    let db = matmul_tn(&self.nodes[a.0].values, gout, m, k, n);
                    for (g, d) in self.grad_buf(b).iter_mut().zip(db) {
                        *g += d;
                    }
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                for &p in &[a, b] {
                    if self.requires(p) {
                        for (g, d) in self.grad_buf(p).iter_mut().zip(gout) {
                            *g += d;
                        }
                    }
                }
            }
            Op::AddList(parts) => {
                let parts = parts.clone();
                for p in parts {
                    if self.requires(p) {
                        for (g, d) in self.grad_buf(p).iter_mut().zip(gout) {
                            *g += d;
                        }
                    }
                }
            }
            Op::AddColBroadcast(mat, col) => {
                let (mat, col) = (*mat, *col);
                let (m, n) = self.shape(mat);
                if self.requires(mat) {
                    for (g, d) in self.grad_buf(mat).iter_mut().zip(gout) {
                        *g += d;
                    }
                }
                if self.requires(col) {
                    let buf = self.grad_buf(col);
                    for i in 0..m {
                        buf[i] += gout[i * n..(i + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            Op::AddRowBroadcast(mat, row) => {
                let (mat, row) = (*mat, *row);
                let (m, n) = self.shape(mat);
                if self.requires(mat) {
                    for (g, d) in self.grad_buf(mat).iter_mut().zip(gout) {
                        *g += d;
                    }
                }
                if self.requires(row) {
                    let buf = self.grad_buf(row);
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += gout[i * n + j];
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.requires(a) {
                    let bv = self.nodes[b.0].values.clone();
                    for ((g, d), v) in self.grad_buf(a).iter_mut().zip(gout).zip(bv) {
                        *g += d * v;
                    }
                }
                if self.requires(b) {
                    let av = self.nodes[a.0].values.clone();
                    for ((g, d), v) in self.grad_buf(b).iter_mut().zip(gout).zip(av) {
                        *g += d * v;
                    }
                }
            }
            Op::AffineScalar { x, k } => {
                let (x, k) = (*x, *k);
                if self.requires(x) {
                    for (g, d) in self.grad_buf(x).iter_mut().zip(gout) {
                        *g += k * d;
                    }
                }
            }
            Op::Tanh(x) => {
                let x = *x;
                if self.requires(x) {
                    let yv = self.nodes[i].values.clone();
                    for ((g, d), y) in self.grad_buf(x).iter_mut().zip(gout).zip(yv) {
                        *g += d * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let x = *x;
                if self.requires(x) {
                    let yv = self.nodes[i].values.clone();
                    for ((g, d), y) in self.grad_buf(x).iter_mut().zip(gout).zip(yv) {
                        *g += d * y * (1.0 - y);
                    }
                }
            }
            Op::SoftmaxCols(x) => {
                let x = *x;
                if self.requires(x) {
                    let (m, n) = self.shape(NodeId(i));
                    let s = self.nodes[i].values.clone();
                    let buf = self.grad_buf(x);
                    for j in 0..n {
                        let mut dot = 0.0;
                        for r in 0..m {
                            dot += gout[r * n + j] * s[r * n + j];
                        }
                        for r in 0..m {
                            buf[r * n + j] += s[r * n + j] * (gout[r * n + j] - dot);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let mask = mask.clone();
                if self.requires(x) {
                    for ((g, d), k) in self.grad_buf(x).iter_mut().zip(gout).zip(mask) {
                        *g += d * k;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].values.len();
                    if self.requires(p) {
                        for (g, d) in self.grad_buf(p).iter_mut().zip(&gout[offset..offset + len]) {
                            *g += d;
                        }
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let (rows, cols) = {
                    let n = &self.nodes[i];
                    (n.rows, n.cols)
                };
                let mut c0 = 0;
                for p in parts {
                    let (pr, pc) = self.shape(p);
                    debug_assert_eq!(pr, rows);
                    if self.requires(p) {
                        let buf = self.grad_buf(p);
                        for r in 0..rows {
                            for j in 0..pc {
                                buf[r * pc + j] += gout[r * cols + c0 + j];
                            }
                        }
                    }
                    c0 += pc;
                }
            }
            Op::Block { x, r0, c0 } => {
                let (x, r0, c0) = (*x, *r0, *c0);
                if self.requires(x) {
                    let (rows, cols) = {
                        let n = &self.nodes[i];
                        (n.rows, n.cols)
                    };
                    let (_, n_full) = self.shape(x);
                    let buf = self.grad_buf(x);
                    for r in 0..rows {
                        for j in 0..cols {
                            buf[(r0 + r) * n_full + c0 + j] += gout[r * cols + j];
                        }
                    }
                }
            }
            Op::MaxCols { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                if self.requires(x) {
                    let (_, n) = self.shape(x);
                    let buf = self.grad_buf(x);
                    for (j, &r) in argmax.iter().enumerate() {
                        buf[r * n + j] += gout[j];
                    }
                }
            }
            Op::LogSumExpCols(x) => {
                let x = *x;
                if self.requires(x) {
                    let (m, n) = self.shape(x);
                    let lse = self.nodes[i].values.clone();
                    let xv = self.nodes[x.0].values.clone();
                    let buf = self.grad_buf(x);
                    for j in 0..n {
                        for r in 0..m {
                            buf[r * n + j] += gout[j] * (xv[r * n + j] - lse[j]).exp();
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let x = *x;
                if self.requires(x) {
                    let d = gout[0];
                    for g in self.grad_buf(x).iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::Element { x, idx } => {
                let (x, idx) = (*x, *idx);
                if self.requires(x) {
                    self.grad_buf(x)[idx] += gout[0];
                }
            }
            Op::Reshape(x) => {
                let x = *x;
                if self.requires(x) {
                    for (g, d) in self.grad_buf(x).iter_mut().zip(gout) {
                        *g += d;
                    }
                }
            }
        }
    }

    /// Accumulate node gradients into the parameter set. Embedding-lookup
    /// gradients are scattered row-sparsely.
    pub fn apply_param_grads(&self, params: &mut ParamSet) {
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(g) = self.grads.get(i).and_then(|g| g.as_ref()) else {
                continue;
            };
            match &node.op {
                Op::Param(pid) => {
                    let t = &mut params.get_mut(*pid).value;
                    let buf = t.grad.get_or_insert_with(|| vec![0.0; t.values.len()]);
                    for (p, d) in buf.iter_mut().zip(g) {
                        *p += d;
                    }
                }
                Op::EmbedRows { param, ids } => {
                    let t = &mut params.get_mut(*param).value;
                    let dim = t.cols();
                    let buf = t.grad.get_or_insert_with(|| vec![0.0; t.values.len()]);
                    for (k, &row) in ids.iter().enumerate() {
                        for j in 0..dim {
                            buf[row * dim + j] += g[k * dim + j];
                        }
                    }
                }
                _ => {}
            }
        }
    }
}
