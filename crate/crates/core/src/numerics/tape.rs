//! Reverse-mode autodiff on a Wengert list.
//!
//! A `Tape` owns every intermediate value of one forward pass. Nodes are
//! appended in topological order, so `backward` is a single reverse sweep
//! that accumulates adjoints additively. Tapes are cheap to build and are
//! discarded after each training step; parameters live outside the tape and
//! are registered per-pass via [`Tape::param`].

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul,
    Transpose,
    /// Elementwise sum of two same-shape tensors.
    Add,
    /// `[m, n] + [1, n]`: the row is added to every row of the left input.
    AddRow,
    /// `[m, n] * [1, n]`: every row of the left input is scaled elementwise
    /// by the row.
    MulRow,
    Mul,
    AddScalar,
    Scale(f64),
    Relu,
    Exp,
    Log,
    Sum,
    Mean,
    SoftmaxRows,
    /// Row-wise standardization (mean 0, variance 1); affine transforms are
    /// composed from `Mul`/`AddRow` outside. Caches 1/std per row.
    LayerNormRows { inv_std: Vec<f64> },
    /// Row-wise scaling to unit L2 norm. Caches the pre-scaling norms.
    L2NormalizeRows { norms: Vec<f64> },
    ConcatRows { heights: Vec<usize> },
    ConcatCols { widths: Vec<usize> },
    SliceRows { start: usize },
    SliceCols { start: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_ran: bool,
}

// ── dense kernels ────────────────────────────────────────────────────────

/// C += A·B with A `[m,k]`, B `[k,n]`, all row-major.
fn gemm_nn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

/// C += A·Bᵀ with A `[m,k]`, B `[n,k]`.
fn gemm_nt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += a_row[p] * b_row[p];
            }
            c_row[j] += acc;
        }
    }
}

/// C += Aᵀ·B with A `[m,k]`, B `[m,n]`, C `[k,n]`.
fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
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

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, needs_grad: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, value, needs_grad });
        self.grads.push(None);
        id
    }

    /// Constant leaf: excluded from gradient propagation.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, false)
    }

    /// Trainable leaf: gradients accumulate here.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn rank2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.nodes[id].value.shape();
        if s.len() != 2 {
            return Err(Error::Dimension { op, detail: format!("expected rank 2, got {:?}", s) });
        }
        Ok((s[0], s[1]))
    }

    // ── forward ops ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rank2(a, "matmul")?;
        let (k2, n) = self.rank2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                detail: format!("[{m}, {k}] x [{k2}, {n}]: inner dimensions differ"),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn_acc(m, k, n, self.nodes[a].value.data(), self.nodes[b].value.data(), &mut out);
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Matmul, vec![a, b], Tensor::new(vec![m, n], out)?, needs))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "transpose")?;
        let src = self.nodes[a].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Op::Transpose, vec![a], Tensor::new(vec![n, m], out)?, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.nodes[a].value.same_shape(&self.nodes[b].value) {
            return Err(Error::Dimension {
                op: "add",
                detail: format!(
                    "{:?} vs {:?}",
                    self.nodes[a].value.shape(),
                    self.nodes[b].value.shape()
                ),
            });
        }
        let out: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Add, vec![a, b], Tensor::new(shape, out)?, needs))
    }

    /// `a + row`, broadcasting the `[1, n]` row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "add_row")?;
        let (rm, rn) = self.rank2(row, "add_row")?;
        if rm != 1 || rn != n {
            return Err(Error::Dimension {
                op: "add_row",
                detail: format!("row must be [1, {n}], got [{rm}, {rn}]"),
            });
        }
        let r = self.nodes[row].value.data();
        let mut out = self.nodes[a].value.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += r[j];
            }
        }
        let needs = self.needs(&[a, row]);
        Ok(self.push(Op::AddRow, vec![a, row], Tensor::new(vec![m, n], out)?, needs))
    }

    /// `a * row` elementwise, broadcasting the `[1, n]` row over every row
    /// of `a`.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "mul_row")?;
        let (rm, rn) = self.rank2(row, "mul_row")?;
        if rm != 1 || rn != n {
            return Err(Error::Dimension {
                op: "mul_row",
                detail: format!("row must be [1, {n}], got [{rm}, {rn}]"),
            });
        }
        let r = self.nodes[row].value.data();
        let mut out = self.nodes[a].value.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= r[j];
            }
        }
        let needs = self.needs(&[a, row]);
        Ok(self.push(Op::MulRow, vec![a, row], Tensor::new(vec![m, n], out)?, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.nodes[a].value.same_shape(&self.nodes[b].value) {
            return Err(Error::Dimension {
                op: "mul",
                detail: format!(
                    "{:?} vs {:?}",
                    self.nodes[a].value.shape(),
                    self.nodes[b].value.shape()
                ),
            });
        }
        let out: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Mul, vec![a, b], Tensor::new(shape, out)?, needs))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x + c).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push(Op::AddScalar, vec![a], Tensor::new(shape, out).unwrap(), needs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x * c).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push(Op::Scale(c), vec![a], Tensor::new(shape, out).unwrap(), needs)
    }

    /// ReLU with the subgradient at 0 fixed to 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push(Op::Relu, vec![a], Tensor::new(shape, out).unwrap(), needs)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x.exp()).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push(Op::Exp, vec![a], Tensor::new(shape, out).unwrap(), needs)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x.ln()).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(&[a]);
        self.push(Op::Log, vec![a], Tensor::new(shape, out).unwrap(), needs)
    }

    /// Sum of all entries, as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        let needs = self.needs(&[a]);
        self.push(Op::Sum, vec![a], Tensor::scalar(s), needs)
    }

    /// Mean of all entries, as a `[1, 1]` scalar.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.numel() as f64;
        let s: f64 = self.nodes[a].value.data().iter().sum::<f64>() / n;
        let needs = self.needs(&[a]);
        self.push(Op::Mean, vec![a], Tensor::scalar(s), needs)
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "softmax_rows")?;
        let src = self.nodes[a].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * n..(i + 1) * n];
            let mut z = 0.0;
            for j in 0..n {
                dst[j] = (row[j] - max).exp();
                z += dst[j];
            }
            for v in dst.iter_mut() {
                *v /= z;
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Op::SoftmaxRows, vec![a], Tensor::new(vec![m, n], out)?, needs))
    }

    /// Standardize each row to mean 0 / variance 1 (population variance).
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "layer_norm_rows")?;
        let src = self.nodes[a].value.data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] = (row[j] - mean) * inv;
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Op::LayerNormRows { inv_std }, vec![a], Tensor::new(vec![m, n], out)?, needs))
    }

    /// Scale each row to unit L2 norm. Errors on a zero-norm row.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "l2_normalize_rows")?;
        let src = self.nodes[a].value.data();
        let mut out = vec![0.0; m * n];
        let mut norms = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Validation(format!("cannot normalize zero-norm row {i}")));
            }
            norms[i] = norm;
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] = row[j] / norm;
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Op::L2NormalizeRows { norms }, vec![a], Tensor::new(vec![m, n], out)?, needs))
    }

    /// Stack inputs vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension { op: "concat_rows", detail: "no inputs".into() });
        }
        let (_, n) = self.rank2(parts[0], "concat_rows")?;
        let mut heights = Vec::with_capacity(parts.len());
        let mut out = Vec::new();
        for &p in parts {
            let (h, w) = self.rank2(p, "concat_rows")?;
            if w != n {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    detail: format!("column mismatch: {n} vs {w}"),
                });
            }
            heights.push(h);
            out.extend_from_slice(self.nodes[p].value.data());
        }
        let m: usize = heights.iter().sum();
        let needs = self.needs(parts);
        Ok(self.push(Op::ConcatRows { heights }, parts.to_vec(), Tensor::new(vec![m, n], out)?, needs))
    }

    /// Concatenate inputs along the last dimension; all must share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension { op: "concat_cols", detail: "no inputs".into() });
        }
        let (m, _) = self.rank2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (h, w) = self.rank2(p, "concat_cols")?;
            if h != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    detail: format!("row mismatch: {m} vs {h}"),
                });
            }
            widths.push(w);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.nodes[p].value.data();
            for i in 0..m {
                out[i * n + offset..i * n + offset + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let needs = self.needs(parts);
        Ok(self.push(Op::ConcatCols { widths }, parts.to_vec(), Tensor::new(vec![m, n], out)?, needs))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "slice_rows")?;
        if start + len > m {
            return Err(Error::Dimension {
                op: "slice_rows",
                detail: format!("rows {start}..{} out of 0..{m}", start + len),
            });
        }
        let src = self.nodes[a].value.data();
        let out = src[start * n..(start + len) * n].to_vec();
        let needs = self.needs(&[a]);
        Ok(self.push(Op::SliceRows { start }, vec![a], Tensor::new(vec![len, n], out)?, needs))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "slice_cols")?;
        if start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                detail: format!("cols {start}..{} out of 0..{n}", start + len),
            });
        }
        let src = self.nodes[a].value.data();
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Op::SliceCols { start }, vec![a], Tensor::new(vec![m, len], out)?, needs))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Accumulate `d root / d node` into every node reachable from `root`.
    ///
    /// `root` must be scalar. A second call without [`Tape::clear_grads`]
    /// is rejected so stale adjoints can never be mixed into a new pass.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if root >= self.nodes.len() {
            return Err(Error::Contract(format!("backward root {root} is not on the tape")));
        }
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, shape is {:?}",
                self.nodes[root].value.shape()
            )));
        }
        if self.backward_ran {
            return Err(Error::Contract(
                "backward already ran on this tape; call clear_grads first".into(),
            ));
        }
        self.backward_ran = true;
        let root_shape = self.nodes[root].value.shape().to_vec();
        self.grads[root] = Some(Tensor::new(root_shape, vec![1.0])?);

        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad || self.grads[id].is_none() {
                continue;
            }
            // Take the adjoint out to sidestep aliasing with input grads,
            // then put it back so callers can query it.
            let g = self.grads[id].take().expect("checked above");
            self.distribute(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// Gradient accumulated at `id`, if any was propagated there.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id].as_ref()
    }

    /// Gradient at `id`, or zeros when the node is unreachable from the root.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[id].value.shape().to_vec()),
        }
    }

    /// Drop all adjoints so another backward pass may run.
    pub fn clear_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_ran = false;
    }

    fn distribute(&mut self, id: NodeId, g: &Tensor) {
        // Split borrows: node values/ops are read-only here, grads are
        // written. Keeping them disjoint avoids cloning values on a hot path.
        let Tape { nodes, grads, .. } = self;
        let inputs: &[NodeId] = &nodes[id].inputs;

        fn grad_buf<'a>(
            grads: &'a mut [Option<Tensor>],
            nodes: &[Node],
            id: NodeId,
        ) -> &'a mut [f64] {
            grads[id]
                .get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape().to_vec()))
                .data_mut()
        }

        match &nodes[id].op {
            Op::Leaf => {}
            Op::Matmul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (nodes[a].value.rows(), nodes[a].value.cols());
                let n = nodes[b].value.cols();
                if nodes[a].needs_grad {
                    gemm_nt_acc(m, n, k, g.data(), nodes[b].value.data(), grad_buf(grads, nodes, a));
                }
                if nodes[b].needs_grad {
                    gemm_tn_acc(m, k, n, nodes[a].value.data(), g.data(), grad_buf(grads, nodes, b));
                }
            }
            Op::Transpose => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let (gm, gn) = (g.rows(), g.cols());
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..gm {
                        for j in 0..gn {
                            buf[j * gm + i] += gd[i * gn + j];
                        }
                    }
                }
            }
            Op::Add => {
                for &inp in inputs {
                    if nodes[inp].needs_grad {
                        let buf = grad_buf(grads, nodes, inp);
                        for (dst, src) in buf.iter_mut().zip(g.data()) {
                            *dst += src;
                        }
                    }
                }
            }
            Op::AddRow => {
                let (a, row) = (inputs[0], inputs[1]);
                let (m, n) = (g.rows(), g.cols());
                if nodes[a].needs_grad {
                    let buf = grad_buf(grads, nodes, a);
                    for (dst, src) in buf.iter_mut().zip(g.data()) {
                        *dst += src;
                    }
                }
                if nodes[row].needs_grad {
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, row);
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += gd[i * n + j];
                        }
                    }
                }
            }
            Op::MulRow => {
                let (a, row) = (inputs[0], inputs[1]);
                let (m, n) = (g.rows(), g.cols());
                let gd = g.data();
                if nodes[a].needs_grad {
                    let rv = nodes[row].value.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += gd[i * n + j] * rv[j];
                        }
                    }
                }
                if nodes[row].needs_grad {
                    let av = nodes[a].value.data();
                    let buf = grad_buf(grads, nodes, row);
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += gd[i * n + j] * av[i * n + j];
                        }
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let gd = g.data();
                if nodes[a].needs_grad {
                    let bv = nodes[b].value.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..bv.len() {
                        buf[i] += gd[i] * bv[i];
                    }
                }
                if nodes[b].needs_grad {
                    let av = nodes[a].value.data();
                    let buf = grad_buf(grads, nodes, b);
                    for i in 0..av.len() {
                        buf[i] += gd[i] * av[i];
                    }
                }
            }
            Op::AddScalar => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let buf = grad_buf(grads, nodes, a);
                    for (dst, src) in buf.iter_mut().zip(g.data()) {
                        *dst += src;
                    }
                }
            }
            Op::Scale(c) => {
                let (c, a) = (*c, inputs[0]);
                if nodes[a].needs_grad {
                    let buf = grad_buf(grads, nodes, a);
                    for (dst, src) in buf.iter_mut().zip(g.data()) {
                        *dst += c * src;
                    }
                }
            }
            Op::Relu => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let xv = nodes[a].value.data();
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..xv.len() {
                        // Subgradient at exactly 0 is taken as 0.
                        if xv[i] > 0.0 {
                            buf[i] += gd[i];
                        }
                    }
                }
            }
            Op::Exp => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let yv = nodes[id].value.data();
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..yv.len() {
                        buf[i] += gd[i] * yv[i];
                    }
                }
            }
            Op::Log => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let xv = nodes[a].value.data();
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..xv.len() {
                        buf[i] += gd[i] / xv[i];
                    }
                }
            }
            Op::Sum => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let gv = g.data()[0];
                    for dst in grad_buf(grads, nodes, a).iter_mut() {
                        *dst += gv;
                    }
                }
            }
            Op::Mean => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let gv = g.data()[0] / nodes[a].value.numel() as f64;
                    for dst in grad_buf(grads, nodes, a).iter_mut() {
                        *dst += gv;
                    }
                }
            }
            Op::SoftmaxRows => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let yv = nodes[id].value.data();
                    let (m, n) = (g.rows(), g.cols());
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..m {
                        let y = &yv[i * n..(i + 1) * n];
                        let gr = &gd[i * n..(i + 1) * n];
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        let dst = &mut buf[i * n..(i + 1) * n];
                        for j in 0..n {
                            dst[j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNormRows { inv_std } => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let yv = nodes[id].value.data();
                    let (m, n) = (g.rows(), g.cols());
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..m {
                        let y = &yv[i * n..(i + 1) * n];
                        let gr = &gd[i * n..(i + 1) * n];
                        let mean_g: f64 = gr.iter().sum::<f64>() / n as f64;
                        let mean_gy: f64 =
                            gr.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                        let dst = &mut buf[i * n..(i + 1) * n];
                        for j in 0..n {
                            dst[j] += inv_std[i] * (gr[j] - mean_g - y[j] * mean_gy);
                        }
                    }
                }
            }
            Op::L2NormalizeRows { norms } => {
                let a = inputs[0];
                if nodes[a].needs_grad {
                    let yv = nodes[id].value.data();
                    let (m, n) = (g.rows(), g.cols());
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..m {
                        let y = &yv[i * n..(i + 1) * n];
                        let gr = &gd[i * n..(i + 1) * n];
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        let dst = &mut buf[i * n..(i + 1) * n];
                        for j in 0..n {
                            dst[j] += (gr[j] - dot * y[j]) / norms[i];
                        }
                    }
                }
            }
            Op::ConcatRows { heights } => {
                let n = g.cols();
                let gd = g.data();
                let mut offset = 0;
                for (&inp, &h) in inputs.iter().zip(heights) {
                    if nodes[inp].needs_grad {
                        let src = &gd[offset * n..(offset + h) * n];
                        let buf = grad_buf(grads, nodes, inp);
                        for (dst, s) in buf.iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                    offset += h;
                }
            }
            Op::ConcatCols { widths } => {
                let (m, n) = (g.rows(), g.cols());
                let gd = g.data();
                let mut offset = 0;
                for (&inp, &w) in inputs.iter().zip(widths) {
                    if nodes[inp].needs_grad {
                        let buf = grad_buf(grads, nodes, inp);
                        for i in 0..m {
                            for j in 0..w {
                                buf[i * w + j] += gd[i * n + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows { start } => {
                let (start, a) = (*start, inputs[0]);
                if nodes[a].needs_grad {
                    let n = g.cols();
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for (i, src) in gd.iter().enumerate() {
                        buf[start * n + i] += src;
                    }
                }
            }
            Op::SliceCols { start } => {
                let (start, a) = (*start, inputs[0]);
                if nodes[a].needs_grad {
                    let (m, w) = (g.rows(), g.cols());
                    let n = nodes[a].value.cols();
                    let gd = g.data();
                    let buf = grad_buf(grads, nodes, a);
                    for i in 0..m {
                        for j in 0..w {
                            buf[i * n + start + j] += gd[i * w + j];
                        }
                    }
                }
            }
        }
    }
}
