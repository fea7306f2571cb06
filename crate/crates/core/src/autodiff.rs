//! Reverse-mode automatic differentiation over array-valued primitives.
//!
//! A `Tape` records one operation per node in creation order, so inputs
//! always precede outputs and the reverse pass is a strict reverse
//! topological walk by descending node id. Nodes that do not reach the
//! loss never receive a gradient and report exactly zero.
//!
//! The tape is single-writer: callers thread `&mut Tape` through the
//! forward pass explicitly. `Array` values never record on their own.

use crate::array::{matmul_nn, matmul_nt, matmul_tn, Array};
use crate::error::{Error, Result};

pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k] x [k,n]
    Matmul { a: NodeId, b: NodeId },
    /// [m,k] x [n,k]^T -> [m,n]
    MatmulNt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// [m,n] + [n], broadcast over the leading dimension
    AddBias { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Tanh { a: NodeId },
    /// row-wise softmax over the last dimension of a 2-D value
    Softmax { a: NodeId },
    /// rows of `table` selected by ids
    Gather { table: NodeId, ids: Vec<usize> },
    /// row-wise layer normalization with learned gain/bias
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize, end: usize },
    SliceRows { a: NodeId, start: usize },
    /// sum of all entries -> [1]
    Sum { a: NodeId },
}

struct Node {
    value: Array,
    op: Op,
}

/// Gradient accumulation slots keyed by node id.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. node `id`; `None` means exactly zero.
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf)
    }

    fn shapes_equal(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul { a, b }))
    }

    /// a[m,k] times b[n,k] transposed.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (n, k2) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nt(va.data(), vb.data(), &mut out, m, k, n);
        let value = Array::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatmulNt { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.shapes_equal("add", a, b)?;
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.shape().len() != 1 || vb.numel() != va.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let cols = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (x, &bias) in row.iter_mut().zip(vb.data()) {
                *x += bias;
            }
        }
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.shapes_equal("sub", a, b)?;
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.shapes_equal("mul", a, b)?;
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale { a, c })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh { a })
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let value = Array::new(va.shape().to_vec(), data).expect("softmax preserves shape");
        self.push(value, Op::Softmax { a })
    }

    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (rows, cols) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::UnknownPhone { id, vocab: rows });
            }
            data.extend_from_slice(vt.row(id));
        }
        let value = Array::new(vec![ids.len(), cols], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let cols = vx.cols();
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: vx.shape().to_vec(),
                right: self.value(gamma).shape().to_vec(),
            });
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * rstd * g[j] + b[j];
            }
        }
        let value = Array::new(vx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            total_cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Array::new(vec![rows, total_cols], data)?;
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = self.value(parts[0]).cols();
        let mut total_rows = 0;
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            total_rows += self.value(p).rows();
        }
        let mut data = Vec::with_capacity(total_rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Array::new(vec![total_rows, cols], data)?;
        Ok(self.push(
            value,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        if start >= end || end > cols {
            return Err(Error::invalid(format!(
                "slice_cols {start}..{end} out of range for width {cols}"
            )));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..end]);
        }
        let value = Array::new(vec![rows, width], data)?;
        Ok(self.push(value, Op::SliceCols { a, start, end }))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        if start >= end || end > rows {
            return Err(Error::invalid(format!(
                "slice_rows {start}..{end} out of range for {rows} rows"
            )));
        }
        let data = va.data()[start * cols..end * cols].to_vec();
        let value = Array::new(vec![end - start, cols], data)?;
        Ok(self.push(value, Op::SliceRows { a, start }))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Array::scalar(self.value(a).sum());
        self.push(value, Op::Sum { a })
    }

    /// Reverse pass from a scalar loss node. Returns d(loss)/d(node) for
    /// every node; untouched nodes carry no gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Array::scalar(1.0));

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.accumulate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, id: NodeId, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let add_into = |slot: &mut Option<Array>, shape: &[usize], f: &dyn Fn(&mut Array)| {
            let acc = slot.get_or_insert_with(|| Array::zeros(shape));
            f(acc);
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                add_into(&mut grads[*a], va.shape(), &|acc| {
                    matmul_nt(g.data(), vb.data(), acc.data_mut(), m, n, k);
                });
                add_into(&mut grads[*b], vb.shape(), &|acc| {
                    matmul_tn(va.data(), g.data(), acc.data_mut(), m, k, n);
                });
            }
            Op::MatmulNt { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                add_into(&mut grads[*a], va.shape(), &|acc| {
                    matmul_nn(g.data(), vb.data(), acc.data_mut(), m, n, k);
                });
                add_into(&mut grads[*b], vb.shape(), &|acc| {
                    matmul_tn(g.data(), va.data(), acc.data_mut(), m, n, k);
                });
            }
            Op::Add { a, b } => {
                add_into(&mut grads[*a], g.shape(), &|acc| {
                    acc.axpy(1.0, g).expect("shape checked at record time");
                });
                add_into(&mut grads[*b], g.shape(), &|acc| {
                    acc.axpy(1.0, g).expect("shape checked at record time");
                });
            }
            Op::AddBias { a, b } => {
                add_into(&mut grads[*a], g.shape(), &|acc| {
                    acc.axpy(1.0, g).expect("shape checked at record time");
                });
                let cols = self.value(*b).numel();
                add_into(&mut grads[*b], &[cols], &|acc| {
                    for row in g.data().chunks(cols) {
                        for (slot, &v) in acc.data_mut().iter_mut().zip(row) {
                            *slot += v;
                        }
                    }
                });
            }
            Op::Sub { a, b } => {
                add_into(&mut grads[*a], g.shape(), &|acc| {
                    acc.axpy(1.0, g).expect("shape checked at record time");
                });
                add_into(&mut grads[*b], g.shape(), &|acc| {
                    acc.axpy(-1.0, g).expect("shape checked at record time");
                });
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                add_into(&mut grads[*a], va.shape(), &|acc| {
                    for ((slot, &gv), &bv) in
                        acc.data_mut().iter_mut().zip(g.data()).zip(vb.data())
                    {
                        *slot += gv * bv;
                    }
                });
                add_into(&mut grads[*b], vb.shape(), &|acc| {
                    for ((slot, &gv), &av) in
                        acc.data_mut().iter_mut().zip(g.data()).zip(va.data())
                    {
                        *slot += gv * av;
                    }
                });
            }
            Op::Scale { a, c } => {
                add_into(&mut grads[*a], g.shape(), &|acc| {
                    acc.axpy(*c, g).expect("shape checked at record time");
                });
            }
            Op::Tanh { a } => {
                let y = &self.nodes[id].value;
                add_into(&mut grads[*a], y.shape(), &|acc| {
                    for ((slot, &gv), &yv) in
                        acc.data_mut().iter_mut().zip(g.data()).zip(y.data())
                    {
                        *slot += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Softmax { a } => {
                let y = &self.nodes[id].value;
                let cols = y.cols();
                add_into(&mut grads[*a], y.shape(), &|acc| {
                    for (r, (g_row, y_row)) in
                        g.data().chunks(cols).zip(y.data().chunks(cols)).enumerate()
                    {
                        let s: f64 = g_row.iter().zip(y_row).map(|(&gv, &yv)| gv * yv).sum();
                        let acc_row = acc.row_mut(r);
                        for ((slot, &gv), &yv) in acc_row.iter_mut().zip(g_row).zip(y_row) {
                            *slot += yv * (gv - s);
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let vt = self.value(*table);
                let cols = vt.cols();
                add_into(&mut grads[*table], vt.shape(), &|acc| {
                    for (r, &id) in ids.iter().enumerate() {
                        let g_row = &g.data()[r * cols..(r + 1) * cols];
                        let acc_row = acc.row_mut(id);
                        for (slot, &v) in acc_row.iter_mut().zip(g_row) {
                            *slot += v;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta } => {
                let vx = self.value(*x);
                let vg = self.value(*gamma);
                let cols = vx.cols();
                // Recompute per-row statistics from the recorded input.
                let mut xhat = vec![0.0; vx.numel()];
                let mut rstds = vec![0.0; vx.rows()];
                for (r, row) in vx.data().chunks(cols).enumerate() {
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    rstds[r] = rstd;
                    for (j, &v) in row.iter().enumerate() {
                        xhat[r * cols + j] = (v - mean) * rstd;
                    }
                }
                add_into(&mut grads[*beta], &[cols], &|acc| {
                    for g_row in g.data().chunks(cols) {
                        for (slot, &v) in acc.data_mut().iter_mut().zip(g_row) {
                            *slot += v;
                        }
                    }
                });
                add_into(&mut grads[*gamma], &[cols], &|acc| {
                    for (r, g_row) in g.data().chunks(cols).enumerate() {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        for ((slot, &gv), &xv) in acc.data_mut().iter_mut().zip(g_row).zip(xh) {
                            *slot += gv * xv;
                        }
                    }
                });
                add_into(&mut grads[*x], vx.shape(), &|acc| {
                    for (r, g_row) in g.data().chunks(cols).enumerate() {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let gh: Vec<f64> = g_row
                            .iter()
                            .zip(vg.data())
                            .map(|(&gv, &gav)| gv * gav)
                            .collect();
                        let mean_gh = gh.iter().sum::<f64>() / cols as f64;
                        let mean_gh_xh =
                            gh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<f64>() / cols as f64;
                        let acc_row = acc.row_mut(r);
                        for j in 0..cols {
                            acc_row[j] += rstds[r] * (gh[j] - mean_gh - xh[j] * mean_gh_xh);
                        }
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let rows = self.nodes[id].value.rows();
                let total = self.nodes[id].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    add_into(&mut grads[p], self.value(p).shape(), &|acc| {
                        for r in 0..rows {
                            let g_row = &g.data()[r * total + offset..r * total + offset + w];
                            let acc_row = acc.row_mut(r);
                            for (slot, &v) in acc_row.iter_mut().zip(g_row) {
                                *slot += v;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows { parts } => {
                let cols = self.nodes[id].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    add_into(&mut grads[p], self.value(p).shape(), &|acc| {
                        let seg = &g.data()[offset * cols..(offset + r) * cols];
                        for (slot, &v) in acc.data_mut().iter_mut().zip(seg) {
                            *slot += v;
                        }
                    });
                    offset += r;
                }
            }
            Op::SliceCols { a, start, end } => {
                let va = self.value(*a);
                let (rows, cols, w) = (va.rows(), va.cols(), end - start);
                add_into(&mut grads[*a], va.shape(), &|acc| {
                    for r in 0..rows {
                        let g_row = &g.data()[r * w..(r + 1) * w];
                        let acc_row = &mut acc.data_mut()[r * cols + start..r * cols + end];
                        for (slot, &v) in acc_row.iter_mut().zip(g_row) {
                            *slot += v;
                        }
                    }
                });
            }
            Op::SliceRows { a, start, .. } => {
                let va = self.value(*a);
                let cols = va.cols();
                add_into(&mut grads[*a], va.shape(), &|acc| {
                    let seg = &mut acc.data_mut()[start * cols..start * cols + g.numel()];
                    for (slot, &v) in seg.iter_mut().zip(g.data()) {
                        *slot += v;
                    }
                });
            }
            Op::Sum { a } => {
                let va = self.value(*a);
                let gv = g.data()[0];
                add_into(&mut grads[*a], va.shape(), &|acc| {
                    for slot in acc.data_mut() {
                        *slot += gv;
                    }
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn quadratic_gradient_analytic() {
        // loss = sum(p * p), p = [1,2,3] -> grad [2,4,6]
        let mut tape = Tape::new();
        let p = tape.leaf(Array::from_vec(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_zero_gradients() {
        let mut tape = Tape::new();
        let p = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
        let c = tape.leaf(Array::scalar(5.0));
        let loss = tape.sum(c);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(p).is_none(), "off-path node must be exactly zero");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn softmax_symmetry() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::from_vec(vec![0.0, 0.0]));
        let y = tape.softmax(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2)
        let (a, b) = (0.7, -1.3);
        let build = |weights: (f64, f64)| -> (Vec<f64>, Vec<f64>) {
            let mut rng = Rng::new(11);
            let p_data = Array::new(vec![2, 2], rng.gaussian_vec(4)).unwrap();
            let x_data = Array::new(vec![2, 2], rng.gaussian_vec(4)).unwrap();
            let mut tape = Tape::new();
            let p = tape.leaf(p_data);
            let x = tape.leaf(x_data);
            let prod = tape.matmul(p, x).unwrap();
            let l1 = tape.sum(prod);
            let sq = tape.mul(p, p).unwrap();
            let l2 = tape.sum(sq);
            let s1 = tape.scale(l1, weights.0);
            let s2 = tape.scale(l2, weights.1);
            let loss = tape.add(s1, s2).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                grads.get(p).unwrap().data().to_vec(),
                grads.get(x).unwrap().data().to_vec(),
            )
        };
        let (gp_combined, gx_combined) = build((a, b));
        let (gp_1, gx_1) = build((1.0, 0.0));
        let (gp_2, gx_2) = build((0.0, 1.0));
        for i in 0..4 {
            assert!((gp_combined[i] - (a * gp_1[i] + b * gp_2[i])).abs() < 1e-12);
            assert!((gx_combined[i] - (a * gx_1[i] + b * gx_2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_deterministic() {
        let run = || {
            let mut rng = Rng::new(5);
            let mut tape = Tape::new();
            let w = tape.leaf(Array::new(vec![3, 3], rng.gaussian_vec(9)).unwrap());
            let x = tape.leaf(Array::new(vec![2, 3], rng.gaussian_vec(6)).unwrap());
            let h = tape.matmul(x, w).unwrap();
            let t = tape.tanh(h);
            let loss = tape.sum(t);
            let grads = tape.backward(loss).unwrap();
            grads.get(w).unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
