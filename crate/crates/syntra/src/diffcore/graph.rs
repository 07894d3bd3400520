//! Flat tape-based computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! creation order, so parents always precede children and a reverse scan of
//! the tape is a reverse topological traversal. Node values are never
//! mutated after creation.
//!
//! [`Graph::backward`] computes a fresh per-pass gradient table and then
//! adds it into the persistent per-node gradients, so running backward
//! twice without a reset exactly doubles every gradient.

use super::tensor::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::{Error, Result};

/// Handle to a node within one [`Graph`]. Ids are only meaningful for the
/// graph that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    /// Matrix plus a vector broadcast across rows.
    AddRowVec(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// a[m x k] * b[k x p]
    Matmul(NodeId, NodeId),
    /// a[m x k] * b[p x k]^T
    MatmulNt(NodeId, NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    /// Mean per-row KL(softmax(p) || softmax(q)); q is a fixed reference.
    KlDiv { p: NodeId, q: NodeId },
    GatherRows { table: NodeId, ids: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    SliceRows { src: NodeId, start: usize, len: usize },
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// Reverse-mode automatic differentiation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value out of {:?}", op);
        self.nodes.push(Node { op, value, grad: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.node(id).value
    }

    /// Accumulated gradient of `id`, if backward has reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.node(id).grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.node(id).requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// A differentiable leaf (parameters, or activations under optimization).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that never receives gradient (inputs, frozen weights, masks).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        if !va.same_shape(vb) {
            return Err(Error::Dimension(format!(
                "add shapes differ: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (va, vv) = (&self.node(a).value, &self.node(v).value);
        if vv.shape().len() != 1 || vv.len() != va.cols() {
            return Err(Error::Dimension(format!(
                "row-vector add: matrix {:?} vs vector {:?}",
                va.shape(),
                vv.shape()
            )));
        }
        let cols = va.cols();
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vv.data()) {
                *o += b;
            }
        }
        debug_assert_eq!(out.cols(), cols);
        let rg = self.node(a).requires_grad || self.node(v).requires_grad;
        Ok(self.push(Op::AddRowVec(a, v), out, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        if !va.same_shape(vb) {
            return Err(Error::Dimension(format!(
                "mul shapes differ: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = &self.node(a).value;
        let data = va.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("scale preserves shape");
        let rg = self.node(a).requires_grad;
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        if va.cols() != vb.rows() {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k, p) = (va.rows(), va.cols(), vb.cols());
        let mut out = Tensor::zeros(vec![m, p]);
        matmul_nn_acc(out.data_mut(), va.data(), vb.data(), m, k, p);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::Matmul(a, b), out, rg))
    }

    /// `a * b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        if va.cols() != vb.cols() {
            return Err(Error::Dimension(format!(
                "matmul_nt inner dimensions differ: {:?} x {:?}^T",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k, p) = (va.rows(), va.cols(), vb.rows());
        let mut out = Tensor::zeros(vec![m, p]);
        matmul_nt_acc(out.data_mut(), va.data(), vb.data(), m, k, p);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::MatmulNt(a, b), out, rg))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let va = &self.node(a).value;
        let data = va.data().iter().map(|&x| gelu(x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("gelu preserves shape");
        let rg = self.node(a).requires_grad;
        self.push(Op::Gelu(a), value, rg)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = &self.node(a).value;
        let mut out = va.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.node(a).requires_grad;
        self.push(Op::SoftmaxRows(a), out, rg)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (vx, vg, vb) = (&self.node(x).value, &self.node(gain).value, &self.node(bias).value);
        let d = vx.cols();
        if vg.len() != d || vb.len() != d {
            return Err(Error::Dimension(format!(
                "layer_norm affine size {} / {} vs row width {}",
                vg.len(),
                vb.len(),
                d
            )));
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let (mean, var) = mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * vg.data()[j] + vb.data()[j];
            }
        }
        let rg = self.node(x).requires_grad
            || self.node(gain).requires_grad
            || self.node(bias).requires_grad;
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, out, rg))
    }

    /// Mean over positions of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let vl = &self.node(logits).value;
        let (m, vocab) = (vl.rows(), vl.cols());
        if targets.len() != m {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} target ids for {} logit rows",
                targets.len(),
                m
            )));
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= vocab {
                return Err(Error::Index(format!(
                    "cross_entropy target {t} at position {i} exceeds vocab {vocab}"
                )));
            }
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            total -= log_softmax_at(vl.row(r), t);
        }
        let value = Tensor::scalar(total / m as f64);
        let rg = self.node(logits).requires_grad;
        Ok(self.push(Op::CrossEntropy { logits, targets: targets.to_vec() }, value, rg))
    }

    /// Mean per-row KL(softmax(p) || softmax(q)). Gradient flows into `p`
    /// only; the `q` branch is a fixed reference.
    pub fn kl_divergence(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let (vp, vq) = (&self.node(p).value, &self.node(q).value);
        if !vp.same_shape(vq) {
            return Err(Error::Dimension(format!(
                "kl_divergence shapes differ: {:?} vs {:?}",
                vp.shape(),
                vq.shape()
            )));
        }
        let m = vp.rows();
        let mut total = 0.0;
        for r in 0..m {
            total += kl_row(vp.row(r), vq.row(r));
        }
        let value = Tensor::scalar(total / m as f64);
        let rg = self.node(p).requires_grad;
        Ok(self.push(Op::KlDiv { p, q }, value, rg))
    }

    /// Select rows of `table` by id; repeated ids accumulate gradient.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = &self.node(table).value;
        let (n, d) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::Index(format!("gather row {id} from table of {n} rows")));
            }
            data.extend_from_slice(vt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.node(table).requires_grad;
        Ok(self.push(Op::GatherRows { table, ids: ids.to_vec() }, value, rg))
    }

    /// Stack row blocks on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_rows of zero parts".into()));
        }
        let cols = self.node(parts[0]).value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let v = &self.node(p).value;
            if v.cols() != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows widths differ: {} vs {}",
                    v.cols(),
                    cols
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
            rg |= self.node(p).requires_grad;
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, rg))
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let vs = &self.node(src).value;
        if start + len > vs.rows() {
            return Err(Error::Index(format!(
                "slice rows {start}..{} of {} rows",
                start + len,
                vs.rows()
            )));
        }
        let d = vs.cols();
        let data = vs.data()[start * d..(start + len) * d].to_vec();
        let value = Tensor::new(vec![len, d], data)?;
        let rg = self.node(src).requires_grad;
        Ok(self.push(Op::SliceRows { src, start, len }, value, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let va = &self.node(a).value;
        let value = Tensor::scalar(va.data().iter().sum());
        let rg = self.node(a).requires_grad;
        self.push(Op::Sum(a), value, rg)
    }

    /// Reverse-mode pass from a scalar root.
    ///
    /// Computes this pass's gradient table and adds it into the persistent
    /// gradients, so repeated calls accumulate.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.node(root).value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.node(root).value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut pass: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        pass[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let upstream = match pass[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &upstream, &mut pass);
            match &mut self.nodes[i].grad {
                Some(g) => {
                    for (a, b) in g.data_mut().iter_mut().zip(upstream.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(upstream),
            }
        }
        Ok(())
    }

    /// Add this node's contribution to each parent's per-pass gradient.
    fn propagate(&self, i: usize, up: &Tensor, pass: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let rg = |id: NodeId| self.nodes[id.0].requires_grad;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut send = |id: NodeId, contrib: Tensor, pass: &mut [Option<Tensor>]| {
            match &mut pass[id.0] {
                Some(g) => {
                    for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(contrib),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(*a) {
                    send(*a, up.clone(), pass);
                }
                if rg(*b) {
                    send(*b, up.clone(), pass);
                }
            }
            Op::AddRowVec(a, v) => {
                if rg(*a) {
                    send(*a, up.clone(), pass);
                }
                if rg(*v) {
                    let cols = up.cols();
                    let mut dv = vec![0.0; cols];
                    for r in 0..up.rows() {
                        for (dvj, &u) in dv.iter_mut().zip(up.row(r)) {
                            *dvj += u;
                        }
                    }
                    send(*v, Tensor::vector(dv), pass);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let data = up.data().iter().zip(val(*b).data()).map(|(u, y)| u * y).collect();
                    send(*a, Tensor::new(val(*a).shape().to_vec(), data).unwrap(), pass);
                }
                if rg(*b) {
                    let data = up.data().iter().zip(val(*a).data()).map(|(u, x)| u * x).collect();
                    send(*b, Tensor::new(val(*b).shape().to_vec(), data).unwrap(), pass);
                }
            }
            Op::Scale(a, c) => {
                if rg(*a) {
                    let data = up.data().iter().map(|u| u * c).collect();
                    send(*a, Tensor::new(val(*a).shape().to_vec(), data).unwrap(), pass);
                }
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, p) = (va.rows(), va.cols(), vb.cols());
                if rg(*a) {
                    // dA = dC * B^T
                    let mut da = Tensor::zeros(vec![m, k]);
                    matmul_nt_acc(da.data_mut(), up.data(), vb.data(), m, p, k);
                    send(*a, da, pass);
                }
                if rg(*b) {
                    // dB = A^T * dC
                    let mut db = Tensor::zeros(vec![k, p]);
                    matmul_tn_acc(db.data_mut(), va.data(), up.data(), m, k, p);
                    send(*b, db, pass);
                }
            }
            Op::MatmulNt(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, p) = (va.rows(), va.cols(), vb.rows());
                if rg(*a) {
                    // C = A B^T  =>  dA = dC * B
                    let mut da = Tensor::zeros(vec![m, k]);
                    matmul_nn_acc(da.data_mut(), up.data(), vb.data(), m, p, k);
                    send(*a, da, pass);
                }
                if rg(*b) {
                    // dB = dC^T * A
                    let mut db = Tensor::zeros(vec![p, k]);
                    matmul_tn_acc(db.data_mut(), up.data(), va.data(), m, p, k);
                    send(*b, db, pass);
                }
            }
            Op::Gelu(a) => {
                if rg(*a) {
                    let data = up
                        .data()
                        .iter()
                        .zip(val(*a).data())
                        .map(|(u, &x)| u * gelu_deriv(x))
                        .collect();
                    send(*a, Tensor::new(val(*a).shape().to_vec(), data).unwrap(), pass);
                }
            }
            Op::SoftmaxRows(a) => {
                if rg(*a) {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.shape().to_vec());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let ur = up.row(r);
                        let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &uv) in dx.row_mut(r).iter_mut().zip(yr).zip(ur) {
                            *d = yv * (uv - dot);
                        }
                    }
                    send(*a, dx, pass);
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let vx = val(*x);
                let vg = val(*gain);
                let d = vx.cols() as f64;
                let mut dx = Tensor::zeros(vx.shape().to_vec());
                let mut dg = vec![0.0; vx.cols()];
                let mut db = vec![0.0; vx.cols()];
                for r in 0..vx.rows() {
                    let xr = vx.row(r);
                    let ur = up.row(r);
                    let (mean, var) = mean_var(xr);
                    let inv = 1.0 / (var + eps).sqrt();
                    // dxhat_j = u_j * g_j; classic two-reduction form.
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..xr.len() {
                        let xhat = (xr[j] - mean) * inv;
                        let dxhat = ur[j] * vg.data()[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dg[j] += ur[j] * xhat;
                        db[j] += ur[j];
                    }
                    for (j, dst) in dx.row_mut(r).iter_mut().enumerate() {
                        let xhat = (xr[j] - mean) * inv;
                        let dxhat = ur[j] * vg.data()[j];
                        *dst = inv * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
                    }
                }
                if rg(*x) {
                    send(*x, dx, pass);
                }
                if rg(*gain) {
                    send(*gain, Tensor::vector(dg), pass);
                }
                if rg(*bias) {
                    send(*bias, Tensor::vector(db), pass);
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if rg(*logits) {
                    let vl = val(*logits);
                    let m = vl.rows();
                    let scale = up.item() / m as f64;
                    let mut dl = Tensor::zeros(vl.shape().to_vec());
                    for (r, &t) in targets.iter().enumerate() {
                        let mut probs = vl.row(r).to_vec();
                        softmax_in_place(&mut probs);
                        let dst = dl.row_mut(r);
                        for (j, p) in probs.iter().enumerate() {
                            dst[j] = scale * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                    send(*logits, dl, pass);
                }
            }
            Op::KlDiv { p, q } => {
                // d/dz_k [sum_j p_j (lp_j - lq_j)] = p_k ((lp_k - lq_k) - KL_row)
                if rg(*p) {
                    let (vp, vq) = (val(*p), val(*q));
                    let m = vp.rows();
                    let scale = up.item() / m as f64;
                    let mut dp = Tensor::zeros(vp.shape().to_vec());
                    for r in 0..m {
                        let lp = log_softmax(vp.row(r));
                        let lq = log_softmax(vq.row(r));
                        let row_kl: f64 =
                            lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
                        for (j, dst) in dp.row_mut(r).iter_mut().enumerate() {
                            *dst = scale * lp[j].exp() * ((lp[j] - lq[j]) - row_kl);
                        }
                    }
                    send(*p, dp, pass);
                }
            }
            Op::GatherRows { table, ids } => {
                if rg(*table) {
                    let vt = val(*table);
                    let mut dt = Tensor::zeros(vt.shape().to_vec());
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &u) in dt.row_mut(id).iter_mut().zip(up.row(r)) {
                            *d += u;
                        }
                    }
                    send(*table, dt, pass);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &pid in parts {
                    let rows = val(pid).rows();
                    if rg(pid) {
                        let d = up.cols();
                        let data = up.data()[offset * d..(offset + rows) * d].to_vec();
                        send(pid, Tensor::new(vec![rows, d], data).unwrap(), pass);
                    }
                    offset += rows;
                }
            }
            Op::SliceRows { src, start, len } => {
                if rg(*src) {
                    let vs = val(*src);
                    let mut ds = Tensor::zeros(vs.shape().to_vec());
                    let d = vs.cols();
                    ds.data_mut()[start * d..(start + len) * d].copy_from_slice(up.data());
                    send(*src, ds, pass);
                }
            }
            Op::Sum(a) => {
                if rg(*a) {
                    let u = up.item();
                    let va = val(*a);
                    let data = vec![u; va.len()];
                    send(*a, Tensor::new(va.shape().to_vec(), data).unwrap(), pass);
                }
            }
        }
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - log_z).collect()
}

fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[idx] - log_z
}

fn kl_row(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

/// Log-softmax of a full row, exposed for sampling and scoring paths that
/// work outside a graph.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    log_softmax(row)
}

/// Softmax of a row, exposed for sampling paths.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}
