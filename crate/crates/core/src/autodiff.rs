//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A forward pass records one node per operation; [`Tape::backward`] walks the
//! tape in reverse and accumulates exact analytic gradients for every node
//! flagged as a parameter. Operations are the ones the model needs: affine
//! maps, pointwise nonlinearities, layer norm, neighbor-masked multi-head
//! attention, the gated residual mix, pairwise scoring and the stable
//! binary-cross-entropy head.
//!
//! Gradient correctness is checked against central finite differences in the
//! test suite; keep new ops covered there.

use std::rc::Rc;

use crate::linalg::{dot, Matrix};

pub type NodeId = usize;

/// Lists of attended neighbors per node (row index -> cited node indices).
pub type NeighborLists = Vec<Vec<usize>>;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Broadcast a 1×C bias over every row.
    AddRow(NodeId, NodeId),
    /// Broadcast a 1×1 scalar over every entry.
    AddScalar(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Elu(NodeId),
    /// Inverted dropout; mask entries are 0 or 1/(1-p).
    Dropout { x: NodeId, mask: Vec<f64> },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    /// Multi-head scaled dot-product attention where row i attends over
    /// `neighbors[i]`. Softmax weights are saved for the backward pass,
    /// flattened in (node, head, neighbor) order.
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        neighbors: Rc<NeighborLists>,
        n_heads: usize,
        weights: Vec<f64>,
    },
    /// r = z ⊙ own + (1-z) ⊙ ctx with a per-row gate z (N×1).
    GateMix { own: NodeId, ctx: NodeId, gate: NodeId },
    /// out_p = A[i_p] · B[j_p] for a list of index pairs.
    PairDot {
        a: NodeId,
        b: NodeId,
        pairs: Rc<Vec<(usize, usize)>>,
    },
    /// Mean binary cross-entropy over logits, computed in log-sum-exp form.
    BceWithLogits { logits: NodeId, labels: Rc<Vec<f64>> },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients keyed by tape node id.
pub struct Gradients {
    by_node: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for a node; zeros if the node never received one.
    pub fn take(&mut self, id: NodeId, shape: (usize, usize)) -> Matrix {
        self.by_node[id]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.by_node[id].as_ref()
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Constant input; no gradient flows to it.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; gradient is accumulated for it.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        v.add_assign(&self.nodes[b].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let bias_v = &self.nodes[bias].value;
        assert_eq!(bias_v.rows(), 1, "row bias must be 1×C");
        let mut v = self.nodes[a].value.clone();
        assert_eq!(v.cols(), bias_v.cols(), "bias width");
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            for (x, &b) in row.iter_mut().zip(bias_v.row(0)) {
                *x += b;
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        self.push(v, Op::AddRow(a, bias), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, scalar: NodeId) -> NodeId {
        let s = self.nodes[scalar].value.get(0, 0);
        let v = self.nodes[a].value.map(|x| x + s);
        let rg = self.needs(a) || self.needs(scalar);
        self.push(v, Op::AddScalar(a, scalar), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::tanh);
        let rg = self.needs(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(sigmoid);
        let rg = self.needs(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(elu);
        let rg = self.needs(a);
        self.push(v, Op::Elu(a), rg)
    }

    /// Inverted dropout with keep probability 1-p; identity when p = 0.
    /// The mask is drawn once here and reused by the backward pass.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut impl rand::Rng) -> NodeId {
        assert!((0.0..=1.0).contains(&p), "dropout p in [0,1]");
        let xv = &self.nodes[x].value;
        let scale = if p < 1.0 { 1.0 / (1.0 - p) } else { 0.0 };
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| {
                let u: f64 = rng.gen();
                if u < p {
                    0.0
                } else {
                    scale
                }
            })
            .collect();
        let mut v = xv.clone();
        for (a, &m) in v.as_mut_slice().iter_mut().zip(&mask) {
            *a *= m;
        }
        let rg = self.needs(x);
        self.push(v, Op::Dropout { x, mask }, rg)
    }

    /// Per-row layer norm with learned scale/shift (gamma, beta are 1×C).
    /// Rows are centered and scaled to unit population variance before the
    /// affine map; epsilon is small enough to keep that exact to ~1e-9.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        const EPS: f64 = 1e-12;
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gamma].value;
        let b = &self.nodes[beta].value;
        let (n, c) = xv.shape();
        assert_eq!(g.shape(), (1, c));
        assert_eq!(b.shape(), (1, c));
        let mut normalized = Matrix::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Matrix::zeros(n, c);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + EPS).sqrt();
            inv_std.push(istd);
            for j in 0..c {
                let xhat = (row[j] - mean) * istd;
                normalized.set(i, j, xhat);
                out.set(i, j, g.get(0, j) * xhat + b.get(0, j));
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// Multi-head attention restricted to each row's neighbor list.
    /// Row i of the output is the concatenation over heads of
    /// softmax(q_i·k_j/√d_h) · v_j for j in neighbors[i]; rows with no
    /// neighbors come out all-zero.
    pub fn masked_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        neighbors: Rc<NeighborLists>,
        n_heads: usize,
    ) -> NodeId {
        let qv = &self.nodes[q].value;
        let kv = &self.nodes[k].value;
        let vv = &self.nodes[v].value;
        let (n, d) = qv.shape();
        assert_eq!(kv.shape(), (n, d));
        assert_eq!(vv.shape(), (n, d));
        assert_eq!(neighbors.len(), n, "one neighbor list per row");
        assert_eq!(d % n_heads, 0, "dim divisible by heads");
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut out = Matrix::zeros(n, d);
        let mut weights = Vec::new();
        let mut scores = Vec::new();
        for i in 0..n {
            let nbrs = &neighbors[i];
            if nbrs.is_empty() {
                continue;
            }
            for h in 0..n_heads {
                let lo = h * dh;
                let hi = lo + dh;
                let qi = &qv.row(i)[lo..hi];
                scores.clear();
                let mut max = f64::NEG_INFINITY;
                for &j in nbrs {
                    let s = dot(qi, &kv.row(j)[lo..hi]) * scale;
                    if s > max {
                        max = s;
                    }
                    scores.push(s);
                }
                let mut denom = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                let orow = &mut out.row_mut(i)[lo..hi];
                for (idx, &j) in nbrs.iter().enumerate() {
                    let w = scores[idx] / denom;
                    weights.push(w);
                    let vrow = &vv.row(j)[lo..hi];
                    for (o, &x) in orow.iter_mut().zip(vrow) {
                        *o += w * x;
                    }
                }
            }
        }
        let rg = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                neighbors,
                n_heads,
                weights,
            },
            rg,
        )
    }

    /// r = z ⊙ own + (1-z) ⊙ ctx, z is an N×1 gate broadcast over columns.
    pub fn gate_mix(&mut self, own: NodeId, ctx: NodeId, gate: NodeId) -> NodeId {
        let o = &self.nodes[own].value;
        let cx = &self.nodes[ctx].value;
        let z = &self.nodes[gate].value;
        let (n, c) = o.shape();
        assert_eq!(cx.shape(), (n, c));
        assert_eq!(z.shape(), (n, 1));
        let mut v = Matrix::zeros(n, c);
        for i in 0..n {
            let zi = z.get(i, 0);
            let (orow, crow, vrow) = (o.row(i), cx.row(i), v.row_mut(i));
            for j in 0..c {
                vrow[j] = zi * orow[j] + (1.0 - zi) * crow[j];
            }
        }
        let rg = self.needs(own) || self.needs(ctx) || self.needs(gate);
        self.push(v, Op::GateMix { own, ctx, gate }, rg)
    }

    /// out_p = A[i_p] · B[j_p]; output is P×1.
    pub fn pair_dot(&mut self, a: NodeId, b: NodeId, pairs: Rc<Vec<(usize, usize)>>) -> NodeId {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        assert_eq!(av.cols(), bv.cols(), "pair_dot widths");
        let mut v = Matrix::zeros(pairs.len(), 1);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            v.set(p, 0, dot(av.row(i), bv.row(j)));
        }
        let rg = self.needs(a) || self.needs(b);
        self.push(v, Op::PairDot { a, b, pairs }, rg)
    }

    /// Mean over pairs of -[y ln σ(x) + (1-y) ln(1-σ(x))], in the
    /// overflow-free form max(x,0) - x·y + ln(1+e^{-|x|}). Output is 1×1.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: Rc<Vec<f64>>) -> NodeId {
        let lv = &self.nodes[logits].value;
        assert_eq!(lv.cols(), 1, "logits are P×1");
        assert_eq!(lv.rows(), labels.len(), "one label per logit");
        assert!(!labels.is_empty(), "empty loss");
        let mut total = 0.0;
        for (p, &y) in labels.iter().enumerate() {
            let x = lv.get(p, 0);
            total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        }
        let v = Matrix::from_vec(1, 1, vec![total / labels.len() as f64]);
        let rg = self.needs(logits);
        self.push(v, Op::BceWithLogits { logits, labels }, rg)
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.nodes[root].value.shape(), (1, 1), "root must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for id in (0..=root).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = g.matmul_nt(&self.nodes[*b].value);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = self.nodes[*a].value.matmul_tn(&g);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(*bias) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (s, &x) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                                *s += x;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::AddScalar(a, scalar) => {
                    if self.needs(*scalar) {
                        let total: f64 = g.as_slice().iter().sum();
                        accumulate(&mut grads, *scalar, Matrix::from_vec(1, 1, vec![total]));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let mut dx = g;
                    for (d, &t) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *d *= 1.0 - t * t;
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    let mut dx = g;
                    for (d, &s) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *d *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Elu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut dx = g;
                    for (d, &xi) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        *d *= if xi > 0.0 { 1.0 } else { xi.exp() };
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (d, &m) in dx.as_mut_slice().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let (n, c) = normalized.shape();
                    let gam = &self.nodes[*gamma].value;
                    if self.needs(*beta) {
                        let mut db = Matrix::zeros(1, c);
                        for i in 0..n {
                            for (s, &gi) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                                *s += gi;
                            }
                        }
                        accumulate(&mut grads, *beta, db);
                    }
                    if self.needs(*gamma) {
                        let mut dg = Matrix::zeros(1, c);
                        for i in 0..n {
                            let grow = g.row(i);
                            let xrow = normalized.row(i);
                            for j in 0..c {
                                dg.row_mut(0)[j] += grow[j] * xrow[j];
                            }
                        }
                        accumulate(&mut grads, *gamma, dg);
                    }
                    if self.needs(*x) {
                        let mut dx = Matrix::zeros(n, c);
                        for i in 0..n {
                            let grow = g.row(i);
                            let xhat = normalized.row(i);
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for j in 0..c {
                                let dxh = grow[j] * gam.get(0, j);
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xhat[j];
                            }
                            mean_dxhat /= c as f64;
                            mean_dxhat_xhat /= c as f64;
                            let drow = dx.row_mut(i);
                            for j in 0..c {
                                let dxh = grow[j] * gam.get(0, j);
                                drow[j] =
                                    inv_std[i] * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    neighbors,
                    n_heads,
                    weights,
                } => {
                    let qv = &self.nodes[*q].value;
                    let kv = &self.nodes[*k].value;
                    let vv = &self.nodes[*v].value;
                    let (n, d) = qv.shape();
                    let dh = d / n_heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Matrix::zeros(n, d);
                    let mut dk = Matrix::zeros(n, d);
                    let mut dv = Matrix::zeros(n, d);
                    let mut w_off = 0;
                    let mut dalpha = Vec::new();
                    for i in 0..n {
                        let nbrs = &neighbors[i];
                        if nbrs.is_empty() {
                            continue;
                        }
                        for h in 0..*n_heads {
                            let lo = h * dh;
                            let hi = lo + dh;
                            let grow = &g.row(i)[lo..hi];
                            let alpha = &weights[w_off..w_off + nbrs.len()];
                            w_off += nbrs.len();

                            // dα_j = g · v_j ; dv_j += α_j g
                            dalpha.clear();
                            for (idx, &j) in nbrs.iter().enumerate() {
                                let vrow = &vv.row(j)[lo..hi];
                                dalpha.push(dot(grow, vrow));
                                let dvrow = &mut dv.row_mut(j)[lo..hi];
                                for (dvi, &gi) in dvrow.iter_mut().zip(grow) {
                                    *dvi += alpha[idx] * gi;
                                }
                            }
                            // softmax backward: ds_j = α_j (dα_j - Σ α dα)
                            let inner: f64 =
                                alpha.iter().zip(&dalpha).map(|(&a, &da)| a * da).sum();
                            for (idx, &j) in nbrs.iter().enumerate() {
                                let ds = alpha[idx] * (dalpha[idx] - inner) * scale;
                                let krow = &kv.row(j)[lo..hi];
                                let qrow = &qv.row(i)[lo..hi];
                                {
                                    let dqrow = &mut dq.row_mut(i)[lo..hi];
                                    for (dqi, &ki) in dqrow.iter_mut().zip(krow) {
                                        *dqi += ds * ki;
                                    }
                                }
                                let dkrow = &mut dk.row_mut(j)[lo..hi];
                                for (dki, &qi) in dkrow.iter_mut().zip(qrow) {
                                    *dki += ds * qi;
                                }
                            }
                        }
                    }
                    if self.needs(*q) {
                        accumulate(&mut grads, *q, dq);
                    }
                    if self.needs(*k) {
                        accumulate(&mut grads, *k, dk);
                    }
                    if self.needs(*v) {
                        accumulate(&mut grads, *v, dv);
                    }
                }
                Op::GateMix { own, ctx, gate } => {
                    let o = &self.nodes[*own].value;
                    let cx = &self.nodes[*ctx].value;
                    let z = &self.nodes[*gate].value;
                    let (n, c) = o.shape();
                    if self.needs(*own) {
                        let mut d = Matrix::zeros(n, c);
                        for i in 0..n {
                            let zi = z.get(i, 0);
                            for (di, &gi) in d.row_mut(i).iter_mut().zip(g.row(i)) {
                                *di = zi * gi;
                            }
                        }
                        accumulate(&mut grads, *own, d);
                    }
                    if self.needs(*ctx) {
                        let mut d = Matrix::zeros(n, c);
                        for i in 0..n {
                            let zi = z.get(i, 0);
                            for (di, &gi) in d.row_mut(i).iter_mut().zip(g.row(i)) {
                                *di = (1.0 - zi) * gi;
                            }
                        }
                        accumulate(&mut grads, *ctx, d);
                    }
                    if self.needs(*gate) {
                        let mut d = Matrix::zeros(n, 1);
                        for i in 0..n {
                            let mut s = 0.0;
                            for ((&gi, &oi), &ci) in g.row(i).iter().zip(o.row(i)).zip(cx.row(i)) {
                                s += gi * (oi - ci);
                            }
                            d.set(i, 0, s);
                        }
                        accumulate(&mut grads, *gate, d);
                    }
                }
                Op::PairDot { a, b, pairs } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        let gp = g.get(p, 0);
                        {
                            let darow = da.row_mut(i);
                            for (d, &x) in darow.iter_mut().zip(bv.row(j)) {
                                *d += gp * x;
                            }
                        }
                        let dbrow = db.row_mut(j);
                        for (d, &x) in dbrow.iter_mut().zip(av.row(i)) {
                            *d += gp * x;
                        }
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::BceWithLogits { logits, labels } => {
                    let lv = &self.nodes[*logits].value;
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let mut dl = Matrix::zeros(lv.rows(), 1);
                    for (p, &y) in labels.iter().enumerate() {
                        let x = lv.get(p, 0);
                        dl.set(p, 0, scale * (sigmoid(x) - y));
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        Gradients { by_node: grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central finite differences of a scalar-valued forward closure with
    /// respect to one leaf matrix, rebuilt from scratch per evaluation.
    fn finite_diff(
        build: &dyn Fn(&[Matrix]) -> f64,
        leaves: &[Matrix],
        which: usize,
        h: f64,
    ) -> Matrix {
        let mut out = Matrix::zeros(leaves[which].rows(), leaves[which].cols());
        for idx in 0..leaves[which].len() {
            let mut plus = leaves.to_vec();
            plus[which].as_mut_slice()[idx] += h;
            let mut minus = leaves.to_vec();
            minus[which].as_mut_slice()[idx] -= h;
            out.as_mut_slice()[idx] = (build(&plus) - build(&minus)) / (2.0 * h);
        }
        out
    }

    fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradcheck_dense_chain() {
        // scalar = bce(pair_dot(layer_norm(tanh(X·W + b)), E), labels)
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 4, 3);
        let w = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 1, 4);
        let gamma = random_matrix(&mut rng, 1, 4);
        let beta = random_matrix(&mut rng, 1, 4);
        let leaves = vec![x, w, b, gamma, beta];
        let pairs = Rc::new(vec![(0, 1), (2, 3), (1, 2)]);
        let labels = Rc::new(vec![1.0, 0.0, 1.0]);

        let run = |ls: &[Matrix]| -> (f64, Vec<Matrix>) {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = ls.iter().map(|m| tape.param(m.clone())).collect();
            let mm = tape.matmul(ids[0], ids[1]);
            let aff = tape.add_row(mm, ids[2]);
            let th = tape.tanh(aff);
            let ln = tape.layer_norm(th, ids[3], ids[4]);
            let pd = tape.pair_dot(ln, ln, Rc::clone(&pairs));
            let loss = tape.bce_with_logits(pd, Rc::clone(&labels));
            let value = tape.value(loss).get(0, 0);
            let mut grads = tape.backward(loss);
            let out = ids
                .iter()
                .zip(ls)
                .map(|(&id, m)| grads.take(id, m.shape()))
                .collect();
            (value, out)
        };

        let (_, analytic) = run(&leaves);
        let forward = |ls: &[Matrix]| run(ls).0;
        for which in 0..leaves.len() {
            let fd = finite_diff(&forward, &leaves, which, 1e-5);
            let err = max_rel_err(&analytic[which], &fd);
            assert!(err < 1e-6, "leaf {which}: rel err {err}");
        }
    }

    #[test]
    fn gradcheck_attention_gate_elu() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_matrix(&mut rng, 5, 4);
        let wq = random_matrix(&mut rng, 4, 4);
        let wk = random_matrix(&mut rng, 4, 4);
        let wv = random_matrix(&mut rng, 4, 4);
        let va = random_matrix(&mut rng, 4, 1);
        let ca = random_matrix(&mut rng, 1, 1);
        let leaves = vec![h, wq, wk, wv, va, ca];
        let neighbors: Rc<NeighborLists> =
            Rc::new(vec![vec![1, 2], vec![0], vec![], vec![0, 1, 4], vec![3]]);
        let pairs = Rc::new(vec![(0, 2), (3, 1), (4, 4)]);
        let labels = Rc::new(vec![0.0, 1.0, 0.0]);

        let run = |ls: &[Matrix]| -> (f64, Vec<Matrix>) {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = ls.iter().map(|m| tape.param(m.clone())).collect();
            let q = tape.matmul(ids[0], ids[1]);
            let k = tape.matmul(ids[0], ids[2]);
            let v = tape.matmul(ids[0], ids[3]);
            let ctx = tape.masked_attention(q, k, v, Rc::clone(&neighbors), 2);
            let pre = tape.matmul(ctx, ids[4]); // N×1
            let zpre = tape.add_scalar(pre, ids[5]);
            let z = tape.sigmoid(zpre);
            let mixed = tape.gate_mix(ids[0], ctx, z);
            let act = tape.elu(mixed);
            let pd = tape.pair_dot(act, act, Rc::clone(&pairs));
            let loss = tape.bce_with_logits(pd, Rc::clone(&labels));
            let value = tape.value(loss).get(0, 0);
            let mut grads = tape.backward(loss);
            let out = ids
                .iter()
                .zip(ls)
                .map(|(&id, m)| grads.take(id, m.shape()))
                .collect();
            (value, out)
        };

        let (_, analytic) = run(&leaves);
        let forward = |ls: &[Matrix]| run(ls).0;
        for which in 0..leaves.len() {
            let fd = finite_diff(&forward, &leaves, which, 1e-5);
            let err = max_rel_err(&analytic[which], &fd);
            assert!(err < 1e-6, "leaf {which}: rel err {err}");
        }
    }

    #[test]
    fn dropout_backward_uses_same_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut tape = Tape::new();
        let xid = tape.param(x.clone());
        let y = tape.dropout(xid, 0.5, &mut rng);
        let pairs = Rc::new(vec![(0, 1)]);
        let pd = tape.pair_dot(y, y, pairs);
        let loss = tape.bce_with_logits(pd, Rc::new(vec![1.0]));
        let mut grads = tape.backward(loss);
        let gx = grads.take(xid, x.shape());
        // wherever the mask zeroed the activation, the gradient must be zero
        for (i, (&yv, &gv)) in tape.value(y).as_slice().iter().zip(gx.as_slice()).enumerate() {
            if yv == 0.0 && x.as_slice()[i] != 0.0 {
                assert_eq!(gv, 0.0);
            }
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.param(Matrix::from_vec(2, 1, vec![0.5, -0.5]));
        let y = tape.matmul(x, w);
        let loss = tape.bce_with_logits(y, Rc::new(vec![1.0, 0.0]));
        let grads = tape.backward(loss);
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }

    #[test]
    fn bce_known_values() {
        let mut tape = Tape::new();
        let l = tape.input(Matrix::from_vec(2, 1, vec![0.0, 0.0]));
        let loss = tape.bce_with_logits(l, Rc::new(vec![1.0, 0.0]));
        assert!((tape.value(loss).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
