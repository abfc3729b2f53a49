//! Minimal reverse-mode automatic differentiation over vector-valued nodes.
//!
//! Each node holds a `Vec<f64>` (scalars are length 1). Values are computed
//! eagerly when a node is pushed; [`Tape::backward`] then accumulates
//! gradients in reverse node order, which makes reductions deterministic.
//!
//! Stop-gradient is a first-class node: [`Tape::stop_grad`] copies the value
//! forward and propagates nothing backward. Shape mismatches are programming
//! errors and panic.

use super::kernels::softmax_raw;

pub type NodeId = usize;

enum Op {
    Leaf,
    /// Forward copy of the parent; propagates nothing backward. The parent
    /// id is kept for graph introspection even though backward ignores it.
    StopGrad(#[allow(dead_code)] NodeId),
    /// `W x + b` where `w` stores a `rows x cols` matrix row-major.
    Affine {
        w: NodeId,
        x: NodeId,
        b: NodeId,
        rows: usize,
        cols: usize,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxT {
        x: NodeId,
        tau: f64,
    },
    Index {
        x: NodeId,
        i: usize,
    },
    Slice {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Concat(Vec<NodeId>),
    /// 1-D batch norm over a stacked `n x width` input using batch statistics
    /// (biased variance). Gradients flow through the statistics.
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        n: usize,
        width: usize,
        eps: f64,
    },
    /// 1-D batch norm over a single `width` vector using fixed statistics.
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product; either side may be a scalar (length 1) broadcast.
    Mul(NodeId, NodeId),
    Scale {
        x: NodeId,
        c: f64,
    },
    AddConst {
        x: NodeId,
        #[allow(dead_code)]
        c: f64,
    },
    Ln(NodeId),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    Sum(NodeId),
    AddN(Vec<NodeId>),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.grads[id]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.grads[id].len(), 1);
        self.grads[id][0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(vec![value], Op::Leaf)
    }

    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.clone();
        self.push(v, Op::StopGrad(x))
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.nodes[w].value.len(), rows * cols, "affine weight shape");
        assert_eq!(self.nodes[x].value.len(), cols, "affine input shape");
        assert_eq!(self.nodes[b].value.len(), rows, "affine bias shape");
        let wv = &self.nodes[w].value;
        let xv = &self.nodes[x].value;
        let bv = &self.nodes[b].value;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = bv[r];
            let row = &wv[r * cols..(r + 1) * cols];
            for c in 0..cols {
                acc += row[c] * xv[c];
            }
            out.push(acc);
        }
        self.push(out, Op::Affine { w, x, b, rows, cols })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&a| a.max(0.0)).collect();
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&a| sigmoid(a)).collect();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn softmax_t(&mut self, x: NodeId, tau: f64) -> NodeId {
        assert!(tau > 0.0, "softmax temperature must be positive");
        let v = softmax_raw(&self.nodes[x].value, tau);
        self.push(v, Op::SoftmaxT { x, tau })
    }

    pub fn index(&mut self, x: NodeId, i: usize) -> NodeId {
        let v = self.nodes[x].value[i];
        self.push(vec![v], Op::Index { x, i })
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[x].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start, len })
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let mut v = Vec::new();
        for &id in xs {
            v.extend_from_slice(&self.nodes[id].value);
        }
        self.push(v, Op::Concat(xs.to_vec()))
    }

    /// Batch statistics (biased mean/variance per unit) of a stacked
    /// `n x width` node, as used by [`Tape::batchnorm_train`].
    pub fn batch_stats(&self, x: NodeId, n: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
        let xv = &self.nodes[x].value;
        assert_eq!(xv.len(), n * width);
        let mut mean = vec![0.0; width];
        for row in 0..n {
            for j in 0..width {
                mean[j] += xv[row * width + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; width];
        for row in 0..n {
            for j in 0..width {
                let d = xv[row * width + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= n as f64;
        }
        (mean, var)
    }

    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        n: usize,
        width: usize,
        eps: f64,
    ) -> NodeId {
        let (mean, var) = self.batch_stats(x, n, width);
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let mut out = vec![0.0; n * width];
        for row in 0..n {
            for j in 0..width {
                let istd = 1.0 / (var[j] + eps).sqrt();
                let xhat = (xv[row * width + j] - mean[j]) * istd;
                out[row * width + j] = gv[j] * xhat + bv[j];
            }
        }
        self.push(out, Op::BatchNormTrain { x, gamma, beta, n, width, eps })
    }

    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    ) -> NodeId {
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let out: Vec<f64> = (0..xv.len())
            .map(|j| gv[j] * (xv[j] - mean[j]) / (var[j] + eps).sqrt() + bv[j])
            .collect();
        self.push(out, Op::BatchNormEval { x, gamma, beta, mean, var, eps })
    }

    fn binary_values(&self, a: NodeId, b: NodeId) -> (usize, usize) {
        let la = self.nodes[a].value.len();
        let lb = self.nodes[b].value.len();
        assert!(
            la == lb || la == 1 || lb == 1,
            "shape mismatch: {la} vs {lb}"
        );
        (la, lb)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (la, lb) = self.binary_values(a, b);
        let n = la.max(lb);
        let v: Vec<f64> = (0..n)
            .map(|i| {
                self.nodes[a].value[if la == 1 { 0 } else { i }]
                    + self.nodes[b].value[if lb == 1 { 0 } else { i }]
            })
            .collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (la, lb) = self.binary_values(a, b);
        let n = la.max(lb);
        let v: Vec<f64> = (0..n)
            .map(|i| {
                self.nodes[a].value[if la == 1 { 0 } else { i }]
                    - self.nodes[b].value[if lb == 1 { 0 } else { i }]
            })
            .collect();
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (la, lb) = self.binary_values(a, b);
        let n = la.max(lb);
        let v: Vec<f64> = (0..n)
            .map(|i| {
                self.nodes[a].value[if la == 1 { 0 } else { i }]
                    * self.nodes[b].value[if lb == 1 { 0 } else { i }]
            })
            .collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&a| a * c).collect();
        self.push(v, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&a| a + c).collect();
        self.push(v, Op::AddConst { x, c })
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&a| a.ln()).collect();
        self.push(v, Op::Ln(x))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&a| a.clamp(lo, hi)).collect();
        self.push(v, Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v: f64 = self.nodes[x].value.iter().sum();
        self.push(vec![v], Op::Sum(x))
    }

    pub fn add_n(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let n = self.nodes[xs[0]].value.len();
        let mut v = vec![0.0; n];
        for &id in xs {
            assert_eq!(self.nodes[id].value.len(), n);
            for (o, &a) in v.iter_mut().zip(&self.nodes[id].value) {
                *o += a;
            }
        }
        self.push(v, Op::AddN(xs.to_vec()))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> NodeId {
        let s = self.add_n(xs);
        self.scale(s, 1.0 / xs.len() as f64)
    }

    /// Accumulates gradients of the scalar node `root` with respect to every
    /// node on the tape.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.nodes[root].value.len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[root][0] = 1.0;

        for id in (0..=root).rev() {
            // Split off the gradient of the current node so parents can be
            // mutated while reading it.
            let g = std::mem::take(&mut grads[id]);
            if g.iter().all(|&v| v == 0.0) {
                grads[id] = g;
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf | Op::StopGrad(_) => {}
                Op::Affine { w, x, b, rows, cols } => {
                    let xv = self.nodes[*x].value.clone();
                    let wv = &self.nodes[*w].value;
                    let mut gx = vec![0.0; *cols];
                    for r in 0..*rows {
                        let gr = g[r];
                        grads[*b][r] += gr;
                        let row = &wv[r * cols..(r + 1) * cols];
                        for c in 0..*cols {
                            gx[c] += row[c] * gr;
                        }
                    }
                    for r in 0..*rows {
                        let gr = g[r];
                        for c in 0..*cols {
                            grads[*w][r * cols + c] += gr * xv[c];
                        }
                    }
                    for c in 0..*cols {
                        grads[*x][c] += gx[c];
                    }
                }
                Op::Relu(x) => {
                    for (i, &xi) in self.nodes[*x].value.iter().enumerate() {
                        if xi > 0.0 {
                            grads[*x][i] += g[i];
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    for (i, &si) in self.nodes[id].value.iter().enumerate() {
                        grads[*x][i] += g[i] * si * (1.0 - si);
                    }
                }
                Op::SoftmaxT { x, tau } => {
                    let p = &self.nodes[id].value;
                    let dot: f64 = g.iter().zip(p.iter()).map(|(gi, pi)| gi * pi).sum();
                    for i in 0..p.len() {
                        grads[*x][i] += p[i] * (g[i] - dot) / tau;
                    }
                }
                Op::Index { x, i } => {
                    grads[*x][*i] += g[0];
                }
                Op::Slice { x, start, len } => {
                    for i in 0..*len {
                        grads[*x][start + i] += g[i];
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &cid in xs {
                        let n = self.nodes[cid].value.len();
                        for i in 0..n {
                            grads[cid][i] += g[off + i];
                        }
                        off += n;
                    }
                }
                Op::BatchNormTrain { x, gamma, beta, n, width, eps } => {
                    let (mean, var) = self.batch_stats(*x, *n, *width);
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gamma].value;
                    let nf = *n as f64;
                    for j in 0..*width {
                        let istd = 1.0 / (var[j] + eps).sqrt();
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for row in 0..*n {
                            let xhat = (xv[row * width + j] - mean[j]) * istd;
                            sum_g += g[row * width + j];
                            sum_gx += g[row * width + j] * xhat;
                        }
                        grads[*beta][j] += sum_g;
                        grads[*gamma][j] += sum_gx;
                        for row in 0..*n {
                            let xhat = (xv[row * width + j] - mean[j]) * istd;
                            grads[*x][row * width + j] += gv[j]
                                * istd
                                * (g[row * width + j] - sum_g / nf - xhat * sum_gx / nf);
                        }
                    }
                }
                Op::BatchNormEval { x, gamma, beta, mean, var, eps } => {
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gamma].value;
                    for j in 0..xv.len() {
                        let istd = 1.0 / (var[j] + eps).sqrt();
                        let xhat = (xv[j] - mean[j]) * istd;
                        grads[*gamma][j] += g[j] * xhat;
                        grads[*beta][j] += g[j];
                        grads[*x][j] += g[j] * gv[j] * istd;
                    }
                }
                Op::Add(a, b) => {
                    let la = self.nodes[*a].value.len();
                    let lb = self.nodes[*b].value.len();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[*a][if la == 1 { 0 } else { i }] += gi;
                        grads[*b][if lb == 1 { 0 } else { i }] += gi;
                    }
                }
                Op::Sub(a, b) => {
                    let la = self.nodes[*a].value.len();
                    let lb = self.nodes[*b].value.len();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[*a][if la == 1 { 0 } else { i }] += gi;
                        grads[*b][if lb == 1 { 0 } else { i }] -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let la = self.nodes[*a].value.len();
                    let lb = self.nodes[*b].value.len();
                    for (i, &gi) in g.iter().enumerate() {
                        let av = self.nodes[*a].value[if la == 1 { 0 } else { i }];
                        let bv = self.nodes[*b].value[if lb == 1 { 0 } else { i }];
                        grads[*a][if la == 1 { 0 } else { i }] += gi * bv;
                        grads[*b][if lb == 1 { 0 } else { i }] += gi * av;
                    }
                }
                Op::Scale { x, c } => {
                    for (i, &gi) in g.iter().enumerate() {
                        grads[*x][i] += gi * c;
                    }
                }
                Op::AddConst { x, .. } => {
                    for (i, &gi) in g.iter().enumerate() {
                        grads[*x][i] += gi;
                    }
                }
                Op::Ln(x) => {
                    for (i, &gi) in g.iter().enumerate() {
                        grads[*x][i] += gi / self.nodes[*x].value[i];
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for (i, &gi) in g.iter().enumerate() {
                        let xi = self.nodes[*x].value[i];
                        if xi >= *lo && xi <= *hi {
                            grads[*x][i] += gi;
                        }
                    }
                }
                Op::Sum(x) => {
                    for gx in grads[*x].iter_mut() {
                        *gx += g[0];
                    }
                }
                Op::AddN(xs) => {
                    for &cid in xs {
                        for (i, &gi) in g.iter().enumerate() {
                            grads[cid][i] += gi;
                        }
                    }
                }
            }
            grads[id] = g;
        }
        Gradients { grads }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::finite_diff_check;

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let w = t.scalar(3.0);
        let y = t.mul(w, w);
        let g = t.backward(y);
        assert_eq!(g.scalar(w), 6.0);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut t = Tape::new();
        let w = t.scalar(2.0);
        let s = t.stop_grad(w);
        let y = t.mul(w, s); // y = w * const(2)
        let g = t.backward(y);
        assert_eq!(g.scalar(w), 2.0);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let logits = vec![0.3, -1.2, 0.7, 0.1];
        let mut t = Tape::new();
        let x = t.leaf(logits.clone());
        let p = t.softmax_t(x, 0.7);
        let p0 = t.index(p, 0);
        let lp = t.ln(p0);
        let loss = t.scale(lp, -1.0);
        let g = t.backward(loss);

        let analytic = g.get(x).to_vec();
        let report = finite_diff_check(
            |v| {
                let mut tt = Tape::new();
                let x = tt.leaf(v.to_vec());
                let p = tt.softmax_t(x, 0.7);
                let p0 = tt.index(p, 0);
                let lp = tt.ln(p0);
                let loss = tt.scale(lp, -1.0);
                tt.scalar_value(loss)
            },
            &analytic,
            &logits,
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn batchnorm_train_gradient_matches_finite_differences() {
        // 3 rows x 2 units. The loss weights each output differently: a
        // uniform quadratic is nearly scale-invariant through batch norm and
        // its true input gradient would be O(eps), all cancellation noise.
        let x0 = vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1];
        let eval = |v: &[f64]| {
            let mut t = Tape::new();
            let x = t.leaf(v.to_vec());
            let gamma = t.leaf(vec![1.3, 0.8]);
            let beta = t.leaf(vec![0.1, -0.2]);
            let y = t.batchnorm_train(x, gamma, beta, 3, 2, 1e-5);
            let w = t.leaf(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
            let wy = t.mul(w, y);
            let sq = t.mul(wy, y);
            let s = t.sum(sq);
            (t, x, s)
        };
        let (t, x, s) = eval(&x0);
        let g = t.backward(s);
        let analytic = g.get(x).to_vec();

        let report = finite_diff_check(
            |v| {
                let (t, _, s) = eval(v);
                t.scalar_value(s)
            },
            &analytic,
            &x0,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn batchnorm_gamma_beta_gradients() {
        let gb0 = vec![1.3, 0.8, 0.1, -0.2];
        let eval = |v: &[f64]| {
            let mut t = Tape::new();
            let x = t.leaf(vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1]);
            let gamma = t.leaf(v[0..2].to_vec());
            let beta = t.leaf(v[2..4].to_vec());
            let y = t.batchnorm_train(x, gamma, beta, 3, 2, 1e-5);
            let sq = t.mul(y, y);
            let s = t.sum(sq);
            (t, gamma, beta, s)
        };
        let (t, gamma, beta, s) = eval(&gb0);
        let g = t.backward(s);
        let mut analytic = g.get(gamma).to_vec();
        analytic.extend_from_slice(g.get(beta));

        let report = finite_diff_check(
            |v| {
                let (t, _, _, s) = eval(v);
                t.scalar_value(s)
            },
            &analytic,
            &gb0,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn affine_chain_matches_finite_differences() {
        // 2-layer net on fixed input, gradient w.r.t. all 8 parameters.
        let p0 = vec![0.4, -0.3, 0.2, 0.9, -0.5, 0.1, 0.7, -0.2];
        let eval = |v: &[f64]| {
            let mut t = Tape::new();
            let w1 = t.leaf(v[0..4].to_vec());
            let b1 = t.leaf(v[4..6].to_vec());
            let w2 = t.leaf(v[6..8].to_vec());
            let b2 = t.leaf(vec![0.0]);
            let x = t.leaf(vec![1.0, -2.0]);
            let h = t.affine(w1, x, b1, 2, 2);
            let h = t.relu(h);
            let o = t.affine(w2, h, b2, 1, 2);
            let o = t.sigmoid(o);
            let l = t.ln(o);
            let l = t.scale(l, -1.0);
            (t, l)
        };
        let (t, l) = eval(&p0);
        let g = t.backward(l);
        let mut analytic = Vec::new();
        for id in 0..4 {
            analytic.extend_from_slice(g.get(id));
        }
        analytic.truncate(8);

        let report = finite_diff_check(
            |v| {
                let (t, l) = eval(v);
                t.scalar_value(l)
            },
            &analytic,
            &p0,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }
}
