//! Reverse-mode differentiation over the small op set used by the encoder,
//! the projection head, the decoder, the linear probe and the DUET losses.
//!
//! A [`Graph`] is a tape: every op appends a node holding its value, and
//! [`Graph::backward`] walks the tape in reverse. Graphs are built fresh for
//! every step and dropped afterwards.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Floor applied to probabilities inside logarithms of the training losses.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Detach,
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    ScatterSum {
        x: Var,
        map: Vec<Option<usize>>,
    },
    SoftmaxRows(Var),
    JsToTarget {
        p: Var,
        target: Tensor,
    },
    NtXent {
        h: Var,
        temperature: f64,
        unit: Vec<f64>,
        norms: Vec<f64>,
        probs: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mean(Var),
    SumSquares(Var),
    SquaredErrorRowMean {
        pred: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` is disconnected
    /// from the loss.
    pub fn wrt_or_zero(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Parameters that received no gradient at all.
    pub fn disconnected(&self, params: &[Var]) -> Vec<Var> {
        params
            .iter()
            .copied()
            .filter(|v| self.get(*v).is_none())
            .collect()
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Add a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let cols = av.cols();
        if bv.len() != cols {
            return Err(Error::Shape {
                op: "add_row",
                expected: vec![cols],
                got: bv.shape().to_vec(),
            });
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "add",
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let mut out = av.clone();
        for (o, b) in out.data_mut().iter_mut().zip(bv.data()) {
            *o += b;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Identity in the forward pass, blocks gradients in the backward pass.
    pub fn detach(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::Detach, false)
    }

    /// Batch normalization with batch statistics (biased variance).
    ///
    /// Returns the output together with the batch mean and biased variance so
    /// the caller can update running moments.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        self.check_feature_vec("batch_norm", gamma, d)?;
        self.check_feature_vec("batch_norm", beta, d)?;
        if n == 0 {
            return Err(invalid("batch_norm on an empty batch"));
        }
        let mut mean = vec![0.0; d];
        for row in xv.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in xv.data().chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.affine_normalize(x, gamma, beta, &mean, &inv_std);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let node = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        );
        Ok((node, mean, var))
    }

    /// Batch normalization with fixed (running) moments.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let d = self.value(x).cols();
        self.check_feature_vec("batch_norm", gamma, d)?;
        self.check_feature_vec("batch_norm", beta, d)?;
        if mean.len() != d || var.len() != d {
            return Err(Error::Shape {
                op: "batch_norm_eval",
                expected: vec![d],
                got: vec![mean.len(), var.len()],
            });
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.affine_normalize(x, gamma, beta, mean, &inv_std);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    fn check_feature_vec(&self, op: &'static str, v: Var, d: usize) -> Result<()> {
        let len = self.value(v).len();
        if len != d {
            return Err(Error::Shape {
                op,
                expected: vec![d],
                got: vec![len],
            });
        }
        Ok(())
    }

    fn affine_normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Tensor, Vec<f64>) {
        let xv = self.value(x);
        let d = xv.cols();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        (
            Tensor::new(xv.shape().to_vec(), out).expect("same shape"),
            xhat,
        )
    }

    /// Column scatter-add: output column `map[c]` accumulates input column
    /// `c`; `None` drops the column. Covers the C×G row/column reductions.
    pub fn scatter_sum(&mut self, x: Var, map: Vec<Option<usize>>, out_cols: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        if map.len() != d {
            return Err(Error::Shape {
                op: "scatter_sum",
                expected: vec![d],
                got: vec![map.len()],
            });
        }
        if map.iter().flatten().any(|&o| o >= out_cols) {
            return Err(invalid("scatter_sum target column out of range"));
        }
        let mut out = vec![0.0; n * out_cols];
        for (i, row) in xv.data().chunks(d).enumerate() {
            for (c, v) in row.iter().enumerate() {
                if let Some(o) = map[c] {
                    out[i * out_cols + o] += v;
                }
            }
        }
        let rg = self.rg(x);
        let t = Tensor::new(vec![n, out_cols], out)?;
        Ok(self.push(t, Op::ScatterSum { x, map }, rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise Jensen-Shannon divergence between the probabilities in `p`
    /// and a constant target matrix. Output has one entry per row.
    pub fn js_to_target(&mut self, p: Var, target: Tensor) -> Result<Var> {
        let pv = self.value(p);
        if pv.rows() != target.rows() || pv.cols() != target.cols() {
            return Err(Error::Shape {
                op: "js_to_target",
                expected: pv.shape().to_vec(),
                got: target.shape().to_vec(),
            });
        }
        let c = pv.cols();
        let vals: Vec<f64> = pv
            .data()
            .chunks(c)
            .zip(target.data().chunks(c))
            .map(|(pr, qr)| js_floored(pr, qr))
            .collect();
        let rg = self.rg(p);
        let n = vals.len();
        Ok(self.push(Tensor::new(vec![n], vals)?, Op::JsToTarget { p, target }, rg))
    }

    /// NT-Xent over `2N` rows where rows `i` and `i + N` are positives.
    pub fn nt_xent(&mut self, h: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(invalid("temperature must be positive"));
        }
        let hv = self.value(h);
        let (rows, p) = (hv.rows(), hv.cols());
        if rows < 2 || rows % 2 != 0 {
            return Err(invalid("nt_xent needs an even number (>= 2) of rows"));
        }
        let half = rows / 2;
        let mut norms = Vec::with_capacity(rows);
        let mut unit = Vec::with_capacity(rows * p);
        for row in hv.data().chunks(p) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(invalid("nt_xent: zero-norm embedding"));
            }
            norms.push(n);
            unit.extend(row.iter().map(|v| v / n));
        }
        let mut sim = vec![0.0; rows * rows];
        matmul_nt_into(&unit, &unit, &mut sim, rows, rows, p);
        let mut probs = vec![0.0; rows * rows];
        let mut loss = 0.0;
        for a in 0..rows {
            let pos = (a + half) % rows;
            let srow = &sim[a * rows..(a + 1) * rows];
            let mut mx = f64::NEG_INFINITY;
            for (b, s) in srow.iter().enumerate() {
                if b != a && s / temperature > mx {
                    mx = s / temperature;
                }
            }
            let mut z = 0.0;
            for (b, s) in srow.iter().enumerate() {
                if b != a {
                    let e = (s / temperature - mx).exp();
                    probs[a * rows + b] = e;
                    z += e;
                }
            }
            for b in 0..rows {
                probs[a * rows + b] /= z;
            }
            let lse = mx + z.ln();
            loss += lse - srow[pos] / temperature;
        }
        loss /= rows as f64;
        let rg = self.rg(h);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::NtXent {
                h,
                temperature,
                unit,
                norms,
                probs,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits` rows against class labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, k) = (lv.rows(), lv.cols());
        if labels.len() != n {
            return Err(Error::Shape {
                op: "softmax_xent",
                expected: vec![n],
                got: vec![labels.len()],
            });
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(invalid("label index exceeds number of classes"));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            softmax_in_place(row);
            loss -= row[l].max(LOG_FLOOR).ln();
        }
        loss /= n as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.sum() / av.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    /// Mean over rows of the per-row sum of squared errors.
    pub fn squared_error_row_mean(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.rows() != target.rows() {
            return Err(Error::Shape {
                op: "squared_error_row_mean",
                expected: pv.shape().to_vec(),
                got: target.shape().to_vec(),
            });
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let v = total / pv.rows() as f64;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(v), Op::SquaredErrorRowMean { pred, target }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad && matches!(n.op, Op::Leaf))
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if rg(*a) {
                    let ga = slot(grads, *a, n * k);
                    matmul_nt_into(g, bv.data(), ga, n, k, m);
                }
                if rg(*b) {
                    let gb = slot(grads, *b, k * m);
                    matmul_tn_into(av.data(), g, gb, n, k, m);
                }
            }
            Op::AddRow(a, bias) => {
                let cols = node.value.cols();
                if rg(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if rg(*bias) {
                    let gb = slot(grads, *bias, cols);
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if rg(*v) {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Scale(a, s) => {
                if rg(*a) {
                    for (o, gi) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *o += gi * s;
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                for ((o, gi), x) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(av) {
                    if *x > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                for ((o, gi), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *o += gi * y * (1.0 - y);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = node.value.cols();
                let n = node.value.rows();
                let gam = self.value(*gamma).data();
                if rg(*beta) {
                    let gb = slot(grads, *beta, d);
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                }
                if rg(*gamma) {
                    let gg = slot(grads, *gamma, d);
                    for (row, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row[j] * hrow[j];
                        }
                    }
                }
                if rg(*x) {
                    let gx = slot(grads, *x, n * d);
                    if *batch_stats {
                        let mut sum_dh = vec![0.0; d];
                        let mut sum_dh_h = vec![0.0; d];
                        for (row, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                let dh = row[j] * gam[j];
                                sum_dh[j] += dh;
                                sum_dh_h[j] += dh * hrow[j];
                            }
                        }
                        let nf = n as f64;
                        for (i, (row, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                            for j in 0..d {
                                let dh = row[j] * gam[j];
                                gx[i * d + j] += inv_std[j] / nf
                                    * (nf * dh - sum_dh[j] - hrow[j] * sum_dh_h[j]);
                            }
                        }
                    } else {
                        for (i, row) in g.chunks(d).enumerate() {
                            for j in 0..d {
                                gx[i * d + j] += row[j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                }
            }
            Op::ScatterSum { x, map } => {
                let d = map.len();
                let out_cols = node.value.cols();
                let gx = slot(grads, *x, node.value.rows() * d);
                for (i, row) in g.chunks(out_cols).enumerate() {
                    for (c, o) in map.iter().enumerate() {
                        if let Some(o) = o {
                            gx[i * d + c] += row[*o];
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                let ga = slot(grads, *a, g.len());
                for (i, (grow, prow)) in g.chunks(c).zip(node.value.data().chunks(c)).enumerate() {
                    let dot: f64 = grow.iter().zip(prow).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        ga[i * c + j] += prow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::JsToTarget { p, target } => {
                let pv = self.value(*p);
                let c = pv.cols();
                let gp = slot(grads, *p, pv.len());
                for (i, (prow, qrow)) in pv.data().chunks(c).zip(target.data().chunks(c)).enumerate()
                {
                    for j in 0..c {
                        let m = 0.5 * (prow[j] + qrow[j]);
                        let d = 0.5 * (prow[j].max(LOG_FLOOR).ln() - m.max(LOG_FLOOR).ln());
                        gp[i * c + j] += g[i] * d;
                    }
                }
            }
            Op::NtXent {
                h,
                temperature,
                unit,
                norms,
                probs,
            } => {
                let hv = self.value(*h);
                let (rows, p) = (hv.rows(), hv.cols());
                let half = rows / 2;
                let scale = g[0] / rows as f64;
                // coefficient matrix for d loss / d sim
                let mut coef = vec![0.0; rows * rows];
                for a in 0..rows {
                    let pos = (a + half) % rows;
                    for b in 0..rows {
                        if b == a {
                            continue;
                        }
                        let mut c = probs[a * rows + b];
                        if b == pos {
                            c -= 1.0;
                        }
                        coef[a * rows + b] += scale * c;
                        coef[b * rows + a] += scale * c;
                    }
                }
                let mut du = vec![0.0; rows * p];
                matmul_into(&coef, unit, &mut du, rows, rows, p);
                let gh = slot(grads, *h, rows * p);
                for a in 0..rows {
                    let u = &unit[a * p..(a + 1) * p];
                    let d = &mut du[a * p..(a + 1) * p];
                    d.iter_mut().for_each(|v| *v /= temperature);
                    let proj: f64 = u.iter().zip(d.iter()).map(|(x, y)| x * y).sum();
                    for k in 0..p {
                        gh[a * p + k] += (d[k] - u[k] * proj) / norms[a];
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let k = self.value(*logits).cols();
                let n = labels.len();
                let gl = slot(grads, *logits, n * k);
                let s = g[0] / n as f64;
                for (i, l) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == *l { 1.0 } else { 0.0 };
                        gl[i * k + j] += s * (probs[i * k + j] - onehot);
                    }
                }
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                let s = g[0] / len as f64;
                slot(grads, *a, len).iter_mut().for_each(|v| *v += s);
            }
            Op::SumSquares(a) => {
                let av = self.value(*a).data();
                for (o, x) in slot(grads, *a, av.len()).iter_mut().zip(av) {
                    *o += 2.0 * x * g[0];
                }
            }
            Op::SquaredErrorRowMean { pred, target } => {
                let pv = self.value(*pred);
                let s = 2.0 * g[0] / pv.rows() as f64;
                for ((o, a), b) in slot(grads, *pred, pv.len())
                    .iter_mut()
                    .zip(pv.data())
                    .zip(target.data())
                {
                    *o += s * (a - b);
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// JS divergence with the model-side floor used by the training loss.
pub(crate) fn js_floored(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&pj, &qj) in p.iter().zip(q) {
        let m = (0.5 * (pj + qj)).max(LOG_FLOOR);
        if pj > 0.0 {
            s += 0.5 * pj * (pj.max(LOG_FLOOR) / m).ln();
        }
        if qj > 0.0 {
            s += 0.5 * qj * (qj / m).ln();
        }
    }
    s
}
