//! A small reverse-mode automatic differentiation tape.
//!
//! Every forward op appends a node holding its value and enough saved state
//! to run its adjoint. [`Graph::backward`] walks the tape once in reverse.
//! Nodes built only from constants never receive gradients, which keeps the
//! image side of the first convolution from paying for a `col2im`.

use crate::error::{GresError, Result};
use crate::kernels::{self, ConvGeom, EPS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    WeightedSum(Vec<(Var, f64)>),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    EmbedMean {
        table: Var,
        ids: Vec<usize>,
    },
    Tanh(Var),
    Relu(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        // Geometry of the forward convolution that maps the output back onto the input.
        geom: ConvGeom,
    },
    Cosine {
        v: Var,
        q: Var,
        norms: Vec<f64>,
        qnorm: f64,
    },
    WeightedPool {
        v: Var,
        m: Var,
        total: f64,
    },
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    GlobalMaxPool {
        v: Var,
        argmax: Vec<usize>,
    },
    Distance(Var, Var),
    Hinge(Var),
    BceLogits {
        logits: Var,
        target: Vec<f64>,
    },
    Inner {
        a: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn check_shape(expected: &[usize], got: &[usize]) -> Result<()> {
    if expected != got {
        return Err(GresError::shape(expected, got));
    }
    Ok(())
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients (an input).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_shape(self.value(a).shape(), self.value(b).shape())?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_shape(self.value(a).shape(), self.value(b).shape())?;
        let vb = self.value(b).data();
        let mut out = self.value(a).clone();
        for (x, y) in out.data_mut().iter_mut().zip(vb) {
            *x -= y;
        }
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    /// `Σ cᵢ·xᵢ` over same-shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(GresError::InvalidInput("weighted_sum of no terms".into()));
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for &(v, c) in terms {
            check_shape(&shape, self.value(v).shape())?;
            for (o, x) in out.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += c * x;
            }
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(out, Op::WeightedSum(terms.to_vec()), &parents))
    }

    /// Mean of same-shaped terms.
    pub fn mean(&mut self, terms: &[Var]) -> Result<Var> {
        let c = 1.0 / terms.len().max(1) as f64;
        let weighted: Vec<(Var, f64)> = terms.iter().map(|&v| (v, c)).collect();
        self.weighted_sum(&weighted)
    }

    /// `W·x + b` with `W: out×in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (wv, xv, bv) = (self.value(w), self.value(x), self.value(b));
        let [rows, cols] = *wv.shape() else {
            return Err(GresError::InvalidInput(format!(
                "linear weight must be 2-d, got {:?}",
                wv.shape()
            )));
        };
        check_shape(&[cols], xv.shape())?;
        check_shape(&[rows], bv.shape())?;
        let mut out = bv.data().to_vec();
        kernels::gemm(rows, cols, 1, wv.data(), false, xv.data(), false, &mut out, true);
        Ok(self.push(Tensor::vector(out), Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Mean of the embedding-table rows selected by `ids`.
    pub fn embed_mean(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let [vocab, dim] = *tv.shape() else {
            return Err(GresError::InvalidInput("embedding table must be 2-d".into()));
        };
        if ids.is_empty() {
            return Err(GresError::InvalidInput("empty token list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(GresError::InvalidInput(format!(
                "token id {bad} outside vocabulary of {vocab}"
            )));
        }
        let mut out = vec![0.0; dim];
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            for (o, e) in out.iter_mut().zip(&tv.data()[id * dim..(id + 1) * dim]) {
                *o += e * inv;
            }
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::EmbedMean {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// 2-d convolution. `x: Ci×H×W`, `w: Co×Ci×k×k`, `b: Co`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ci, h, wd) = self.value(x).chw()?;
        let [co, wci, k, k2] = *self.value(w).shape() else {
            return Err(GresError::InvalidInput("conv weight must be 4-d".into()));
        };
        if wci != ci || k != k2 {
            return Err(GresError::shape(&[co, ci, k, k], self.value(w).shape()));
        }
        check_shape(&[co], self.value(b).shape())?;
        if h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
            return Err(GresError::InvalidInput(format!(
                "kernel {k} does not fit a {h}×{wd} input with padding {pad}"
            )));
        }
        let geom = ConvGeom {
            channels: ci,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let mut out = vec![0.0; co * ho * wo];
        for (c, bias) in self.value(b).data().iter().enumerate() {
            out[c * ho * wo..(c + 1) * ho * wo].fill(*bias);
        }
        kernels::gemm(
            co,
            geom.col_rows(),
            ho * wo,
            self.value(w).data(),
            false,
            &cols,
            false,
            &mut out,
            true,
        );
        let value = Tensor::new(&[co, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            &[x, w, b],
        ))
    }

    /// Transposed 2-d convolution. `x: Ci×H×W`, `w: Ci×Co×k×k`, `b: Co`.
    ///
    /// Output size is `(H−1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (ci, h, wd) = self.value(x).chw()?;
        let [wci, co, k, k2] = *self.value(w).shape() else {
            return Err(GresError::InvalidInput("transposed conv weight must be 4-d".into()));
        };
        if wci != ci || k != k2 {
            return Err(GresError::shape(&[ci, co, k, k], self.value(w).shape()));
        }
        check_shape(&[co], self.value(b).shape())?;
        let grow = |n: usize| ((n - 1) * stride + k).checked_sub(2 * pad);
        let (Some(ho), Some(wo)) = (grow(h), grow(wd)) else {
            return Err(GresError::InvalidInput("transposed conv output is empty".into()));
        };
        let geom = ConvGeom {
            channels: co,
            height: ho,
            width: wo,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!((geom.out_height(), geom.out_width()), (h, wd));
        let mut cols = vec![0.0; geom.col_rows() * h * wd];
        kernels::gemm(
            geom.col_rows(),
            ci,
            h * wd,
            self.value(w).data(),
            true,
            self.value(x).data(),
            false,
            &mut cols,
            false,
        );
        let mut out = vec![0.0; co * ho * wo];
        kernels::col2im(&cols, &geom, &mut out);
        for (c, bias) in self.value(b).data().iter().enumerate() {
            for o in &mut out[c * ho * wo..(c + 1) * ho * wo] {
                *o += bias;
            }
        }
        let value = Tensor::new(&[co, ho, wo], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, &[x, w, b]))
    }

    /// Cosine similarity of every spatial column of `v: C×H×W` with `q: C`,
    /// giving an `H×W` map. Degenerate (near-zero norm) entries are 0.
    pub fn cosine_map(&mut self, v: Var, q: Var) -> Result<Var> {
        let (c, h, w) = self.value(v).chw()?;
        check_shape(&[c], self.value(q).shape())?;
        let (sims, norms, qnorm) =
            kernels::cosine_map(self.value(v).data(), c, self.value(q).data());
        let value = Tensor::new(&[h, w], sims)?;
        Ok(self.push(value, Op::Cosine { v, q, norms, qnorm }, &[v, q]))
    }

    /// Heatmap-weighted average pooling with weights `(m + 1) / 2`.
    pub fn weighted_pool(&mut self, v: Var, m: Var) -> Result<Var> {
        let (c, h, w) = self.value(v).chw()?;
        check_shape(&[h, w], self.value(m).shape())?;
        let (proto, total) =
            kernels::weighted_pool(self.value(v).data(), c, self.value(m).data());
        Ok(self.push(Tensor::vector(proto), Op::WeightedPool { v, m, total }, &[v, m]))
    }

    /// Concatenation of vectors.
    pub fn concat_vectors(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 1 {
                return Err(GresError::InvalidInput(format!("concat_vectors got shape {:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), parts))
    }

    /// Channel-wise concatenation; `H×W` parts count as one channel.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(GresError::InvalidInput("concat of no parts".into()));
        };
        let (_, h, w) = self.value(first).chw()?;
        let mut data = Vec::new();
        let mut channels = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw()?;
            if (ph, pw) != (h, w) {
                return Err(GresError::shape(&[h, w], &[ph, pw]));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(&[channels, h, w], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    pub fn global_avg_pool(&mut self, v: Var) -> Result<Var> {
        let (c, h, w) = self.value(v).chw()?;
        let hw = h * w;
        let data = self.value(v).data();
        let out = (0..c)
            .map(|i| data[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push(Tensor::vector(out), Op::GlobalAvgPool(v), &[v]))
    }

    /// Per-channel spatial maximum; the gradient goes to the first maximizer.
    pub fn global_max_pool(&mut self, v: Var) -> Result<Var> {
        let (c, h, w) = self.value(v).chw()?;
        let hw = h * w;
        let data = self.value(v).data();
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for i in 0..c {
            let row = &data[i * hw..(i + 1) * hw];
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            argmax.push(i * hw + best);
        }
        Ok(self.push(Tensor::vector(out), Op::GlobalMaxPool { v, argmax }, &[v]))
    }

    /// Euclidean distance `‖a − b‖₂` as a scalar.
    pub fn distance(&mut self, a: Var, b: Var) -> Result<Var> {
        check_shape(self.value(a).shape(), self.value(b).shape())?;
        let d = kernels::euclidean(self.value(a).data(), self.value(b).data());
        Ok(self.push(Tensor::scalar(d), Op::Distance(a, b), &[a, b]))
    }

    /// `max(x, 0)` with subgradient 0 at the kink.
    pub fn hinge(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Hinge(a), &[a])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against a fixed target.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        check_shape(self.value(logits).shape(), target.shape())?;
        let n = target.len().max(1) as f64;
        let loss = self
            .value(logits)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| kernels::bce_with_logit(x, t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                target: target.data().to_vec(),
            },
            &[logits],
        ))
    }

    /// `Σ a ⊙ weights` against a fixed weight tensor, as a scalar.
    pub fn inner(&mut self, a: Var, weights: &Tensor) -> Result<Var> {
        if self.value(a).len() != weights.len() {
            return Err(GresError::shape(self.value(a).shape(), weights.shape()));
        }
        let s = kernels::dot(self.value(a).data(), weights.data());
        Ok(self.push(
            Tensor::scalar(s),
            Op::Inner {
                a,
                weights: weights.data().to_vec(),
            },
            &[a],
        ))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let seed = Tensor::full(self.value(root).shape(), 1.0);
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd, 1.0));
                self.accumulate(grads, *b, |d| add_into(d, gd, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd, 1.0));
                self.accumulate(grads, *b, |d| add_into(d, gd, -1.0));
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, |d| add_into(d, gd, *f)),
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    self.accumulate(grads, v, |d| add_into(d, gd, c));
                }
            }
            Op::Linear { x, w, b } => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
                self.accumulate(grads, *w, |d| {
                    kernels::gemm(rows, 1, cols, gd, false, xv.data(), false, d, true);
                });
                self.accumulate(grads, *x, |d| {
                    kernels::gemm(cols, rows, 1, wv.data(), true, gd, false, d, true);
                });
                self.accumulate(grads, *b, |d| add_into(d, gd, 1.0));
            }
            Op::EmbedMean { table, ids } => {
                let dim = gd.len();
                let inv = 1.0 / ids.len() as f64;
                self.accumulate(grads, *table, |d| {
                    for &id in ids {
                        add_into(&mut d[id * dim..(id + 1) * dim], gd, inv);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |d| {
                    for ((di, gi), yi) in d.iter_mut().zip(gd).zip(y) {
                        *di += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Relu(a) | Op::Hinge(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for ((di, gi), xi) in d.iter_mut().zip(gd).zip(x) {
                        if *xi > 0.0 {
                            *di += gi;
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let co = node.value.shape()[0];
                let hw = geom.col_cols();
                let kk = geom.col_rows();
                self.accumulate(grads, *w, |d| {
                    kernels::gemm(co, hw, kk, gd, false, cols, true, d, true);
                });
                self.accumulate(grads, *b, |d| {
                    for (c, di) in d.iter_mut().enumerate() {
                        *di += gd[c * hw..(c + 1) * hw].iter().sum::<f64>();
                    }
                });
                if self.needs_grad(*x) {
                    let mut dcols = vec![0.0; kk * hw];
                    kernels::gemm(kk, co, hw, self.value(*w).data(), true, gd, false, &mut dcols, false);
                    self.accumulate(grads, *x, |d| kernels::col2im(&dcols, geom, d));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let ci = self.value(*x).shape()[0];
                let hw_in = geom.col_cols();
                let kk = geom.col_rows();
                let plane = geom.height * geom.width;
                let dcols = kernels::im2col(gd, geom);
                self.accumulate(grads, *w, |d| {
                    kernels::gemm(ci, hw_in, kk, self.value(*x).data(), false, &dcols, true, d, true);
                });
                self.accumulate(grads, *b, |d| {
                    for (c, di) in d.iter_mut().enumerate() {
                        *di += gd[c * plane..(c + 1) * plane].iter().sum::<f64>();
                    }
                });
                self.accumulate(grads, *x, |d| {
                    kernels::gemm(ci, kk, hw_in, self.value(*w).data(), false, &dcols, false, d, true);
                });
            }
            Op::Cosine { v, q, norms, qnorm } => {
                let vv = self.value(*v).data();
                let qv = self.value(*q).data();
                let sims = node.value.data();
                let hw = sims.len();
                let valid = |j: usize| norms[j] > EPS && *qnorm > EPS;
                // dv[c,j] = a_j·q_c − b_j·v[c,j]
                let a: Vec<f64> = (0..hw)
                    .map(|j| if valid(j) { gd[j] / (norms[j] * qnorm) } else { 0.0 })
                    .collect();
                let bcoef: Vec<f64> = (0..hw)
                    .map(|j| if valid(j) { gd[j] * sims[j] / (norms[j] * norms[j]) } else { 0.0 })
                    .collect();
                self.accumulate(grads, *v, |d| {
                    for (c, &qc) in qv.iter().enumerate() {
                        let row = &vv[c * hw..(c + 1) * hw];
                        let drow = &mut d[c * hw..(c + 1) * hw];
                        for j in 0..hw {
                            drow[j] += a[j] * qc - bcoef[j] * row[j];
                        }
                    }
                });
                if *qnorm > EPS {
                    let gs: f64 = (0..hw).filter(|&j| valid(j)).map(|j| gd[j] * sims[j]).sum();
                    let q2 = qnorm * qnorm;
                    self.accumulate(grads, *q, |d| {
                        for (c, &qc) in qv.iter().enumerate() {
                            let row = &vv[c * hw..(c + 1) * hw];
                            d[c] += kernels::dot(&a, row) - qc * gs / q2;
                        }
                    });
                }
            }
            Op::WeightedPool { v, m, total } => {
                let vv = self.value(*v).data();
                let mv = self.value(*m).data();
                let proto = node.value.data();
                let hw = mv.len();
                let denom = total.max(EPS);
                self.accumulate(grads, *v, |d| {
                    for (c, &gc) in gd.iter().enumerate() {
                        let drow = &mut d[c * hw..(c + 1) * hw];
                        for (dj, &mj) in drow.iter_mut().zip(mv) {
                            *dj += gc * kernels::pooling_weight(mj) / denom;
                        }
                    }
                });
                let gp = if *total > EPS { kernels::dot(gd, proto) } else { 0.0 };
                self.accumulate(grads, *m, |d| {
                    let mut gv = vec![0.0; hw];
                    for (c, &gc) in gd.iter().enumerate() {
                        add_into(&mut gv, &vv[c * hw..(c + 1) * hw], gc);
                    }
                    for (dj, gvj) in d.iter_mut().zip(gv) {
                        *dj += 0.5 * (gvj - gp) / denom;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |d| add_into(d, &gd[offset..offset + n], 1.0));
                    offset += n;
                }
            }
            Op::GlobalAvgPool(v) => {
                let c = gd.len();
                let hw = self.value(*v).len() / c.max(1);
                self.accumulate(grads, *v, |d| {
                    for (ch, &gc) in gd.iter().enumerate() {
                        for dj in &mut d[ch * hw..(ch + 1) * hw] {
                            *dj += gc / hw as f64;
                        }
                    }
                });
            }
            Op::GlobalMaxPool { v, argmax } => {
                self.accumulate(grads, *v, |d| {
                    for (&j, &gc) in argmax.iter().zip(gd) {
                        d[j] += gc;
                    }
                });
            }
            Op::Distance(a, b) => {
                let dist = node.value.item();
                if dist <= 0.0 {
                    return;
                }
                let diff: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| (x - y) / dist)
                    .collect();
                let g0 = gd[0];
                self.accumulate(grads, *a, |d| add_into(d, &diff, g0));
                self.accumulate(grads, *b, |d| add_into(d, &diff, -g0));
            }
            Op::Inner { a, weights } => {
                let g0 = gd[0];
                self.accumulate(grads, *a, |d| add_into(d, weights, g0));
            }
            Op::BceLogits { logits, target } => {
                let x = self.value(*logits).data();
                let scale = gd[0] / target.len().max(1) as f64;
                self.accumulate(grads, *logits, |d| {
                    for ((di, &xi), &ti) in d.iter_mut().zip(x).zip(target) {
                        *di += scale * (kernels::sigmoid(xi) - ti);
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(self.value(var).shape()));
        f(slot.data_mut());
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}
