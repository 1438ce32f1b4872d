use std::collections::HashMap;

use rand::Rng;

use super::kernels::{self, conv_out_dim, ConvGeom, LrnParams};
use super::linalg::{gemm, Mat};
use super::params::{Gradients, ParamId, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Lrn(Var, LrnParams),
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Softmax(Var),
    CrossEntropy { p: Var, labels: Vec<usize> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Concat(Vec<Var>),
    Reshape(Var),
    SelectStep { x: Var, t: usize },
    WeightedSum { weights: Var, seq: Var },
    Mask { x: Var, mask: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in evaluation order and only ever reference earlier
/// nodes, so the node list is already a topological order and the graph
/// cannot contain cycles. [`Graph::backward`] walks it once in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits a shape into (rows, last axis).
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let rows = shape.iter().product::<usize>().checked_div(cols).unwrap_or(0);
    (rows, cols)
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
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// The stored parameter a leaf is bound to, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same node, so a parameter used in several places shares
    /// one gradient accumulator.
    pub fn param(&mut self, store: &Parameters, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("operands differ: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Affine map over the last axis: `x (.., D)`, `w (O, D)`, `b (O)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(x));
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != d {
            return Err(Error::shape("dense", format!("weight {:?} does not accept input width {d}", ws)));
        }
        let o = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape("dense", format!("bias {:?} does not match output width {o}", self.shape(b))));
            }
        }
        let mut out = vec![0.0; rows * o];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bias);
            }
        }
        gemm(Mat::new(self.value(x).data(), rows, d), Mat::new(self.value(w).data(), o, d).t(), 1.0, &mut out);
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = o;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Dense { x, w, b }, rg))
    }

    /// Cross-correlation of `x (N, C, H, W)` with `w (O, C, k, k)` plus bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv2d", format!("expected 4-D input and kernel, got {xs:?} and {ws:?}")));
        }
        if ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::shape("conv2d", format!("kernel {ws:?} incompatible with input channels {}", xs[1])));
        }
        if self.shape(b) != [ws[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} does not match {} output channels", self.shape(b), ws[0]),
            ));
        }
        let k = ws[2];
        let dims = conv_out_dim(xs[2], k, stride, pad).zip(conv_out_dim(xs[3], k, stride, pad));
        let Some((h_out, w_out)) = dims else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} with stride {stride} and pad {pad} does not fit a {}x{} input", xs[2], xs[3]),
            ));
        };
        let geom = ConvGeom { n: xs[0], c_in: xs[1], h: xs[2], w: xs[3], c_out: ws[0], k, stride, pad, h_out, w_out };
        let mut y = vec![0.0; geom.n * geom.c_out * h_out * w_out];
        kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data(), &mut y);
        let value = Tensor::new(vec![geom.n, geom.c_out, h_out, w_out], y)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Cross-channel local response normalization on `(N, C, H, W)`.
    pub fn lrn(&mut self, x: Var, p: LrnParams) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("lrn", format!("expected 4-D input, got {s:?}")));
        }
        if p.n.is_multiple_of(2) {
            return Err(Error::Config(format!("LRN window must be odd, got {}", p.n)));
        }
        let y = kernels::lrn_forward(self.value(x).data(), s[0], s[1], s[2] * s[3], &p);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(s, y)?, Op::Lrn(x, p), rg))
    }

    pub fn max_pool(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("max_pool", format!("expected 4-D input, got {s:?}")));
        }
        let dims = conv_out_dim(s[2], window, stride, 0).zip(conv_out_dim(s[3], window, stride, 0));
        let Some((ho, wo)) = dims else {
            return Err(Error::shape(
                "max_pool",
                format!("window {window} stride {stride} does not fit {}x{}", s[2], s[3]),
            ));
        };
        let (y, argmax) =
            kernels::max_pool_forward(self.value(x).data(), s[0] * s[1], s[2], s[3], window, stride, ho, wo);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![s[0], s[1], ho, wo], y)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Per-channel spatial mean: `(N, C, H, W) -> (N, C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::shape("global_avg_pool", format!("expected non-empty 4-D input, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let y = self.value(x).data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![s[0], s[1]], y)?, Op::GlobalAvgPool(x), rg))
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (_, c) = rows_cols(t.shape());
        let data = softmax_rows(t.data(), c);
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    fn check_labels(&self, op: &'static str, x: Var, labels: &[usize]) -> Result<(usize, usize)> {
        let (rows, c) = rows_cols(self.shape(x));
        if labels.len() != rows {
            return Err(Error::shape(op, format!("{} labels for {rows} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        if rows == 0 {
            return Err(Error::shape(op, "empty batch"));
        }
        Ok((rows, c))
    }

    /// Mean over rows of `-ln p[label]` for probabilities `p (N, C)`.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let (rows, c) = self.check_labels("cross_entropy", p, labels)?;
        let pd = self.value(p).data();
        let loss = -labels.iter().enumerate().map(|(i, &l)| pd[i * c + l].ln()).sum::<f64>() / rows as f64;
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { p, labels: labels.to_vec() }, rg))
    }

    /// Fused softmax + cross-entropy on logits `(N, C)`, mean over rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, c) = self.check_labels("softmax_cross_entropy", logits, labels)?;
        let z = self.value(logits).data();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= rows as f64;
        let probs = softmax_rows(z, c);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no operands"))?;
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || &s[..lead.len()] != lead {
                return Err(Error::shape("concat", format!("operand {s:?} does not share leading dims {lead:?}")));
            }
        }
        let lead = lead.to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {shape:?}", self.shape(x))));
        }
        let value = self.value(x).clone().reshaped(shape.to_vec());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Picks step `t` of a `(N, T, D)` sequence, giving `(N, D)`.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(Error::shape("select_step", format!("step {t} of {s:?}")));
        }
        let (n, steps, d) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend_from_slice(&src[(i * steps + t) * d..(i * steps + t + 1) * d]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::SelectStep { x, t }, rg))
    }

    /// `out[n] = sum_t weights[n, t] * seq[n, t, :]`.
    pub fn weighted_sum(&mut self, weights: Var, seq: Var) -> Result<Var> {
        let ws = self.shape(weights).to_vec();
        let ss = self.shape(seq).to_vec();
        if ws.len() != 2 || ss.len() != 3 || ws[0] != ss[0] || ws[1] != ss[1] {
            return Err(Error::shape("weighted_sum", format!("weights {ws:?} vs sequence {ss:?}")));
        }
        let (n, t, h) = (ss[0], ss[1], ss[2]);
        let wd = self.value(weights).data();
        let sd = self.value(seq).data();
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            for s in 0..t {
                let a = wd[i * t + s];
                let row = &sd[(i * t + s) * h..(i * t + s + 1) * h];
                out[i * h..(i + 1) * h].iter_mut().zip(row).for_each(|(o, v)| *o += a * v);
            }
        }
        let rg = self.rg(weights) || self.rg(seq);
        Ok(self.push(Tensor::new(vec![n, h], out)?, Op::WeightedSum { weights, seq }, rg))
    }

    /// Inverted dropout: at training time zeroes each element with
    /// probability `rate` and scales survivors by `1 / (1 - rate)`.
    /// Returns `x` unchanged when not training or when `rate` is 0.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> =
            (0..self.value(x).len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mask { x, mask }, rg))
    }

    /// Back-propagates from the scalar `root`, filling gradients for every
    /// node that requires one. A second call needs [`Graph::reset_grads`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Usage("backward already ran on this graph; call reset_grads first".into()));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!("backward root must be a scalar, got shape {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            self.backprop_node(i, g, lower);
        }
        self.grads = Some(grads);
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    /// Adds this graph's parameter gradients into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Gradients) -> Result<()> {
        let grads = self.grads.as_ref().ok_or_else(|| Error::Usage("no gradients: backward has not run".into()))?;
        for (&id, &v) in &self.params {
            if let Some(g) = &grads[v.0] {
                out.add_to(id, g);
            }
        }
        Ok(())
    }

    /// Lazily-allocated gradient accumulator for `v`, if it needs one.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).zip(bv).for_each(|((d, g), b)| *d += g * b);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(g).zip(av).for_each(|((d, g), a)| *d += g * a);
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Dense { x, w, b } => {
                let (rows, dim) = rows_cols(self.shape(*x));
                let o = self.shape(*w)[0];
                let gm = Mat::new(g, rows, o);
                if let Some(d) = self.slot(grads, *x) {
                    gemm(gm, Mat::new(self.value(*w).data(), o, dim), 1.0, d);
                }
                if let Some(d) = self.slot(grads, *w) {
                    gemm(gm.t(), Mat::new(self.value(*x).data(), rows, dim), 1.0, d);
                }
                if let Some(d) = b.and_then(|b| self.slot(grads, b)) {
                    for row in g.chunks(o) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                // Take the accumulators out so three parents can be borrowed at once.
                let mut dx = self.slot(grads, *x).map(std::mem::take);
                let mut dw = self.slot(grads, *w).map(std::mem::take);
                let mut db = self.slot(grads, *b).map(std::mem::take);
                kernels::conv2d_backward(geom, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                for (v, acc) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(acc) = acc {
                        grads[v.0] = Some(acc);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), &v) in d.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), &v) in d.iter_mut().zip(g).zip(xv) {
                        *d += if v > 0.0 { *g } else { slope * g };
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), s) in d.iter_mut().zip(g).zip(y) {
                        *d += g * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), t) in d.iter_mut().zip(g).zip(y) {
                        *d += g * (1.0 - t * t);
                    }
                }
            }
            Op::Lrn(x, p) => {
                let s = self.shape(*x).to_vec();
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    kernels::lrn_backward(xv, g, s[0], s[1], s[2] * s[3], p, d);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(d) = self.slot(grads, *x) {
                    for (g, &src) in g.iter().zip(argmax) {
                        d[src] += g;
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                if let Some(d) = self.slot(grads, *x) {
                    for (plane, g) in d.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|d| *d += g / hw as f64);
                    }
                }
            }
            Op::Softmax(x) => {
                let c = node.value.last_dim();
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), p) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = g.iter().zip(p).map(|(g, p)| g * p).sum();
                        for j in 0..c {
                            d[j] += p[j] * (g[j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { p, labels } => {
                let c = self.value(*p).last_dim();
                let pv = self.value(*p).data();
                let n = labels.len() as f64;
                if let Some(d) = self.slot(grads, *p) {
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * c + l] -= g[0] / (n * pv[i * c + l]);
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).last_dim();
                let n = labels.len() as f64;
                if let Some(d) = self.slot(grads, *logits) {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == l { 1.0 } else { 0.0 };
                            d[i * c + j] += g[0] * (probs[i * c + j] - target) / n;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = y.len().checked_div(total).unwrap_or(0);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if let Some(d) = self.slot(grads, p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            d[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::SelectStep { x, t } => {
                let s = self.shape(*x).to_vec();
                let (n, steps, dim) = (s[0], s[1], s[2]);
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..n {
                        let dst = &mut d[(i * steps + t) * dim..(i * steps + t + 1) * dim];
                        dst.iter_mut().zip(&g[i * dim..(i + 1) * dim]).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::WeightedSum { weights, seq } => {
                let s = self.shape(*seq).to_vec();
                let (n, t, h) = (s[0], s[1], s[2]);
                let wv = self.value(*weights).data();
                let sv = self.value(*seq).data();
                if let Some(d) = self.slot(grads, *weights) {
                    for i in 0..n {
                        for k in 0..t {
                            let row = &sv[(i * t + k) * h..(i * t + k + 1) * h];
                            d[i * t + k] += row.iter().zip(&g[i * h..(i + 1) * h]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *seq) {
                    for i in 0..n {
                        for k in 0..t {
                            let a = wv[i * t + k];
                            let dst = &mut d[(i * t + k) * h..(i * t + k + 1) * h];
                            dst.iter_mut().zip(&g[i * h..(i + 1) * h]).for_each(|(d, g)| *d += a * g);
                        }
                    }
                }
            }
            Op::Mask { x, mask } => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                }
            }
        }
    }
}

fn softmax_rows(z: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - m).exp()));
        let s: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= s);
    }
    out
}
