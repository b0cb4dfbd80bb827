//! Reverse-mode gradient tape.
//!
//! Forward operations append nodes to the [`Tape`] and return [`Var`]
//! handles; [`Tape::backward`] replays the record in reverse and produces a
//! gradient for every node reached from the loss. Parameters that do not
//! participate in the loss get an exactly-zero gradient (via
//! [`Gradients::dense`]). Tensors are immutable once written by an
//! operation; independent tapes may run on different threads.

use super::conv::{conv2d_backward, conv2d_forward, conv_dims, ConvLayerSpec};
use super::ops::{log_softmax_into, sigmoid, softmax_masked_into};
use super::{NumericsError, Tensor};

/// Handle to a tape node. Cheap to copy; only valid for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    /// Elementwise a + b.
    Add(Var, Var),
    /// Elementwise a * b.
    Mul(Var, Var),
    /// k * a for a constant k.
    ScaleConst(Var, f64),
    /// s * v where s is a scalar node.
    Scale { scalar: Var, vector: Var },
    /// Inner product of two equal-length vectors.
    Dot(Var, Var),
    /// Matrix [m, n] times vector [n].
    MatVec { matrix: Var, vector: Var },
    Sigmoid(Var),
    Tanh(Var),
    /// Softmax over a vector; positions with `valid[i] == false` get zero
    /// probability and receive no gradient.
    SoftmaxMasked { input: Var, valid: Vec<bool> },
    Slice { input: Var, start: usize },
    Concat(Vec<Var>),
    /// Row `r` of a rank-2 tensor, as a vector.
    Row { input: Var, row: usize },
    /// sum_t w[t] * items[t] for vectors items[t].
    WeightedSum { weights: Var, items: Vec<Var> },
    /// Sum of scalar nodes.
    SumScalars(Vec<Var>),
    /// Elementwise max over equal-length vectors (first max wins ties).
    MaxRows(Vec<Var>),
    Conv2d { input: Var, kernel: Var, bias: Var, spec: ConvLayerSpec, f_in: usize },
    /// -log softmax(logits)[target].
    NllSoftmax { logits: Var, target: usize },
    /// Binary cross-entropy of sigmoid(logit) against `label`, computed
    /// from the logit for stability.
    BceLogits { logit: Var, label: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed to it.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Dense gradient: exactly zero for nodes the loss never touched.
    pub fn dense(&self, v: Var, len: usize) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; len],
        }
    }
}

macro_rules! shape_err {
    ($op:expr, $($arg:tt)*) => {
        Err(NumericsError::ShapeMismatch { op: $op, detail: format!($($arg)*) })
    };
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err!("add", "{:?} vs {:?}", ta.shape(), tb.shape());
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err!("mul", "{:?} vs {:?}", ta.shape(), tb.shape());
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b)))
    }

    pub fn scale_const(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| k * x).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), Op::ScaleConst(a, k))
    }

    pub fn scale(&mut self, scalar: Var, vector: Var) -> Result<Var, NumericsError> {
        let s = self.value(scalar);
        if s.len() != 1 {
            return shape_err!("scale", "scalar operand has shape {:?}", s.shape());
        }
        let sv = s.data()[0];
        let tv = self.value(vector);
        let data = tv.data().iter().map(|x| sv * x).collect();
        let shape = tv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale { scalar, vector }))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return shape_err!("dot", "{} vs {} elements", ta.len(), tb.len());
        }
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b)))
    }

    pub fn matvec(&mut self, matrix: Var, vector: Var) -> Result<Var, NumericsError> {
        let (m, x) = (self.value(matrix), self.value(vector));
        if m.rank() != 2 || m.cols() != x.len() {
            return shape_err!("matvec", "matrix {:?} times vector [{}]", m.shape(), x.len());
        }
        let rows = m.rows();
        let cols = m.cols();
        let mut out = vec![0.0; rows];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let row = &m.data()[i * cols..(i + 1) * cols];
            for (w, v) in row.iter().zip(x.data()) {
                acc += w * v;
            }
            *o = acc;
        }
        Ok(self.push(Tensor::vector(out), Op::MatVec { matrix, vector }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let valid = vec![true; self.value(a).len()];
        self.softmax_masked(a, &valid)
    }

    pub fn softmax_masked(&mut self, a: Var, valid: &[bool]) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if ta.len() != valid.len() {
            return shape_err!("softmax", "{} energies, {} validity flags", ta.len(), valid.len());
        }
        if ta.is_empty() {
            return Err(NumericsError::EmptyInput("softmax"));
        }
        if !valid.iter().any(|&v| v) {
            return Err(NumericsError::AllMasked("softmax"));
        }
        let mut out = vec![0.0; ta.len()];
        softmax_masked_into(ta.data(), valid, &mut out);
        Ok(self.push(
            Tensor::vector(out),
            Op::SoftmaxMasked { input: a, valid: valid.to_vec() },
        ))
    }

    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(input);
        if start + len > t.len() {
            return shape_err!("slice", "[{start}, {}) of {} elements", start + len, t.len());
        }
        let data = t.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice { input, start }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    pub fn row(&mut self, input: Var, row: usize) -> Result<Var, NumericsError> {
        let t = self.value(input);
        if t.rank() != 2 || row >= t.rows() {
            return shape_err!("row", "row {row} of {:?}", t.shape());
        }
        let cols = t.cols();
        let data = t.data()[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row { input, row }))
    }

    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var, NumericsError> {
        let w = self.value(weights);
        if w.len() != items.len() {
            return shape_err!("weighted_sum", "{} weights for {} items", w.len(), items.len());
        }
        if items.is_empty() {
            return Err(NumericsError::EmptyInput("weighted_sum"));
        }
        let dim = self.value(items[0]).len();
        let mut out = vec![0.0; dim];
        for (t, &item) in items.iter().enumerate() {
            let v = self.value(item);
            if v.len() != dim {
                return shape_err!("weighted_sum", "item {t} has {} elements, want {dim}", v.len());
            }
            let wt = self.value(weights).data()[t];
            for (o, x) in out.iter_mut().zip(v.data()) {
                *o += wt * x;
            }
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::WeightedSum { weights, items: items.to_vec() },
        ))
    }

    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Var, NumericsError> {
        if terms.is_empty() {
            return Err(NumericsError::EmptyInput("sum_scalars"));
        }
        let mut acc = 0.0;
        for &t in terms {
            let v = self.value(t);
            if v.len() != 1 {
                return shape_err!("sum_scalars", "term has shape {:?}", v.shape());
            }
            acc += v.data()[0];
        }
        Ok(self.push(Tensor::scalar(acc), Op::SumScalars(terms.to_vec())))
    }

    pub fn max_rows(&mut self, items: &[Var]) -> Result<Var, NumericsError> {
        if items.is_empty() {
            return Err(NumericsError::EmptyInput("max_rows"));
        }
        let dim = self.value(items[0]).len();
        let mut out = self.value(items[0]).data().to_vec();
        for &item in &items[1..] {
            let v = self.value(item);
            if v.len() != dim {
                return shape_err!("max_rows", "item has {} elements, want {dim}", v.len());
            }
            for (o, &x) in out.iter_mut().zip(v.data()) {
                if x > *o {
                    *o = x;
                }
            }
        }
        Ok(self.push(Tensor::vector(out), Op::MaxRows(items.to_vec())))
    }

    /// Convolution over a `[T, F*C]` map laid out `[t][f][c]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        spec: &ConvLayerSpec,
        f_in: usize,
    ) -> Result<Var, NumericsError> {
        let t = self.value(input);
        if t.rank() != 2 || t.cols() != f_in * spec.in_channels {
            return shape_err!(
                "conv2d",
                "input {:?}, expected [_, {}]",
                t.shape(),
                f_in * spec.in_channels
            );
        }
        if self.value(kernel).shape() != spec.kernel_shape().as_slice()
            || self.value(bias).shape() != spec.bias_shape().as_slice()
        {
            return shape_err!(
                "conv2d",
                "kernel {:?} / bias {:?} do not fit spec {:?}",
                self.value(kernel).shape(),
                self.value(bias).shape(),
                spec
            );
        }
        let t = self.value(input);
        let t_in = t.rows();
        let dims = conv_dims(t_in, f_in, spec);
        let kernel_vals = self.value(kernel).data();
        let bias_vals = self.value(bias).data();
        let out = conv2d_forward(t.data(), t_in, f_in, spec, kernel_vals, bias_vals);
        let tensor = Tensor::matrix(dims.t_out, dims.f_out * spec.out_channels, out)?;
        Ok(self.push(tensor, Op::Conv2d { input, kernel, bias, spec: *spec, f_in }))
    }

    pub fn nll_softmax(&mut self, logits: Var, target: usize) -> Result<Var, NumericsError> {
        let l = self.value(logits);
        if target >= l.len() {
            return shape_err!("nll_softmax", "target {target} out of {} classes", l.len());
        }
        let mut lsm = vec![0.0; l.len()];
        log_softmax_into(l.data(), &mut lsm);
        Ok(self.push(Tensor::scalar(-lsm[target]), Op::NllSoftmax { logits, target }))
    }

    pub fn bce_logits(&mut self, logit: Var, label: f64) -> Result<Var, NumericsError> {
        let z = self.value(logit);
        if z.len() != 1 {
            return shape_err!("bce_logits", "logit has shape {:?}", z.shape());
        }
        let z = z.data()[0];
        // max(z,0) - z*y + ln(1 + exp(-|z|))
        let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits { logit, label }))
    }

    /// Replays the tape in reverse from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let loss_val = self.value(loss);
        if loss_val.len() != 1 {
            return Err(NumericsError::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &self.nodes[i].op {
            Op::Constant | Op::Param => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.len(), &mut |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                acc(grads, *b, g.len(), &mut |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(grads, *a, va.len(), &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * vb[k];
                    }
                });
                acc(grads, *b, vb.len(), &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * va[k];
                    }
                });
            }
            Op::ScaleConst(a, k) => {
                let k = *k;
                acc(grads, *a, g.len(), &mut |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += k * y;
                    }
                });
            }
            Op::Scale { scalar, vector } => {
                let s = self.value(*scalar).data()[0];
                let v = self.value(*vector).data();
                acc(grads, *scalar, 1, &mut |d| {
                    let mut total = 0.0;
                    for (gk, vk) in g.iter().zip(v) {
                        total += gk * vk;
                    }
                    d[0] += total;
                });
                acc(grads, *vector, v.len(), &mut |d| {
                    for k in 0..d.len() {
                        d[k] += s * g[k];
                    }
                });
            }
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let g0 = g[0];
                acc(grads, *a, va.len(), &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g0 * vb[k];
                    }
                });
                acc(grads, *b, vb.len(), &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g0 * va[k];
                    }
                });
            }
            Op::MatVec { matrix, vector } => {
                let m = self.value(*matrix);
                let x = self.value(*vector).data();
                let (rows, cols) = (m.rows(), m.cols());
                acc(grads, *matrix, rows * cols, &mut |d| {
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            d[r * cols + c] += gr * x[c];
                        }
                    }
                });
                let mdata = m.data();
                acc(grads, *vector, cols, &mut |d| {
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            d[c] += gr * mdata[r * cols + c];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.value(Var(i)).data();
                acc(grads, *a, y.len(), &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.value(Var(i)).data();
                acc(grads, *a, y.len(), &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::SoftmaxMasked { input, valid } => {
                let y = self.value(Var(i)).data();
                let mut dot = 0.0;
                for k in 0..y.len() {
                    dot += g[k] * y[k];
                }
                acc(grads, *input, y.len(), &mut |d| {
                    for k in 0..d.len() {
                        if valid[k] {
                            d[k] += y[k] * (g[k] - dot);
                        }
                    }
                });
            }
            Op::Slice { input, start } => {
                let len = self.value(*input).len();
                let start = *start;
                acc(grads, *input, len, &mut |d| {
                    for (k, gk) in g.iter().enumerate() {
                        d[start + k] += gk;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let seg = &g[offset..offset + len];
                    acc(grads, p, len, &mut |d| {
                        for (x, y) in d.iter_mut().zip(seg) {
                            *x += y;
                        }
                    });
                    offset += len;
                }
            }
            Op::Row { input, row } => {
                let t = self.value(*input);
                let (len, cols, row) = (t.len(), t.cols(), *row);
                acc(grads, *input, len, &mut |d| {
                    for (k, gk) in g.iter().enumerate() {
                        d[row * cols + k] += gk;
                    }
                });
            }
            Op::WeightedSum { weights, items } => {
                let w = self.value(*weights).data().to_vec();
                for (t, &item) in items.iter().enumerate() {
                    let v = self.value(item).data();
                    acc(grads, item, v.len(), &mut |d| {
                        for k in 0..d.len() {
                            d[k] += w[t] * g[k];
                        }
                    });
                }
                acc(grads, *weights, w.len(), &mut |d| {
                    for (t, &item) in items.iter().enumerate() {
                        let v = self.value(item).data();
                        let mut s = 0.0;
                        for k in 0..v.len() {
                            s += g[k] * v[k];
                        }
                        d[t] += s;
                    }
                });
            }
            Op::SumScalars(terms) => {
                for &t in terms {
                    acc(grads, t, 1, &mut |d| d[0] += g[0]);
                }
            }
            Op::MaxRows(items) => {
                let dim = self.value(items[0]).len();
                // First max wins, matching the forward pass.
                for k in 0..dim {
                    let mut best = 0usize;
                    let mut best_val = self.value(items[0]).data()[k];
                    for (t, &item) in items.iter().enumerate().skip(1) {
                        let v = self.value(item).data()[k];
                        if v > best_val {
                            best_val = v;
                            best = t;
                        }
                    }
                    acc(grads, items[best], dim, &mut |d| d[k] += g[k]);
                }
            }
            Op::Conv2d { input, kernel, bias, spec, f_in } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let y = self.value(Var(i));
                let t_in = x.rows();
                let mut gi = vec![0.0; x.len()];
                let mut gk = vec![0.0; k.len()];
                let mut gb = vec![0.0; self.value(*bias).len()];
                conv2d_backward(
                    x.data(),
                    t_in,
                    *f_in,
                    spec,
                    k.data(),
                    y.data(),
                    g,
                    &mut gi,
                    &mut gk,
                    &mut gb,
                );
                acc(grads, *input, gi.len(), &mut |d| {
                    for (a, b) in d.iter_mut().zip(&gi) {
                        *a += b;
                    }
                });
                acc(grads, *kernel, gk.len(), &mut |d| {
                    for (a, b) in d.iter_mut().zip(&gk) {
                        *a += b;
                    }
                });
                acc(grads, *bias, gb.len(), &mut |d| {
                    for (a, b) in d.iter_mut().zip(&gb) {
                        *a += b;
                    }
                });
            }
            Op::NllSoftmax { logits, target } => {
                let l = self.value(*logits).data();
                let mut p = vec![0.0; l.len()];
                let valid = vec![true; l.len()];
                softmax_masked_into(l, &valid, &mut p);
                let g0 = g[0];
                let target = *target;
                acc(grads, *logits, l.len(), &mut |d| {
                    for k in 0..d.len() {
                        let indicator = if k == target { 1.0 } else { 0.0 };
                        d[k] += g0 * (p[k] - indicator);
                    }
                });
            }
            Op::BceLogits { logit, label } => {
                let z = self.value(*logit).data()[0];
                let g0 = g[0] * (sigmoid(z) - label);
                acc(grads, *logit, 1, &mut |d| d[0] += g0);
            }
        }
    }
}
