//! Define-by-run reverse-mode differentiation over a flat tape.
//!
//! A [`Tape`] is rebuilt for every training update: ops append nodes in
//! topological order and cache their forward values, `backward` walks the
//! tape once in reverse. Gradients accumulate additively, so shared
//! subexpressions (a parameter used by several heads, `x + x`) come out
//! right by construction.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Sum(Var),
    Mean(Var),
    Index(Var, usize),
    Slice { x: Var, start: usize },
    Concat(Vec<Var>),
    Reshape(Var),
    Matvec { m: Var, x: Var },
    Conv2d { x: Var, k: Var, dims: ConvDims },
    Deconv2d { x: Var, k: Var, dims: ConvDims },
    MeanFirstDim(Var),
    BroadcastFirstDim(Var),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    /// When set, every op output is scanned for NaN/Inf and reported as an
    /// error instead of propagating silently.
    pub check_finite: bool,
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), check_finite: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !matches!(op, Op::Leaf | Op::Constant) {
            if !value.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: op_name(&op) });
            }
        }
        self.nodes.push(Node { op, shape, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf holding a parameter's current values.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), true)
            .expect("leaf never fails")
    }

    /// Non-differentiable input (observations, targets, coefficients).
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("constant", expected, data.len()));
        }
        self.push(Op::Constant, shape.to_vec(), data, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(&[1], vec![v]).expect("scalar constant")
    }

    fn unary_map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(x);
        self.push(op, shape, value, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary_map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary_map(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary_map(x, f64::tanh, Op::Tanh(x))
    }

    fn softmax_vec(z: &[f64]) -> Vec<f64> {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect()
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = Self::softmax_vec(&self.nodes[x.0].value);
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(x);
        self.push(Op::Softmax(x), shape, value, rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let z = &self.nodes[x.0].value;
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        let value: Vec<f64> = z.iter().map(|&v| v - lse).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(x);
        self.push(Op::LogSoftmax(x), shape, value, rg)
    }

    fn binary_zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(name, &self.nodes[a.0].shape, &self.nodes[b.0].shape));
        }
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        self.push(op, shape, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary_map(x, |v| c * v, Op::Scale(x, c))
    }

    /// x has shape [C, ...spatial], bias has shape [C]; adds bias[c] to every
    /// element of channel c.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let c = xs[0];
        if self.nodes[b.0].shape != [c] {
            return Err(Error::shape("add_bias", &[c], &self.nodes[b.0].shape));
        }
        let plane = self.nodes[x.0].value.len() / c;
        let mut value = self.nodes[x.0].value.clone();
        for (ch, chunk) in value.chunks_exact_mut(plane).enumerate() {
            let bv = self.nodes[b.0].value[ch];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(Op::AddBias(x, b), xs, value, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), vec![1], vec![s], rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].value.len() as f64;
        let s: f64 = self.nodes[x.0].value.iter().sum::<f64>() / n;
        let rg = self.rg(x);
        self.push(Op::Mean(x), vec![1], vec![s], rg)
    }

    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        if i >= self.nodes[x.0].value.len() {
            return Err(Error::shape("index", self.nodes[x.0].value.len(), i));
        }
        let v = self.nodes[x.0].value[i];
        let rg = self.rg(x);
        self.push(Op::Index(x, i), vec![1], vec![v], rg)
    }

    /// Contiguous sub-range of the flat data, reinterpreted as `out_shape`.
    pub fn slice(&mut self, x: Var, start: usize, out_shape: &[usize]) -> Result<Var> {
        let len: usize = out_shape.iter().product();
        if start + len > self.nodes[x.0].value.len() {
            return Err(Error::shape("slice", self.nodes[x.0].value.len(), start + len));
        }
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        let rg = self.rg(x);
        self.push(Op::Slice { x, start }, out_shape.to_vec(), value, rg)
    }

    /// Concatenates flat data of all inputs into one vector.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let mut value = Vec::new();
        let mut rg = false;
        for &v in xs {
            value.extend_from_slice(&self.nodes[v.0].value);
            rg |= self.rg(v);
        }
        let n = value.len();
        self.push(Op::Concat(xs.to_vec()), vec![n], value, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let expected: usize = shape.iter().product();
        if expected != self.nodes[x.0].value.len() {
            return Err(Error::shape("reshape", expected, self.nodes[x.0].value.len()));
        }
        let value = self.nodes[x.0].value.clone();
        let rg = self.rg(x);
        self.push(Op::Reshape(x), shape.to_vec(), value, rg)
    }

    /// m: [rows, cols], x: [cols] -> [rows].
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let ms = self.nodes[m.0].shape.clone();
        if ms.len() != 2 {
            return Err(Error::shape("matvec", "rank-2 matrix", &ms));
        }
        let (rows, cols) = (ms[0], ms[1]);
        if self.nodes[x.0].value.len() != cols {
            return Err(Error::shape("matvec", cols, self.nodes[x.0].value.len()));
        }
        let mut y = vec![0.0; rows];
        kernels::matvec(&self.nodes[m.0].value, &self.nodes[x.0].value, rows, cols, &mut y);
        let rg = self.rg(m) || self.rg(x);
        self.push(Op::Matvec { m, x }, vec![rows], y, rg)
    }

    /// x: [C,H,W], k: [F,C,kH,kW], valid convolution with given stride.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let dims = self.conv_dims(x, k, stride, "conv2d")?;
        if dims.in_h < dims.k || dims.in_w < dims.k {
            return Err(Error::shape("conv2d", "input >= kernel", &self.nodes[x.0].shape));
        }
        let (oh, ow) = (dims.out_h(), dims.out_w());
        let mut y = vec![0.0; dims.filters * oh * ow];
        kernels::conv_fwd(&self.nodes[x.0].value, &self.nodes[k.0].value, dims, &mut y);
        let rg = self.rg(x) || self.rg(k);
        self.push(Op::Conv2d { x, k, dims }, vec![dims.filters, oh, ow], y, rg)
    }

    /// Transposed convolution, the exact adjoint of `conv2d` with the same
    /// kernel: x: [F,h,w], k: [F,C,kH,kW] -> [C,(h-1)*stride+kH,(w-1)*stride+kW].
    pub fn deconv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let ks = self.nodes[k.0].shape.clone();
        if xs.len() != 3 || ks.len() != 4 || ks[2] != ks[3] {
            return Err(Error::shape("deconv2d", "[F,h,w] x [F,C,k,k]", (&xs, &ks)));
        }
        if xs[0] != ks[0] {
            return Err(Error::shape("deconv2d channels", ks[0], xs[0]));
        }
        if stride < 1 || ks[2] < stride {
            return Err(Error::shape("deconv2d stride", "1 <= stride <= k", stride));
        }
        let out_h = (xs[1] - 1) * stride + ks[2];
        let out_w = (xs[2] - 1) * stride + ks[3];
        // dims describe the *adjoint* convolution (whose input is our output)
        let dims = ConvDims { in_c: ks[1], in_h: out_h, in_w: out_w, filters: ks[0], k: ks[2], stride };
        let mut y = vec![0.0; ks[1] * out_h * out_w];
        kernels::conv_bwd_input(&self.nodes[x.0].value, &self.nodes[k.0].value, dims, &mut y);
        let rg = self.rg(x) || self.rg(k);
        self.push(Op::Deconv2d { x, k, dims }, vec![ks[1], out_h, out_w], y, rg)
    }

    fn conv_dims(&self, x: Var, k: Var, stride: usize, op: &'static str) -> Result<ConvDims> {
        let xs = &self.nodes[x.0].shape;
        let ks = &self.nodes[k.0].shape;
        if xs.len() != 3 || ks.len() != 4 || ks[2] != ks[3] {
            return Err(Error::shape(op, "[C,H,W] x [F,C,k,k]", (xs, ks)));
        }
        if xs[0] != ks[1] {
            return Err(Error::shape(op, ks[1], xs[0]));
        }
        if stride < 1 {
            return Err(Error::shape(op, "stride >= 1", stride));
        }
        Ok(ConvDims { in_c: xs[0], in_h: xs[1], in_w: xs[2], filters: ks[0], k: ks[2], stride })
    }

    /// x: [C, ...rest] -> mean over the first dimension, shape [...rest].
    pub fn mean_first_dim(&mut self, x: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        if xs.len() < 2 {
            return Err(Error::shape("mean_first_dim", "rank >= 2", &xs));
        }
        let c = xs[0];
        let plane = self.nodes[x.0].value.len() / c;
        let mut value = vec![0.0; plane];
        for chunk in self.nodes[x.0].value.chunks_exact(plane) {
            for (v, &e) in value.iter_mut().zip(chunk) {
                *v += e;
            }
        }
        value.iter_mut().for_each(|v| *v /= c as f64);
        let rg = self.rg(x);
        self.push(Op::MeanFirstDim(x), xs[1..].to_vec(), value, rg)
    }

    /// x: [...rest] -> [n, ...rest], each slab a copy of x.
    pub fn broadcast_first_dim(&mut self, x: Var, n: usize) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let mut value = Vec::with_capacity(n * self.nodes[x.0].value.len());
        for _ in 0..n {
            value.extend_from_slice(&self.nodes[x.0].value);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&xs);
        let rg = self.rg(x);
        self.push(Op::BroadcastFirstDim(x), shape, value, rg)
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients;
    /// leaves are looked up by the caller via their `Var` handles.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward { node: loss.0 });
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward", "scalar loss", &self.nodes[loss.0].shape));
        }
        self.backward_seeded(loss, vec![1.0])
    }

    /// Reverse pass with an explicit output gradient (shape must match).
    pub fn backward_seeded(&self, output: Var, output_grad: Vec<f64>) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward { node: output.0 });
        }
        if output_grad.len() != self.nodes[output.0].value.len() {
            return Err(Error::shape("backward_seeded", self.nodes[output.0].value.len(), output_grad.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(output_grad);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                self.acc(grads, *x, |gx| {
                    for ((gxi, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *gxi += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = &node.value;
                self.acc(grads, *x, |gx| {
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(yv) {
                        *gxi += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Tanh(x) => {
                let yv = &node.value;
                self.acc(grads, *x, |gx| {
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(yv) {
                        *gxi += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Softmax(x) => {
                let p = &node.value;
                let dot: f64 = p.iter().zip(g).map(|(&pi, &gi)| pi * gi).sum();
                self.acc(grads, *x, |gx| {
                    for ((gxi, &gi), &pi) in gx.iter_mut().zip(g).zip(p) {
                        *gxi += pi * (gi - dot);
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let gsum: f64 = g.iter().sum();
                self.acc(grads, *x, |gx| {
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *gxi += gi - yi.exp() * gsum;
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                self.acc(grads, *a, |ga| {
                    for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.acc(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(v, &gi)| *v += c * gi));
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(v, &gi)| *v += gi));
                let c = self.nodes[b.0].value.len();
                let plane = node.value.len() / c;
                self.acc(grads, *b, |gb| {
                    for (ch, chunk) in g.chunks_exact(plane).enumerate() {
                        gb[ch] += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Sum(x) => {
                let gi = g[0];
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|v| *v += gi));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                let gi = g[0] / n;
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|v| *v += gi));
            }
            Op::Index(x, idx) => {
                let idx = *idx;
                let gi = g[0];
                self.acc(grads, *x, |gx| gx[idx] += gi);
            }
            Op::Slice { x, start } => {
                let start = *start;
                self.acc(grads, *x, |gx| {
                    for (v, &gi) in gx[start..start + g.len()].iter_mut().zip(g) {
                        *v += gi;
                    }
                });
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let len = self.nodes[v.0].value.len();
                    let gslice = &g[offset..offset + len];
                    self.acc(grads, v, |gv| {
                        for (x, &gi) in gv.iter_mut().zip(gslice) {
                            *x += gi;
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(x) => {
                self.acc(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(v, &gi)| *v += gi));
            }
            Op::Matvec { m, x } => {
                let rows = self.nodes[m.0].shape[0];
                let cols = self.nodes[m.0].shape[1];
                let mv = &self.nodes[m.0].value;
                let xv = &self.nodes[x.0].value;
                self.acc(grads, *x, |gx| kernels::matvec_bwd_x(mv, g, rows, cols, gx));
                self.acc(grads, *m, |gm| kernels::matvec_bwd_m(g, xv, rows, cols, gm));
            }
            Op::Conv2d { x, k, dims } => {
                let dims = *dims;
                let xv = &self.nodes[x.0].value;
                let kv = &self.nodes[k.0].value;
                self.acc(grads, *x, |gx| kernels::conv_bwd_input(g, kv, dims, gx));
                self.acc(grads, *k, |gk| kernels::conv_bwd_kernel(xv, g, dims, gk));
            }
            Op::Deconv2d { x, k, dims } => {
                // forward was conv_bwd_input, so the adjoints swap roles
                let dims = *dims;
                let xv = &self.nodes[x.0].value;
                let kv = &self.nodes[k.0].value;
                self.acc(grads, *x, |gx| {
                    let mut tmp = vec![0.0; gx.len()];
                    kernels::conv_fwd(g, kv, dims, &mut tmp);
                    for (a, b) in gx.iter_mut().zip(&tmp) {
                        *a += b;
                    }
                });
                self.acc(grads, *k, |gk| kernels::conv_bwd_kernel(g, xv, dims, gk));
            }
            Op::MeanFirstDim(x) => {
                let c = self.nodes[x.0].shape[0] as f64;
                let plane = node.value.len();
                self.acc(grads, *x, |gx| {
                    for chunk in gx.chunks_exact_mut(plane) {
                        for (v, &gi) in chunk.iter_mut().zip(g) {
                            *v += gi / c;
                        }
                    }
                });
            }
            Op::BroadcastFirstDim(x) => {
                let plane = self.nodes[x.0].value.len();
                self.acc(grads, *x, |gx| {
                    for chunk in g.chunks_exact(plane) {
                        for (v, &gi) in gx.iter_mut().zip(chunk) {
                            *v += gi;
                        }
                    }
                });
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Constant => "constant",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Softmax(_) => "softmax",
        Op::LogSoftmax(_) => "log_softmax",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddBias(..) => "add_bias",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Index(..) => "index",
        Op::Slice { .. } => "slice",
        Op::Concat(_) => "concat",
        Op::Reshape(_) => "reshape",
        Op::Matvec { .. } => "matvec",
        Op::Conv2d { .. } => "conv2d",
        Op::Deconv2d { .. } => "deconv2d",
        Op::MeanFirstDim(_) => "mean_first_dim",
        Op::BroadcastFirstDim(_) => "broadcast_first_dim",
    }
}
