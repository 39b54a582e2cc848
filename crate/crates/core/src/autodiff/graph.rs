use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{self, ConvGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::{math, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Tanh => math::tanh(x),
            Activation::Sigmoid => 1.0 / (1.0 + math::exp(-x)),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Dense { x: usize, w: usize, b: usize },
    Conv { x: usize, w: usize, b: usize, geom: ConvGeom },
    MaxPool { x: usize, argmax: Vec<usize> },
    Upsample { x: usize, factor: [usize; 3] },
    Reshape { x: usize },
    Act { x: usize, kind: Activation },
    Softmax { x: usize },
    LogSoftmax { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    Offset { x: usize },
    Exp { x: usize },
    Square { x: usize },
    Sum { x: usize },
    LogSumExp { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    Slice { x: usize, start: usize },
    Stack { xs: Vec<usize> },
    Gram { x: usize },
    AxisSlice { x: usize, axis: usize, index: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of evaluated operations.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_len(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()).expect("same shape")
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, &[])
    }

    /// A differentiable leaf that receives gradient but is not a stored
    /// parameter (used for gradient checks on inputs).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Input, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), &[])
    }

    /// `y = W x + b` with `W: [out, in]`, `x` flattened.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ws = wv.shape();
        if ws.len() != 2 || ws[1] != xv.len() || bv.len() != ws[0] {
            return Err(Error::ShapeMismatch(format!(
                "dense weight {ws:?}, bias {:?}, input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let (out, inp) = (ws[0], ws[1]);
        let xd = xv.data();
        let y: Vec<f64> = (0..out)
            .map(|o| {
                let row = &wv.data()[o * inp..(o + 1) * inp];
                bv.data()[o] + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let value = Tensor::new(&[out], y)?;
        Ok(self.push(value, Op::Dense { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0]))
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let value = conv::conv_forward(self.value(x), self.value(w), self.value(b), &geom)?;
        Ok(self.push(value, Op::Conv { x: x.0, w: w.0, b: b.0, geom }, &[x.0, w.0, b.0]))
    }

    pub fn maxpool(&mut self, x: Var, factor: [usize; 3]) -> Result<Var> {
        let (value, argmax) = conv::maxpool_forward(self.value(x), factor)?;
        Ok(self.push(value, Op::MaxPool { x: x.0, argmax }, &[x.0]))
    }

    pub fn upsample(&mut self, x: Var, factor: [usize; 3]) -> Result<Var> {
        let value = conv::upsample_forward(self.value(x), factor)?;
        Ok(self.push(value, Op::Upsample { x: x.0, factor }, &[x.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x: x.0 }, &[x.0]))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = map(self.value(x), |v| kind.apply(v));
        self.push(value, Op::Act { x: x.0, kind }, &[x.0])
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let lse = math::log_sum_exp(xv.data());
        let value = map(xv, |v| math::exp(v - lse));
        self.push(value, Op::Softmax { x: x.0 }, &[x.0])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let lse = math::log_sum_exp(xv.data());
        let value = map(xv, |v| v - lse);
        self.push(value, Op::LogSoftmax { x: x.0 }, &[x.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_len(self.value(a), self.value(b), "add")?;
        let value = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_len(self.value(a), self.value(b), "sub")?;
        let value = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_len(self.value(a), self.value(b), "mul")?;
        let value = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = map(self.value(x), |v| v * factor);
        self.push(value, Op::Scale { x: x.0, factor }, &[x.0])
    }

    pub fn offset(&mut self, x: Var, shift: f64) -> Var {
        let value = map(self.value(x), |v| v + shift);
        self.push(value, Op::Offset { x: x.0 }, &[x.0])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = map(self.value(x), math::exp);
        self.push(value, Op::Exp { x: x.0 }, &[x.0])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = map(self.value(x), |v| v * v);
        self.push(value, Op::Square { x: x.0 }, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn log_sum_exp(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(math::log_sum_exp(self.value(x).data()));
        self.push(value, Op::LogSumExp { x: x.0 }, &[x.0])
    }

    /// Elementwise clamp; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = map(self.value(x), |v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { x: x.0, lo, hi }, &[x.0])
    }

    /// Contiguous sub-vector `[start, start + len)` of the flattened input.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.len() || len == 0 {
            return Err(Error::ShapeMismatch(format!("slice {start}+{len} of {}", xv.len())));
        }
        let value = Tensor::vector(&xv.data()[start..start + len]);
        Ok(self.push(value, Op::Slice { x: x.0, start }, &[x.0]))
    }

    /// Concatenate flattened inputs into one vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("stack of no tensors".into()));
        }
        let data: Vec<f64> = xs.iter().flat_map(|v| self.value(*v).data().iter().copied()).collect();
        let value = Tensor::vector(&data);
        let idx: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Op::Stack { xs: idx.clone() }, &idx))
    }

    /// `G = F F^T` for features `F: [C, ...]` viewed as `C x M`.
    pub fn gram(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.shape()[0];
        let m = xv.len() / c;
        let d = xv.data();
        let mut g = vec![0.0; c * c];
        for i in 0..c {
            let fi = &d[i * m..(i + 1) * m];
            for j in i..c {
                let fj = &d[j * m..(j + 1) * m];
                let s: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                g[i * c + j] = s;
                g[j * c + i] = s;
            }
        }
        let value = Tensor::new(&[c, c], g).expect("gram shape");
        self.push(value, Op::Gram { x: x.0 }, &[x.0])
    }

    /// Single-channel slice `[1, A, B]` of a `[1, D, H, W]` volume, taken
    /// at `index` along spatial `axis` (0 = D, 1 = H, 2 = W).
    pub fn axis_slice(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let [c, d, h, w] = self.value(x).dims4()?;
        let dims = [d, h, w];
        if c != 1 || axis > 2 || index >= dims[axis] {
            return Err(Error::ShapeMismatch(format!("slice {axis}/{index} of {:?}", self.value(x).shape())));
        }
        let idx = slice_indices(dims, axis, index);
        let xd = self.value(x).data();
        let data: Vec<f64> = idx.iter().map(|&i| xd[i]).collect();
        let shape = match axis {
            0 => [1, h, w],
            1 => [1, d, w],
            _ => [1, d, h],
        };
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::AxisSlice { x: x.0, axis, index }, &[x.0]))
    }

    /// `mu + exp(log_var / 2) * eps` with `eps ~ N(0, I)` drawn from `rng`;
    /// the noise is a constant of the graph.
    pub fn reparameterize(&mut self, mu: Var, log_var: Var, rng: &mut crate::rng::Rng) -> Result<Var> {
        let n = self.value(mu).len();
        let eps = Tensor::vector(&crate::rng::normal_vec(rng, n));
        self.reparameterize_with(mu, log_var, eps)
    }

    /// [`Graph::reparameterize`] with explicit noise.
    pub fn reparameterize_with(&mut self, mu: Var, log_var: Var, eps: Tensor) -> Result<Var> {
        let e = self.input(eps);
        let half = self.scale(log_var, 0.5);
        let std = self.exp(half);
        let noise = self.mul(std, e)?;
        self.add(mu, noise)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |j: usize| self.nodes[j].requires_grad;
        let val = |j: usize| &self.nodes[j].value;
        let mut acc = |j: usize, t: Tensor| {
            if !self.nodes[j].requires_grad {
                return;
            }
            match &mut grads[j] {
                Some(g) => g.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (out, inp) = (wv.shape()[0], wv.shape()[1]);
                let g = gy.data();
                if needs(*w) {
                    let mut dw = vec![0.0; out * inp];
                    for o in 0..out {
                        for (d, xvv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xv.data()) {
                            *d = g[o] * xvv;
                        }
                    }
                    acc(*w, Tensor::new(wv.shape(), dw)?);
                }
                acc(*b, Tensor::new(&[out], g.to_vec())?);
                if needs(*x) {
                    let mut dx = vec![0.0; inp];
                    for (row, go) in wv.data().chunks_exact(inp).zip(g) {
                        for (d, wvv) in dx.iter_mut().zip(row) {
                            *d += go * wvv;
                        }
                    }
                    acc(*x, Tensor::new(xv.shape(), dx)?);
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv_backward(val(*x), val(*w), geom, gy, needs(*x))?;
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                acc(*b, db);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; val(*x).len()];
                for (g, &a) in gy.data().iter().zip(argmax) {
                    dx[a] += g;
                }
                acc(*x, Tensor::new(val(*x).shape(), dx)?);
            }
            Op::Upsample { x, factor } => acc(*x, conv::upsample_backward(val(*x), *factor, gy)?),
            Op::Reshape { x } => acc(*x, gy.clone().reshaped(val(*x).shape())?),
            Op::Act { x, kind } => {
                let xv = val(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(gy.data())
                    .map(|((&xi, &yi), &g)| g * kind.derivative(xi, yi))
                    .collect();
                acc(*x, Tensor::new(xv.shape(), d)?);
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(gy.data()).map(|(a, b)| a * b).sum();
                let d = y.iter().zip(gy.data()).map(|(yi, g)| yi * (g - dot)).collect();
                acc(*x, Tensor::new(val(*x).shape(), d)?);
            }
            Op::LogSoftmax { x } => {
                let total: f64 = gy.data().iter().sum();
                let d = node.value.data().iter().zip(gy.data()).map(|(ly, g)| g - math::exp(*ly) * total).collect();
                acc(*x, Tensor::new(val(*x).shape(), d)?);
            }
            Op::Add { a, b } => {
                acc(*a, gy.clone().reshaped(val(*a).shape())?);
                acc(*b, gy.clone().reshaped(val(*b).shape())?);
            }
            Op::Sub { a, b } => {
                acc(*a, gy.clone().reshaped(val(*a).shape())?);
                acc(*b, map(gy, |g| -g).reshaped(val(*b).shape())?);
            }
            Op::Mul { a, b } => {
                if needs(*a) {
                    acc(*a, zip(gy, val(*b), |g, y| g * y).reshaped(val(*a).shape())?);
                }
                if needs(*b) {
                    acc(*b, zip(gy, val(*a), |g, y| g * y).reshaped(val(*b).shape())?);
                }
            }
            Op::Scale { x, factor } => acc(*x, map(gy, |g| g * factor)),
            Op::Offset { x } => acc(*x, gy.clone()),
            Op::Exp { x } => acc(*x, zip(gy, &node.value, |g, y| g * y)),
            Op::Square { x } => acc(*x, zip(gy, val(*x), |g, v| 2.0 * g * v)),
            Op::Sum { x } => acc(*x, Tensor::full(val(*x).shape(), gy.item())),
            Op::LogSumExp { x } => {
                let lse = node.value.item();
                acc(*x, map(val(*x), |v| gy.item() * math::exp(v - lse)));
            }
            Op::Clamp { x, lo, hi } => {
                acc(*x, zip(gy, val(*x), |g, v| if v > *lo && v < *hi { g } else { 0.0 }));
            }
            Op::Slice { x, start } => {
                let mut d = vec![0.0; val(*x).len()];
                d[*start..*start + gy.len()].copy_from_slice(gy.data());
                acc(*x, Tensor::new(val(*x).shape(), d)?);
            }
            Op::Stack { xs } => {
                let mut off = 0;
                for &j in xs {
                    let n = val(j).len();
                    acc(j, Tensor::new(val(j).shape(), gy.data()[off..off + n].to_vec())?);
                    off += n;
                }
            }
            Op::Gram { x } => {
                // dF = (dG + dG^T) F
                let xv = val(*x);
                let c = xv.shape()[0];
                let m = xv.len() / c;
                let g = gy.data();
                let f = xv.data();
                let mut d = vec![0.0; xv.len()];
                for i in 0..c {
                    for j in 0..c {
                        let s = g[i * c + j] + g[j * c + i];
                        if s == 0.0 {
                            continue;
                        }
                        let fj = &f[j * m..(j + 1) * m];
                        for (di, fv) in d[i * m..(i + 1) * m].iter_mut().zip(fj) {
                            *di += s * fv;
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape(), d)?);
            }
            Op::AxisSlice { x, axis, index } => {
                let [_, d, h, w] = val(*x).dims4()?;
                let mut dx = vec![0.0; val(*x).len()];
                for (k, &i) in slice_indices([d, h, w], *axis, *index).iter().enumerate() {
                    dx[i] += gy.data()[k];
                }
                acc(*x, Tensor::new(val(*x).shape(), dx)?);
            }
        }
        Ok(())
    }
}

fn slice_indices(dims: [usize; 3], axis: usize, index: usize) -> Vec<usize> {
    let [d, h, w] = dims;
    let at = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut out = Vec::new();
    match axis {
        0 => (0..h).for_each(|y| (0..w).for_each(|x| out.push(at(index, y, x)))),
        1 => (0..d).for_each(|z| (0..w).for_each(|x| out.push(at(z, index, x)))),
        _ => (0..d).for_each(|z| (0..h).for_each(|y| out.push(at(z, y, index)))),
    }
    out
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to node `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Add every parameter leaf's gradient into `out` (indexed by `ParamId`).
    pub fn accumulate_params(&self, graph: &Graph, out: &mut [Tensor]) {
        for (node, g) in graph.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                out[id.0].add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::rng;

    const TOL: f64 = 1e-4;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let n = shape.iter().product();
        let mut r = rng::stream(seed, 1);
        Tensor::new(shape, rng::normal_vec(&mut r, n)).unwrap()
    }

    fn assert_grad<F>(inputs: &[Tensor], f: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let report = gradcheck::check(inputs, f, 12, 1e-4, 99).unwrap();
        assert!(report.max_rel_error < TOL, "rel error {}", report.max_rel_error);
    }

    /// Reduce any tensor to a scalar with non-uniform weights.
    fn weighted_sum(g: &mut Graph, v: Var) -> Result<Var> {
        let n = g.value(v).len();
        let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7) % 11) as f64 / 5.0).collect();
        let wv = g.input(Tensor::new(g.value(v).shape(), w)?);
        let p = g.mul(v, wv)?;
        Ok(g.sum(p))
    }

    #[test]
    fn dense_of_sum_is_outer_product() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[1.0, 2.0, 3.0]));
        let w = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2]));
        let y = g.dense(x, w, b).unwrap();
        let l = g.sum(y);
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.wrt(w).unwrap().data(), [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(gr.wrt(b).unwrap().data(), [1.0, 1.0]);
        assert!(gr.wrt(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn leaky_relu_and_softmax_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[-1.0, 2.0]));
        let y = g.activation(x, Activation::LeakyRelu(0.2));
        assert_eq!(g.value(y).data(), [-0.2, 2.0]);
        let l = g.input(Tensor::vector(&[0.7; 4]));
        let s = g.softmax(l);
        for v in g.value(s).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_dense() {
        let ins = [random(&[5], 1), random(&[4, 5], 2), random(&[4], 3)];
        assert_grad(&ins, |g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            weighted_sum(g, y)
        });
    }

    #[test]
    fn grad_conv_2d_and_3d() {
        for (geom, xs, ws) in [
            (ConvGeom::same(3, 2), [2usize, 1, 6, 5], [3usize, 2, 1, 3, 3]),
            (ConvGeom::strided(3, 2, 2), [2, 1, 7, 7], [3, 2, 1, 3, 3]),
            (ConvGeom::growing(3, 1, 2), [1, 1, 4, 4], [2, 1, 1, 3, 3]),
            (ConvGeom::same(3, 3), [1, 4, 3, 5], [2, 1, 3, 3, 3]),
            (ConvGeom::growing(3, 3, 3), [2, 2, 3, 2], [1, 2, 3, 3, 3]),
        ] {
            let ins = [random(&xs, 4), random(&ws, 5), random(&[ws[0]], 6)];
            assert_grad(&ins, |g, v| {
                let y = g.conv(v[0], v[1], v[2], geom)?;
                weighted_sum(g, y)
            });
        }
    }

    #[test]
    fn grad_pool_and_upsample() {
        let ins = [random(&[2, 5, 7], 7)];
        assert_grad(&ins, |g, v| {
            let y = g.maxpool(v[0], [1, 2, 2])?;
            weighted_sum(g, y)
        });
        let ins = [random(&[2, 3, 3, 2], 8)];
        assert_grad(&ins, |g, v| {
            let y = g.maxpool(v[0], [2, 2, 2])?;
            let y = g.upsample(y, [2, 2, 2])?;
            weighted_sum(g, y)
        });
    }

    #[test]
    fn grad_activations() {
        for kind in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid] {
            let ins = [random(&[20], 9)];
            assert_grad(&ins, move |g, v| {
                let y = g.activation(v[0], kind);
                weighted_sum(g, y)
            });
        }
    }

    #[test]
    fn grad_softmax_family() {
        let ins = [random(&[6], 10)];
        assert_grad(&ins, |g, v| {
            let y = g.softmax(v[0]);
            weighted_sum(g, y)
        });
        assert_grad(&ins, |g, v| {
            let y = g.log_softmax(v[0]);
            weighted_sum(g, y)
        });
        assert_grad(&ins, |g, v| Ok(g.log_sum_exp(v[0])));
    }

    #[test]
    fn grad_elementwise() {
        let ins = [random(&[8], 11), random(&[8], 12)];
        assert_grad(&ins, |g, v| {
            let a = g.mul(v[0], v[1])?;
            let b = g.sub(a, v[1])?;
            let c = g.square(b);
            let d = g.exp(v[0]);
            let e = g.add(c, d)?;
            let f = g.scale(e, -1.5);
            let f = g.offset(f, 2.0);
            let f = g.clamp(f, -50.0, 50.0);
            weighted_sum(g, f)
        });
    }

    #[test]
    fn grad_structural() {
        let ins = [random(&[2, 3, 4], 13), random(&[5], 14)];
        assert_grad(&ins, |g, v| {
            let f = g.flatten(v[0])?;
            let s = g.slice(f, 3, 10)?;
            let t = g.stack(&[s, v[1], s])?;
            let r = g.reshape(t, &[5, 5])?;
            weighted_sum(g, r)
        });
    }

    #[test]
    fn grad_gram_and_axis_slice() {
        let ins = [random(&[3, 4, 5], 15)];
        assert_grad(&ins, |g, v| {
            let m = g.gram(v[0]);
            weighted_sum(g, m)
        });
        let ins = [random(&[1, 3, 4, 5], 16)];
        for axis in 0..3 {
            assert_grad(&ins, move |g, v| {
                let s = g.axis_slice(v[0], axis, 1)?;
                let m = g.gram(s);
                weighted_sum(g, m)
            });
        }
    }

    #[test]
    fn grad_reparameterize() {
        let ins = [random(&[4], 17), random(&[4], 18)];
        assert_grad(&ins, |g, v| {
            let z = g.reparameterize_with(v[0], v[1], Tensor::vector(&[0.3, -1.2, 0.8, 2.0]))?;
            weighted_sum(g, z)
        });
    }

    #[test]
    fn grad_two_layer_composition() {
        let ins = [
            random(&[1, 6, 6], 19),
            random(&[2, 1, 1, 3, 3], 20),
            random(&[2], 21),
            random(&[3, 18], 22),
            random(&[3], 23),
        ];
        assert_grad(&ins, |g, v| {
            let c = g.conv(v[0], v[1], v[2], ConvGeom::same(3, 2))?;
            let c = g.activation(c, Activation::Tanh);
            let p = g.maxpool(c, [1, 2, 2])?;
            let f = g.flatten(p)?;
            let d = g.dense(f, v[3], v[4])?;
            let s = g.softmax(d);
            weighted_sum(g, s)
        });
    }

    #[test]
    fn reparameterize_statistics() {
        let mut r = rng::stream(5, 0);
        let n = 10_000;
        let (mu, lv) = (1.5, math::ln(0.25));
        let mut sum = 0.0;
        for _ in 0..n {
            let mut g = Graph::new();
            let m = g.input(Tensor::vector(&[mu]));
            let l = g.input(Tensor::vector(&[lv]));
            let z = g.reparameterize(m, l, &mut r).unwrap();
            sum += g.value(z).item();
        }
        let stderr = 0.5 / math::sqrt(n as f64);
        assert!((sum / n as f64 - mu).abs() < 4.0 * stderr);

        let mut g = Graph::new();
        let m = g.input(Tensor::vector(&[0.7]));
        let l = g.input(Tensor::vector(&[-1e3]));
        let z = g.reparameterize(m, l, &mut rng::stream(1, 1)).unwrap();
        assert_eq!(g.value(z).item(), 0.7);
    }
}
