use crate::error::{contract, Error, Result};

use super::Tensor;

/// Probabilities below this floor are clamped before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations.
///
/// Nodes are appended in evaluation order, so node ids are already a
/// topological order and the backward sweep simply walks them in reverse.
/// A tape is built for one minibatch and then dropped.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `c = a · b + beta · c`; `a` and `b` are addressed through (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every offset addressed by the strides above,
    // and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.last_dim();
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let c = x.last_dim();
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

impl Tape {
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf. Its gradient is available after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that receives no gradient (data, noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of an `[.., n]` tensor.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.shape().len() != 1 || tb.len() != ta.last_dim() {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut value = ta.clone();
        let c = tb.len();
        if c > 0 {
            for row in value.data_mut().chunks_mut(c) {
                for (v, b) in row.iter_mut().zip(tb.data()) {
                    *v += b;
                }
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.needs(a);
        self.push(value, op, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural log with inputs clamped to [`LOG_FLOOR`]; never produces NaN.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        // Recorded as a product so the backward rule stays generic.
        self.mul(a, a).expect("identical shapes")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.needs(a);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let rg = self.needs(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.needs(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(contract("mean of an empty tensor"));
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.needs(a);
        Ok(self.push(value, Op::Mean(a), rg))
    }

    /// Sums over the last axis: `[m, n] -> [m]`, `[n] -> []`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let data: Vec<f64> = if c == 0 {
            vec![0.0; t.rows()]
        } else {
            t.data().chunks(c).map(|r| r.iter().sum()).collect()
        };
        let mut shape = t.shape().to_vec();
        shape.pop();
        let value = Tensor::new(shape, data).expect("consistent reduction");
        let rg = self.needs(a);
        self.push(value, Op::SumLast(a), rg)
    }

    /// Concatenates two tensors with equal row counts along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(shape_err("concat", ta, tb));
        }
        let (m, p, q) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&ta.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&tb.data()[i * q..(i + 1) * q]);
        }
        let value = Tensor::matrix(m, p + q, data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Reverse sweep from a scalar loss, populating leaf gradients.
    ///
    /// May run once per tape unless [`Tape::zero_grad`] is called in between.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(contract("backward already ran on this tape; call zero_grad first"));
        }
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of the last backward loss with respect to `v`.
    ///
    /// Nodes the loss does not depend on get an all-zero gradient.
    pub fn grad(&self, v: Var) -> Result<Tensor> {
        if !self.backward_done {
            return Err(contract("gradient requested before backward"));
        }
        let value = self.value(v);
        Ok(match &self.grads[v.0] {
            Some(g) => Tensor::new(value.shape().to_vec(), g.clone())?,
            None => Tensor::zeros(value.shape()),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        let elementwise = |x: &[f64], dx: &mut [f64], f: &dyn Fn(usize, f64) -> f64| {
            for (j, d) in dx.iter_mut().enumerate() {
                *d += f(j, x[j]);
            }
        };

        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G · Bᵀ
                acc(a, &mut |da| {
                    gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), 1.0, da)
                });
                // dB = Aᵀ · G
                acc(b, &mut |db| {
                    gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), 1.0, db)
                });
            }
            Op::Add(a, b) => {
                acc(a, &mut |d| elementwise(g, d, &|j, _| g[j]));
                acc(b, &mut |d| elementwise(g, d, &|j, _| g[j]));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |d| elementwise(g, d, &|j, _| g[j]));
                acc(b, &mut |d| elementwise(g, d, &|j, _| -g[j]));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(a), val(b));
                acc(a, &mut |d| elementwise(g, d, &|j, _| g[j] * xb[j]));
                acc(b, &mut |d| elementwise(g, d, &|j, _| g[j] * xa[j]));
            }
            Op::AddRow(a, bias) => {
                acc(a, &mut |d| elementwise(g, d, &|j, _| g[j]));
                acc(bias, &mut |d| {
                    let c = d.len();
                    if c > 0 {
                        for row in g.chunks(c) {
                            for (dj, gj) in d.iter_mut().zip(row) {
                                *dj += gj;
                            }
                        }
                    }
                });
            }
            Op::AddScalar(a) => acc(a, &mut |d| elementwise(g, d, &|j, _| g[j])),
            Op::Scale(a, c) => acc(a, &mut |d| elementwise(g, d, &|j, _| c * g[j])),
            Op::Exp(a) => acc(a, &mut |d| elementwise(g, d, &|j, _| g[j] * y[j])),
            Op::Log(a) => {
                let x = val(a);
                acc(a, &mut |d| {
                    elementwise(x, d, &|j, xj| if xj > LOG_FLOOR { g[j] / xj } else { 0.0 })
                })
            }
            Op::Relu(a) => {
                let x = val(a);
                acc(a, &mut |d| elementwise(x, d, &|j, xj| if xj > 0.0 { g[j] } else { 0.0 }))
            }
            Op::Tanh(a) => acc(a, &mut |d| elementwise(g, d, &|j, _| g[j] * (1.0 - y[j] * y[j]))),
            Op::Sigmoid(a) => acc(a, &mut |d| elementwise(g, d, &|j, _| g[j] * y[j] * (1.0 - y[j]))),
            Op::Softplus(a) => {
                let x = val(a);
                acc(a, &mut |d| elementwise(x, d, &|j, xj| g[j] * sigmoid(xj)))
            }
            Op::Softmax(a) => {
                let c = node.value.last_dim().max(1);
                acc(a, &mut |d| {
                    for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((dj, yj), gj) in dr.iter_mut().zip(yr).zip(gr) {
                            *dj += yj * (gj - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let c = node.value.last_dim().max(1);
                acc(a, &mut |d| {
                    for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let total: f64 = gr.iter().sum();
                        for ((dj, yj), gj) in dr.iter_mut().zip(yr).zip(gr) {
                            *dj += gj - yj.exp() * total;
                        }
                    }
                })
            }
            Op::Sum(a) => acc(a, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => acc(a, &mut |d| {
                let scale = g[0] / d.len() as f64;
                d.iter_mut().for_each(|v| *v += scale)
            }),
            Op::SumLast(a) => {
                let c = self.nodes[a.0].value.last_dim();
                acc(a, &mut |d| {
                    if c > 0 {
                        for (dr, gi) in d.chunks_mut(c).zip(g) {
                            dr.iter_mut().for_each(|v| *v += gi);
                        }
                    }
                })
            }
            Op::Concat(a, b) => {
                let p = self.nodes[a.0].value.last_dim();
                let q = self.nodes[b.0].value.last_dim();
                let w = p + q;
                acc(a, &mut |d| {
                    if p > 0 {
                        for (dr, gr) in d.chunks_mut(p).zip(g.chunks(w)) {
                            for (dj, gj) in dr.iter_mut().zip(&gr[..p]) {
                                *dj += gj;
                            }
                        }
                    }
                });
                acc(b, &mut |d| {
                    if q > 0 {
                        for (dr, gr) in d.chunks_mut(q).zip(g.chunks(w)) {
                            for (dj, gj) in dr.iter_mut().zip(&gr[p..]) {
                                *dj += gj;
                            }
                        }
                    }
                });
            }
        }
    }
}
