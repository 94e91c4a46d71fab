//! Dynamically recorded computation graph with reverse-mode gradients.

use super::ops::{self, NormStats};
use super::{Element, Grads, ParamId, ParamStore, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'p, T: Element> {
    Owned(Tensor<T>),
    Param(&'p Tensor<T>),
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows { x: Var, start: usize },
    MeanRows(Var),
    Reshape(Var),
    Sum(Var),
    Bce { pred: Var, target: Vec<T> },
    Mse { pred: Var, target: Vec<T> },
}

struct Node<'p, T: Element> {
    value: Value<'p, T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations in execution order. Parameters are borrowed from the
/// store, never copied.
pub struct Tape<'p, T: Element = f32> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<'p, T>>,
    param_vars: Vec<Option<Var>>,
    kinks: u64,
}

const BCE_CLAMP: f64 = 1e-7;
const KINK_SEED: u64 = 0xcbf2_9ce4_8422_2325;

fn mix(hash: u64, bit: bool) -> u64 {
    (hash ^ u64::from(bit)).wrapping_mul(0x0100_0000_01b3)
}

impl<'p, T: Element> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            kinks: KINK_SEED,
        }
    }

    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            kinks: KINK_SEED,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Hash of the branch taken at every non-smooth point recorded so far
    /// (ReLU signs, BCE clamping). Two evaluations with equal signatures lie
    /// on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(t) => t,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf value; tracked for gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: Value::Owned(tensor),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("tape built without a parameter store");
        self.nodes.push(Node {
            value: Value::Param(store.get(id)),
            op: Op::Param,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = ops::transpose(self.value(a))?;
        self.push(out, Op::Transpose(a), &[a], "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = ops::add_bias(self.value(x), self.value(bias))?;
        self.push(out, Op::AddBias(x, bias), &[x, bias], "add_bias")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = ops::map(self.value(x), |v| v * s);
        self.push(out, Op::Scale(x, s), &[x], "scale")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x], "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = ops::tanh(self.value(x));
        self.push(out, Op::Tanh(x), &[x], "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = ops::relu(self.value(x));
        self.kinks = self.value(x).data().iter().fold(self.kinks, |h, &v| mix(h, v > T::zero()));
        self.push(out, Op::Relu(x), &[x], "relu")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = ops::softmax(self.value(x), axis)?;
        self.push(out, Op::Softmax { x, axis }, &[x], "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        ops::check_norm_args(xv, gv, bv, eps)?;
        let NormStats { xhat, rstd } = ops::layer_norm_stats(xv, eps);
        let out = ops::apply_affine(xv.shape(), &xhat, gv.data(), bv.data());
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        self.push(out, op, &[x, gamma, beta], "layer_norm")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_cols(&values)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_rows(&values)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), parts, "concat_rows")
    }

    /// Rows `start..start + len` of a 2-D value.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if len == 0 || start + len > r {
            return Err(dim_err!("row range {start}..{} of {r} rows", start + len));
        }
        let out = Tensor::new(vec![len, c], xv.data()[start * c..(start + len) * c].to_vec())?;
        self.push(out, Op::Rows { x, start }, &[x], "rows")
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let out = ops::mean_rows(self.value(x))?;
        self.push(out, Op::MeanRows(x), &[x], "mean_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        self.push(out, Op::Reshape(x), &[x], "reshape")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).len());
        let s = self.sum(x)?;
        self.scale(s, T::one() / n)
    }

    /// Mean binary cross-entropy of probabilities `pred` against `target`.
    pub fn bce(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(dim_err!("bce: {} predictions, {} targets", p.len(), target.len()));
        }
        let eps = T::lit(BCE_CLAMP);
        let n = T::from_usize(target.len());
        let kinks = p.data().iter().fold(self.kinks, |h, &v| mix(mix(h, v < eps), v > T::one() - eps));
        let total: T = p
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let p = p.max(eps).min(T::one() - eps);
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum();
        self.kinks = kinks;
        let op = Op::Bce {
            pred,
            target: target.to_vec(),
        };
        self.push(Tensor::scalar(total / n), op, &[pred], "bce")
    }

    /// Mean squared error of `pred` against `target`.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(dim_err!("mse: {} predictions, {} targets", p.len(), target.len()));
        }
        let n = T::from_usize(target.len());
        let total: T = p
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let op = Op::Mse {
            pred,
            target: target.to_vec(),
        };
        self.push(Tensor::scalar(total / n), op, &[pred], "mse")
    }

    /// Reverse pass from a single-element `loss`. Each recorded op is
    /// visited once, in reverse execution order.
    pub fn backward(&self, loss: Var) -> Result<Backward<T>> {
        if self.value(loss).len() != 1 {
            return Err(dim_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
        }
        let mut param_grads = vec![None; self.param_vars.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                param_grads[pid] = grads[v.0].clone();
            }
        }
        Ok(Backward {
            grads,
            params: Grads::from_vec(param_grads),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.shape()[1];
                if self.needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    ops::matmul_nt_into(g, bv.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, k * n);
                    ops::matmul_tn_into(av.data(), g, gb, m, k, n);
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let (m, n) = self.value(*a).dims2().unwrap();
                    let ga = slot(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] = gb[i] + g[i] * av[i];
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.needs(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.needs(*bias) {
                    let cols = self.value(*bias).len();
                    let gb = slot(grads, *bias, cols);
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % cols] = gb[i % cols] + v;
                    }
                }
            }
            Op::Scale(x, s) => {
                if self.needs(*x) {
                    let gx = slot(grads, *x, g.len());
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o = *o + *s * v;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    let y = out.data();
                    let gx = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i] * y[i] * (T::one() - y[i]);
                    }
                }
            }
            Op::Tanh(x) => {
                if self.needs(*x) {
                    let y = out.data();
                    let gx = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] = gx[i] + g[i] * (T::one() - y[i] * y[i]);
                    }
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let gx = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        if xv[i] > T::zero() {
                            gx[i] = gx[i] + g[i];
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if self.needs(*x) {
                    let y = out.data();
                    let (outer, len, inner) = ops::axis_layout(out.shape(), *axis).unwrap();
                    let gx = slot(grads, *x, g.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                let k = at(j);
                                gx[k] = gx[k] + y[k] * (g[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma).data();
                let cols = gam.len();
                let rows = g.len() / cols;
                if self.needs(*gamma) {
                    let gg = slot(grads, *gamma, cols);
                    for (i, &v) in g.iter().enumerate() {
                        gg[i % cols] = gg[i % cols] + v * xhat[i];
                    }
                }
                if self.needs(*beta) {
                    let gb = slot(grads, *beta, cols);
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % cols] = gb[i % cols] + v;
                    }
                }
                if self.needs(*x) {
                    let n = T::from_usize(cols);
                    let gx = slot(grads, *x, g.len());
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let dxhat: Vec<T> = g[span.clone()].iter().zip(gam).map(|(&a, &b)| a * b).collect();
                        let xh = &xhat[span.clone()];
                        let sum_d: T = dxhat.iter().copied().sum();
                        let sum_dx: T = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            let v = rstd[r] / n * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
                            gx[r * cols + c] = gx[r * cols + c] + v;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.shape()[0];
                let total = out.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).shape()[1];
                    if self.needs(*p) {
                        let gp = slot(grads, *p, rows * w);
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] = gp[r * w + c] + g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.needs(*p) {
                        add_into(slot(grads, *p, n), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Rows { x, start } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let cols = xv.shape()[1];
                    let gx = slot(grads, *x, xv.len());
                    add_into(&mut gx[start * cols..start * cols + g.len()], g);
                }
            }
            Op::MeanRows(x) => {
                if self.needs(*x) {
                    let (rows, cols) = self.value(*x).dims2().unwrap();
                    let inv = T::one() / T::from_usize(rows);
                    let gx = slot(grads, *x, rows * cols);
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o = *o + g[i % cols] * inv;
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let n = self.value(*x).len();
                    slot(grads, *x, n).iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
            Op::Bce { pred, target } => {
                if self.needs(*pred) {
                    let p = self.value(*pred).data();
                    let eps = T::lit(BCE_CLAMP);
                    let n = T::from_usize(target.len());
                    let gp = slot(grads, *pred, p.len());
                    for i in 0..p.len() {
                        let pc = p[i].max(eps).min(T::one() - eps);
                        gp[i] = gp[i] + g[0] * (pc - target[i]) / (pc * (T::one() - pc)) / n;
                    }
                }
            }
            Op::Mse { pred, target } => {
                if self.needs(*pred) {
                    let p = self.value(*pred).data();
                    let n = T::from_usize(target.len());
                    let two = T::lit(2.0);
                    let gp = slot(grads, *pred, p.len());
                    for i in 0..p.len() {
                        gp[i] = gp[i] + g[0] * two * (p[i] - target[i]) / n;
                    }
                }
            }
        }
    }
}

impl<T: Element> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn slot<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Result of a reverse pass.
pub struct Backward<T: Element> {
    grads: Vec<Option<Vec<T>>>,
    params: Grads<T>,
}

impl<T: Element> Backward<T> {
    /// Gradient with respect to any recorded value that needed one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> &Grads<T> {
        &self.params
    }

    pub fn into_param_grads(self) -> Grads<T> {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0).with_requires_grad(true));
        let y = tape.mul(x, x).unwrap();
        let back = tape.backward(y).unwrap();
        assert_eq!(back.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::scalar(2.0)).unwrap();
        let mut tape = Tape::with_params(&store);
        let a = tape.param(w);
        let b = tape.param(w);
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let y = tape.mul(s, a).unwrap(); // 2w^2
        let back = tape.backward(y).unwrap();
        assert_eq!(back.param_grads().get(w).unwrap(), &[8.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(1e300));
        let err = tape.mul(x, x).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn constant_branch_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(5.0));
        let x = tape.leaf(Tensor::scalar(1.5).with_requires_grad(true));
        let y = tape.mul(c, x).unwrap();
        let back = tape.backward(y).unwrap();
        assert!(back.grad(c).is_none());
        assert_eq!(back.grad(x).unwrap(), &[5.0]);
    }

    #[test]
    fn bce_and_mse_values() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::scalar(0.5));
        let l = tape.bce(p, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let p = tape.constant(Tensor::scalar(0.9));
        let l = tape.bce(p, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] - 0.105_360_515_657_826_3).abs() < 1e-12);
        let p = tape.constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let l = tape.mse(p, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
    }
}
