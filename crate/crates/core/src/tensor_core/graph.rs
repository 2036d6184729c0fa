//! Reverse-mode gradient tape over the kernel set.
//!
//! Every forward call appends a node holding its value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! requires one. A value consumed by several ops receives the sum of the
//! incoming gradients.

use std::borrow::Cow;

use rand::Rng;

use super::activation::{leaky_relu_scalar, sigmoid_scalar};
use super::conv::{conv_backward_raw, conv_forward_raw, conv_setup, ConvSetup, Padding};
use super::dense::{dense_forward_raw, dense_out_shape, dense_rows};
use super::dropout::{check_keep_prob, dropout_mask};
use super::loss::softmax_cross_entropy;
use super::pool::maxpool2d_with_argmax;
use super::tensor::{matmul, MatRef, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        setup: ConvSetup,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        rows: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Reshape(Var),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Mean(Vec<Var>),
    MeanAxis0(Var),
    SumAll(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// `(outer, mid, inner)` extents around `axis` of a row-major shape.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// An owned leaf.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// A borrowed trainable leaf; the tape never copies parameter values.
    pub fn param(&mut self, value: &'p Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var], what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(t, op, &[a, b], what)
    }

    fn unary(&mut self, a: Var, op: Op<T>, what: &str, f: impl Fn(T) -> T) -> Result<Var> {
        let t = self.value(a).map(f);
        self.push(t, op, &[a], what)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let setup = conv_setup(
            self.shape(input),
            self.shape(kernel),
            bias.map(|b| self.shape(b)),
            stride,
            padding,
        )?;
        let out = conv_forward_raw(
            self.value(input).data(),
            &setup,
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let t = Tensor::from_parts(setup.out_shape(), out);
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        self.push(
            t,
            Op::Conv2d {
                input,
                kernel,
                bias,
                setup,
            },
            &parents,
            "conv2d",
        )
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (t, argmax) = maxpool2d_with_argmax(self.value(input), window, stride)?;
        self.push(t, Op::MaxPool { input, argmax }, &[input], "maxpool2d")
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let t = super::pool::global_avg_pool(self.value(input))?;
        self.push(t, Op::GlobalAvgPool(input), &[input], "global_avg_pool")
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let rows = dense_rows(self.shape(input), self.shape(weight))?;
        let out = self.shape(weight)[0];
        if let Some(b) = bias {
            if self.shape(b) != [out] {
                return Err(Error::shape(format!(
                    "dense bias must be [{out}], got {:?}",
                    self.shape(b)
                )));
            }
        }
        let y = dense_forward_raw(
            self.value(input).data(),
            rows,
            self.value(weight),
            bias.map(|b| self.value(b).data()),
        );
        let t = Tensor::from_parts(dense_out_shape(self.shape(input), out), y);
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push(
            t,
            Op::Dense {
                input,
                weight,
                bias,
                rows,
            },
            &parents,
            "dense",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        self.unary(a, Op::Scale(a, factor), "scale", |x| x * factor)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::OneMinus(a), "one_minus", |x| T::one() - x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid_scalar)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), "tanh", |x| x.tanh())
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, alpha), "leaky_relu", |x| {
            leaky_relu_scalar(x, alpha)
        })
    }

    /// Inverted dropout with a freshly drawn mask.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, keep_prob: f64, rng: &mut R) -> Result<Var> {
        check_keep_prob(keep_prob)?;
        let mask = dropout_mask(self.value(input).len(), keep_prob, rng);
        self.dropout_with_mask(input, mask)
    }

    /// Dropout with explicit multipliers (one per element).
    pub fn dropout_with_mask(&mut self, input: Var, mask: Vec<T>) -> Result<Var> {
        let v = self.value(input);
        if mask.len() != v.len() {
            return Err(Error::shape(format!(
                "dropout mask has {} entries for {} values",
                mask.len(),
                v.len()
            )));
        }
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(t, Op::Dropout { input, mask }, &[input], "dropout")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        self.push(t, Op::Reshape(a), &[a], "reshape")
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.reshape(a, &[n])
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::from_parts(out_shape, data);
        self.push(t, Op::Narrow { input, axis, start }, &[input], "narrow")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat of an empty list"))?;
        let base_shape = self.shape(first).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::shape(format!("concat axis {axis} for {base_shape:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!(
                    "concat along {axis}: {s:?} does not match {base_shape:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let mid = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * mid * inner..(o + 1) * mid * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let t = Tensor::from_parts(shape, data);
        self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
            "concat",
        )
    }

    /// Element-wise mean of equally shaped values.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("mean of an empty list"))?;
        for &v in inputs {
            self.same_shape(first, v, "mean")?;
        }
        // Running mean: m_k = m_{k-1} + (x_k - m_{k-1}) / k, exact for
        // identical inputs.
        let mut acc = self.value(first).clone();
        for (k, &v) in inputs.iter().enumerate().skip(1) {
            let inv = T::one() / T::lit((k + 1) as f64);
            for (a, &x) in acc.data_mut().iter_mut().zip(self.value(v).data()) {
                *a += (x - *a) * inv;
            }
        }
        self.push(acc, Op::Mean(inputs.to_vec()), inputs, "mean")
    }

    /// Mean over the leading axis: `[N, ...] -> [...]`.
    pub fn mean_axis0(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(format!("mean_axis0 needs rank >= 2, got {shape:?}")));
        }
        let n = shape[0];
        let inner = self.value(input).len() / n;
        let src = self.value(input).data();
        let mut data = vec![T::zero(); inner];
        for row in src.chunks(inner) {
            for (d, &v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let scale = T::one() / T::lit(n as f64);
        data.iter_mut().for_each(|v| *v *= scale);
        let t = Tensor::from_parts(shape[1..].to_vec(), data);
        self.push(t, Op::MeanAxis0(input), &[input], "mean_axis0")
    }

    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(input).sum());
        self.push(t, Op::SumAll(input), &[input], "sum_all")
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (loss, probs) = softmax_cross_entropy(self.value(logits), label)?;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
            "softmax_cross_entropy",
        )
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let seed = Tensor::full(self.shape(loss), T::one());
        self.nodes[loss.0].grad = Some(seed);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                self.accumulate(v, g)?;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return Ok(());
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn like(&self, v: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::from_parts(self.shape(v).to_vec(), data)
    }

    fn local_grads(&self, i: usize, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let g = dy.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                setup,
            } => {
                let grads = conv_backward_raw(
                    self.value(*input).data(),
                    setup,
                    self.value(*kernel).data(),
                    g,
                    self.wants(*input),
                    self.wants(*kernel),
                );
                if self.wants(*input) {
                    out.push((*input, self.like(*input, grads.input)));
                }
                if self.wants(*kernel) {
                    out.push((*kernel, self.like(*kernel, grads.kernel)));
                }
                if let (Some(b), Some(db)) = (bias, grads.bias) {
                    out.push((*b, self.like(*b, db)));
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                out.push((*input, self.like(*input, dx)));
            }
            Op::GlobalAvgPool(input) => {
                let x = self.value(*input);
                let area = x.len() / g.len();
                let scale = T::one() / T::lit(area as f64);
                let dx = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat(gv * scale).take(area))
                    .collect();
                out.push((*input, self.like(*input, dx)));
            }
            Op::Dense {
                input,
                weight,
                bias,
                rows,
            } => {
                let w = self.value(*weight);
                let (o, k) = (w.shape()[0], w.shape()[1]);
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); rows * k];
                    matmul(MatRef::new(g, *rows, o), MatRef::new(w.data(), o, k), &mut dx, false);
                    out.push((*input, self.like(*input, dx)));
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); o * k];
                    matmul(
                        MatRef::t(g, *rows, o),
                        MatRef::new(self.value(*input).data(), *rows, k),
                        &mut dw,
                        false,
                    );
                    out.push((*weight, self.like(*weight, dw)));
                }
                if let Some(b) = bias {
                    let mut db = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out.push((*b, self.like(*b, db)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                if self.wants(*a) {
                    let d = g.iter().zip(vb).map(|(&gv, &bv)| gv * bv).collect();
                    out.push((*a, self.like(*a, d)));
                }
                if self.wants(*b) {
                    let d = g.iter().zip(va).map(|(&gv, &av)| gv * av).collect();
                    out.push((*b, self.like(*b, d)));
                }
            }
            Op::Scale(a, c) => out.push((*a, dy.map(|v| v * *c))),
            Op::OneMinus(a) => out.push((*a, dy.map(|v| -v))),
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                out.push((*a, self.like(*a, d)));
            }
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &t)| gv * (T::one() - t * t))
                    .collect();
                out.push((*a, self.like(*a, d)));
            }
            Op::LeakyRelu(a, alpha) => {
                let x = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv >= T::zero() { gv } else { gv * *alpha })
                    .collect();
                out.push((*a, self.like(*a, d)));
            }
            Op::Dropout { input, mask } => {
                let d = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                out.push((*input, self.like(*input, d)));
            }
            Op::Reshape(a) => out.push((*a, self.like(*a, g.to_vec()))),
            Op::Narrow { input, axis, start } => {
                let shape = self.shape(*input);
                let (outer, mid, inner) = split_axis(shape, *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![T::zero(); self.value(*input).len()];
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                out.push((*input, self.like(*input, dx)));
            }
            Op::Concat { inputs, axis } => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let mid = self.shape(v)[*axis];
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(outer * mid * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + mid * inner]);
                        }
                        out.push((v, self.like(v, d)));
                    }
                    offset += mid;
                }
            }
            Op::Mean(inputs) => {
                let scale = T::one() / T::lit(inputs.len() as f64);
                let d = dy.map(|v| v * scale);
                for &v in inputs {
                    out.push((v, d.clone()));
                }
            }
            Op::MeanAxis0(input) => {
                let n = self.shape(*input)[0];
                let scale = T::one() / T::lit(n as f64);
                let row: Vec<T> = g.iter().map(|&v| v * scale).collect();
                let d = (0..n).flat_map(|_| row.iter().copied()).collect();
                out.push((*input, self.like(*input, d)));
            }
            Op::SumAll(input) => {
                let d = vec![g[0]; self.value(*input).len()];
                out.push((*input, self.like(*input, d)));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let d = probs
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| {
                        let target = if k == *label { T::one() } else { T::zero() };
                        (p - target) * g[0]
                    })
                    .collect();
                out.push((*logits, self.like(*logits, d)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_identical_values_is_exact() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[5], |i| 0.1 + i as f64 / 3.0));
        let copies = vec![x; 7];
        let m = g.mean(&copies).unwrap();
        assert_eq!(g.value(m), g.value(x));
    }

    #[test]
    fn fan_out_sums_gradients() {
        // f(x) = sum(x * x) uses x twice -> grad 2x
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);

        // two separate uses through different ops add up as well
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(), true);
        let a = g.scale(x, 2.0).unwrap();
        let b = g.scale(x, 5.0).unwrap();
        let c = g.add(a, b).unwrap();
        let s = g.sum_all(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[7.0, 7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn nan_is_an_error_state() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[2], f64::MAX), true);
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::full(&[2], 3.0));
        let x = g.input(Tensor::full(&[2], 2.0), true);
        let m = g.mul(c, x).unwrap();
        let s = g.sum_all(m).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn narrow_concat_round_trip() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[2, 5, 3], |i| i as f64), true);
        let a = g.narrow(x, 1, 0, 2).unwrap();
        let b = g.narrow(x, 1, 2, 3).unwrap();
        let y = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }
}
