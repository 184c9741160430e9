//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order; `backward` walks the
//! tape in reverse and accumulates gradients for nodes that require them.
//! Gradient accumulation follows node order, so results are reproducible.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

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
    /// `x [n, in]`, `w [out, in]`, optional bias `[out]`.
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Softplus(Var),
    /// Per-row squared L2 norm, `[n, c] -> [n]`.
    RowSqNorm(Var),
    /// `sum_i w_i a_i / len(a)`, returns a scalar.
    WeightedMean(Var, Vec<f64>),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Silu(..) => "silu",
            Op::Softplus(..) => "softplus",
            Op::RowSqNorm(..) => "row_sq_norm",
            Op::WeightedMean(..) => "weighted_mean",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        if wv.shape().len() != 2 {
            return Err(Error::input("linear weight must be 2-D"));
        }
        let (out, input) = (wv.shape()[0], wv.shape()[1]);
        if xv.shape().len() != 2 || xv.shape()[1] != input {
            return Err(Error::input(format!(
                "linear: input shape {:?} does not match weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let n = xv.shape()[0];
        let bias = match b {
            Some(b) => {
                let bv = &self.nodes[b.0].value;
                if bv.len() != out {
                    return Err(Error::input("linear: bias length mismatch"));
                }
                Some(bv.values())
            }
            None => None,
        };
        let y = kernels::linear(xv.values(), n, input, wv.values(), out, bias);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(vec![n, out], y)?, Op::Linear { x, w, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(Error::input(format!(
                "{what}: shape {:?} vs {:?}",
                self.nodes[a.0].value.shape(),
                self.nodes[b.0].value.shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let vals = av.values().iter().zip(bv.values()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.shape().to_vec(), vals).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = &self.nodes[a.0].value;
        let vals = av.values().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(av.shape().to_vec(), vals).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, Op::Silu(a), kernels::silu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), kernels::softplus)
    }

    pub fn row_sq_norm(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let (n, c) = (av.rows(), av.cols());
        let vals = (0..n)
            .map(|i| av.values()[i * c..(i + 1) * c].iter().map(|v| v * v).sum())
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::vector(vals), Op::RowSqNorm(a), rg)
    }

    pub fn weighted_mean(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if weights.len() != av.len() || av.is_empty() {
            return Err(Error::input("weighted_mean: weight count mismatch"));
        }
        let n = av.len() as f64;
        let s: f64 = av.values().iter().zip(&weights).map(|(x, w)| w * x).sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s / n), Op::WeightedMean(a, weights), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        self.weighted_mean(a, vec![1.0; n])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.values().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Gradients of the scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::input("backward needs a scalar loss"));
        }
        if !lv.item().is_finite() {
            let (idx, name) = self.first_non_finite().unwrap_or((loss.0, "loss"));
            return Err(Error::numeric(format!(
                "non-finite loss; first non-finite value at node {idx} ({name})"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (out, input) = (wv.shape()[0], wv.shape()[1]);
                    let n = xv.shape()[0];
                    if self.rg(*x) {
                        let dx = kernels::linear_grad_input(g.values(), n, out, wv.values(), input);
                        accumulate(&mut grads, *x, xv.shape(), dx);
                    }
                    if self.rg(*w) {
                        let dw = kernels::linear_grad_weight(g.values(), n, out, xv.values(), input);
                        accumulate(&mut grads, *w, wv.shape(), dw);
                    }
                    if let Some(b) = b {
                        if self.rg(*b) {
                            let db = kernels::bias_grad(g.values(), n, out);
                            let shape = self.nodes[b.0].value.shape().to_vec();
                            accumulate(&mut grads, *b, &shape, db);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.rg(v) {
                            accumulate(&mut grads, v, g.shape(), g.values().to_vec());
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.shape(), g.values().to_vec());
                    }
                    if self.rg(*b) {
                        let neg = g.values().iter().map(|v| -v).collect();
                        accumulate(&mut grads, *b, g.shape(), neg);
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.values();
                    let bv = self.nodes[b.0].value.values();
                    if self.rg(*a) {
                        let d = g.values().iter().zip(bv).map(|(g, y)| g * y).collect();
                        accumulate(&mut grads, *a, g.shape(), d);
                    }
                    if self.rg(*b) {
                        let d = g.values().iter().zip(av).map(|(g, x)| g * x).collect();
                        accumulate(&mut grads, *b, g.shape(), d);
                    }
                }
                Op::Scale(a, c) => {
                    let d = g.values().iter().map(|v| c * v).collect();
                    accumulate(&mut grads, *a, g.shape(), d);
                }
                Op::Silu(a) => {
                    let av = self.nodes[a.0].value.values();
                    let d = g
                        .values()
                        .iter()
                        .zip(av)
                        .map(|(g, x)| g * kernels::silu_grad(*x))
                        .collect();
                    accumulate(&mut grads, *a, g.shape(), d);
                }
                Op::Softplus(a) => {
                    let av = self.nodes[a.0].value.values();
                    let d = g
                        .values()
                        .iter()
                        .zip(av)
                        .map(|(g, x)| g * kernels::sigmoid(*x))
                        .collect();
                    accumulate(&mut grads, *a, g.shape(), d);
                }
                Op::RowSqNorm(a) => {
                    let at = &self.nodes[a.0].value;
                    let c = at.cols();
                    let d = at
                        .values()
                        .iter()
                        .enumerate()
                        .map(|(k, x)| 2.0 * x * g.values()[k / c])
                        .collect();
                    accumulate(&mut grads, *a, at.shape(), d);
                }
                Op::WeightedMean(a, w) => {
                    let at = &self.nodes[a.0].value;
                    let n = at.len() as f64;
                    let gs = g.item();
                    let d = w.iter().map(|wi| gs * wi / n).collect();
                    accumulate(&mut grads, *a, at.shape(), d);
                }
                Op::Sum(a) => {
                    let at = &self.nodes[a.0].value;
                    let d = vec![g.item(); at.len()];
                    accumulate(&mut grads, *a, at.shape(), d);
                }
            }
        }
        Ok(Gradients(grads))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.values_mut().iter_mut().zip(&d) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d).expect("gradient shape"));
        }
    }
}
