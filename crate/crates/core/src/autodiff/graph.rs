//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. All
//! activations carry a leading batch axis: dense layers take `[N, features]`
//! and 3D convolutions take `[N, C, D, H, W]`. Parameters are borrowed from
//! a [`ParamSet`] rather than copied, so building a graph over a large
//! network costs only the activations.

use super::conv::{Conv3dSpec, ConvGeometry};
use super::scalar::gemm;
use super::{ParamGrads, ParamId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs in BCE.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    /// ELU with alpha = 1.
    Elu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Elu => {
                if x > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Flatten {
        input: Var,
    },
    Concat {
        left: Var,
        right: Var,
    },
    MaskedMse {
        q: Var,
        actions: Vec<usize>,
    },
    Bce {
        p: Var,
        labels: Vec<T>,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameter nodes, whose values live in the borrowed set.
    value: Option<Tensor<T>>,
    requires_grad: bool,
    /// Extra per-op data needed by backward (MSE residuals, clamped BCE probs).
    aux: Vec<T>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: ParamGrads<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. a node, if it required one.
    pub fn of(&self, var: Var) -> Option<&[T]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        let node = &self.nodes[var.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool, aux: Vec<T>) -> Var {
        self.nodes.push(Node { op, value: Some(value), requires_grad, aux });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false, Vec::new())
    }

    /// Input whose gradient should be reported by [`Graph::backward`].
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true, Vec::new())
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None, requires_grad: true, aux: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    /// Batched 3D cross-correlation: `[N, Ci, D, H, W]` → `[N, Co, D', H', W']`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, spec: Conv3dSpec) -> Result<Var> {
        spec.validate()?;
        let x = self.value(input);
        if x.rank() != 5 || x.shape()[1] != spec.in_channels {
            return Err(Error::invalid(format!(
                "conv3d expects [N, {}, D, H, W] input, got {:?}",
                spec.in_channels,
                x.shape()
            )));
        }
        if self.value(weight).shape() != spec.weight_shape().as_slice() {
            return Err(Error::invalid(format!(
                "conv3d weight shape {:?} does not match spec {:?}",
                self.value(weight).shape(),
                spec.weight_shape()
            )));
        }
        if self.value(bias).shape() != [spec.out_channels] {
            return Err(Error::invalid(format!(
                "conv3d bias shape {:?}, expected [{}]",
                self.value(bias).shape(),
                spec.out_channels
            )));
        }
        let n = x.shape()[0];
        let geom = ConvGeometry::new(spec, [x.shape()[2], x.shape()[3], x.shape()[4]])?;
        let k = spec.patch_len();
        let p = geom.positions();
        let co = spec.out_channels;
        let in_len = geom.input_len();

        let mut cols = vec![T::zero(); n * k * p];
        let mut out = vec![T::zero(); n * co * p];
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        for s in 0..n {
            let sample_cols = &mut cols[s * k * p..(s + 1) * k * p];
            geom.im2col(&x.data()[s * in_len..(s + 1) * in_len], sample_cols);
            let sample_out = &mut out[s * co * p..(s + 1) * co * p];
            for (c, chunk) in sample_out.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[c]);
            }
            gemm(false, false, co, p, k, w, sample_cols, T::one(), sample_out);
        }
        let [od, oh, ow] = geom.output;
        let value = Tensor::new(vec![n, co, od, oh, ow], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(Op::Conv3d { input, weight, bias, geom, cols }, value, rg, Vec::new()))
    }

    /// Affine map `x·Wᵀ + b` on `[N, n]` with `W: [m, n]`, `b: [m]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.rank() != 2 || w.rank() != 2 || w.shape()[1] != x.shape()[1] || b.shape() != [w.shape()[0]] {
            return Err(Error::invalid(format!(
                "dense: input {:?}, weight {:?}, bias {:?} do not agree",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let (n, inf, outf) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let mut out = Vec::with_capacity(n * outf);
        for _ in 0..n {
            out.extend_from_slice(b.data());
        }
        gemm(false, true, n, outf, inf, x.data(), w.data(), T::one(), &mut out);
        let value = Tensor::new(vec![n, outf], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(Op::Dense { input, weight, bias }, value, rg, Vec::new()))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[input]);
        self.push(Op::Activation { input, kind }, value, rg, Vec::new())
    }

    /// Collapses everything after the batch axis: `[N, ...]` → `[N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let n = x.shape()[0];
        let rest = x.len() / n;
        let value = Tensor::new(vec![n, rest], x.data().to_vec()).expect("same length");
        let rg = self.needs(&[input]);
        self.push(Op::Flatten { input }, value, rg, Vec::new())
    }

    /// Feature-axis concatenation of two `[N, *]` matrices.
    pub fn concat(&mut self, left: Var, right: Var) -> Result<Var> {
        let a = self.value(left);
        let b = self.value(right);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
            return Err(Error::invalid(format!(
                "concat: incompatible shapes {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (n, p, q) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Vec::with_capacity(n * (p + q));
        for s in 0..n {
            out.extend_from_slice(&a.data()[s * p..(s + 1) * p]);
            out.extend_from_slice(&b.data()[s * q..(s + 1) * q]);
        }
        let value = Tensor::new(vec![n, p + q], out)?;
        let rg = self.needs(&[left, right]);
        Ok(self.push(Op::Concat { left, right }, value, rg, Vec::new()))
    }

    /// Mean over the batch of `(q[i, actions[i]] - targets[i])²`.
    ///
    /// Only the selected output of each row receives gradient.
    pub fn masked_mse(&mut self, q: Var, actions: &[usize], targets: &[T]) -> Result<Var> {
        let qv = self.value(q);
        if qv.rank() != 2 || qv.shape()[0] != actions.len() || actions.len() != targets.len() {
            return Err(Error::invalid(format!(
                "masked_mse: q {:?} with {} actions and {} targets",
                qv.shape(),
                actions.len(),
                targets.len()
            )));
        }
        let width = qv.shape()[1];
        if let Some(&a) = actions.iter().find(|&&a| a >= width) {
            return Err(Error::invalid(format!("masked_mse: action {a} out of range for {width} outputs")));
        }
        let n = T::lit(actions.len() as f64);
        let residuals: Vec<T> = actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&a, &t))| qv.data()[i * width + a] - t)
            .collect();
        let loss = residuals.iter().map(|&r| r * r).sum::<T>() / n;
        let rg = self.needs(&[q]);
        Ok(self.push(Op::MaskedMse { q, actions: actions.to_vec() }, Tensor::scalar(loss), rg, residuals))
    }

    /// Mean binary cross-entropy of probabilities `p` (any shape with one
    /// value per label) against `labels` in {0, 1}.
    pub fn bce(&mut self, p: Var, labels: &[T]) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != labels.len() {
            return Err(Error::invalid(format!(
                "bce: {} probabilities for {} labels",
                pv.len(),
                labels.len()
            )));
        }
        let eps = T::lit(BCE_EPS);
        let clamped: Vec<T> = pv.data().iter().map(|&x| x.max(eps).min(T::one() - eps)).collect();
        let n = T::lit(labels.len() as f64);
        let loss = clamped
            .iter()
            .zip(labels)
            .map(|(&pc, &y)| -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln()))
            .sum::<T>()
            / n;
        let rg = self.needs(&[p]);
        Ok(self.push(Op::Bce { p, labels: labels.to_vec() }, Tensor::scalar(loss), rg, clamped))
    }

    /// `Σ wᵢ·xᵢ` over all elements of `input`.
    pub fn weighted_sum(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(Error::invalid(format!(
                "weighted_sum: {} values, {} weights",
                x.len(),
                weights.len()
            )));
        }
        let s = x.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let rg = self.needs(&[input]);
        Ok(self.push(Op::WeightedSum { input, weights: weights.to_vec() }, Tensor::scalar(s), rg, Vec::new()))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Vec<T>>> = (0..self.params.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    add_into(&mut param_grads[id.0], &g);
                }
                Op::Conv3d { input, weight, bias, geom, cols } => {
                    self.conv3d_backward(&g, *input, *weight, *bias, geom, cols, &mut grads);
                }
                Op::Dense { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (n, inf, outf) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                    if self.nodes[weight.0].requires_grad {
                        let mut dw = vec![T::zero(); outf * inf];
                        gemm(true, false, outf, inf, n, &g, x.data(), T::zero(), &mut dw);
                        add_into(&mut grads[weight.0], &dw);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![T::zero(); outf];
                        for row in g.chunks(outf) {
                            db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                        }
                        add_into(&mut grads[bias.0], &db);
                    }
                    if self.nodes[input.0].requires_grad {
                        let mut dx = vec![T::zero(); n * inf];
                        gemm(false, false, n, inf, outf, &g, w.data(), T::zero(), &mut dx);
                        add_into(&mut grads[input.0], &dx);
                    }
                }
                Op::Activation { input, kind } => {
                    let x = self.value(*input).data();
                    let y = node.value.as_ref().expect("activation value").data();
                    let dx: Vec<T> = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                        .collect();
                    add_into(&mut grads[input.0], &dx);
                }
                Op::Flatten { input } => {
                    add_into(&mut grads[input.0], &g);
                }
                Op::Concat { left, right } => {
                    let p = self.value(*left).shape()[1];
                    let q = self.value(*right).shape()[1];
                    let mut da = Vec::with_capacity(g.len() / (p + q) * p);
                    let mut db = Vec::with_capacity(g.len() / (p + q) * q);
                    for row in g.chunks(p + q) {
                        da.extend_from_slice(&row[..p]);
                        db.extend_from_slice(&row[p..]);
                    }
                    if self.nodes[left.0].requires_grad {
                        add_into(&mut grads[left.0], &da);
                    }
                    if self.nodes[right.0].requires_grad {
                        add_into(&mut grads[right.0], &db);
                    }
                }
                Op::MaskedMse { q, actions } => {
                    let qv = self.value(*q);
                    let width = qv.shape()[1];
                    let scale = g[0] * T::lit(2.0) / T::lit(actions.len() as f64);
                    let mut dq = vec![T::zero(); qv.len()];
                    for (row, (&a, &r)) in actions.iter().zip(&node.aux).enumerate() {
                        dq[row * width + a] = scale * r;
                    }
                    add_into(&mut grads[q.0], &dq);
                }
                Op::Bce { p, labels } => {
                    let pv = self.value(*p).data();
                    let scale = g[0] / T::lit(labels.len() as f64);
                    let dp: Vec<T> = pv
                        .iter()
                        .zip(node.aux.iter().zip(labels))
                        .map(|(&raw, (&pc, &y))| {
                            if raw != pc {
                                // clamped: locally constant
                                T::zero()
                            } else {
                                scale * (-y / pc + (T::one() - y) / (T::one() - pc))
                            }
                        })
                        .collect();
                    add_into(&mut grads[p.0], &dp);
                }
                Op::WeightedSum { input, weights } => {
                    let dx: Vec<T> = weights.iter().map(|&w| w * g[0]).collect();
                    add_into(&mut grads[input.0], &dx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads, params: ParamGrads(param_grads) })
    }

    #[allow(clippy::too_many_arguments)]
    fn conv3d_backward(
        &self,
        g: &[T],
        input: Var,
        weight: Var,
        bias: Var,
        geom: &ConvGeometry,
        cols: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let spec = geom.spec;
        let k = spec.patch_len();
        let p = geom.positions();
        let co = spec.out_channels;
        let n = g.len() / (co * p);
        let w = self.value(weight).data();

        if self.nodes[weight.0].requires_grad {
            let mut dw = vec![T::zero(); co * k];
            for s in 0..n {
                gemm(
                    false,
                    true,
                    co,
                    k,
                    p,
                    &g[s * co * p..(s + 1) * co * p],
                    &cols[s * k * p..(s + 1) * k * p],
                    T::one(),
                    &mut dw,
                );
            }
            add_into(&mut grads[weight.0], &dw);
        }
        if self.nodes[bias.0].requires_grad {
            let mut db = vec![T::zero(); co];
            for sample in g.chunks(co * p) {
                for (c, chunk) in sample.chunks(p).enumerate() {
                    db[c] += chunk.iter().copied().sum::<T>();
                }
            }
            add_into(&mut grads[bias.0], &db);
        }
        if self.nodes[input.0].requires_grad {
            let in_len = geom.input_len();
            let mut dx = vec![T::zero(); n * in_len];
            let mut dcols = vec![T::zero(); k * p];
            for s in 0..n {
                gemm(true, false, k, p, co, w, &g[s * co * p..(s + 1) * co * p], T::zero(), &mut dcols);
                geom.col2im_add(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
            }
            add_into(&mut grads[input.0], &dx);
        }
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}
