//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Forward calls append one [`Record`] per primitive; [`Tape::backward`]
//! walks the records in reverse index order, so gradient accumulation is
//! deterministic and bit-reproducible.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::ops::{self, BroadcastPlan, ConvGeometry, LayerNormCache};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    /// Replaces the value; the shape must not change.
    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(shape_err!(
                "parameter `{}` is {:?}, new value is {:?}",
                self.name,
                self.value.shape(),
                value.shape()
            ));
        }
        self.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    /// Value and gradient together, for optimizer updates.
    pub fn value_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.value.data_mut(), self.grad.data_mut())
    }
}

/// Ordered, name-addressable collection of parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            grad: value.zeros_like(),
            value,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the parameter gradients of one backward pass into `grad`.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.param_grads() {
            let dst = self.params[id.0].grad.data_mut();
            for (d, s) in dst.iter_mut().zip(g.data()) {
                *d += s;
            }
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive identifiers. Leaves are `Input` and `Param`.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Param(ParamId),
    Reshape(Vec<usize>),
    Transpose,
    MatMul,
    Conv { stride: usize, pad: usize },
    GlobalAvgPool,
    GlobalMaxPool,
    ChannelMean,
    ChannelMax,
    ConcatChannels,
    Softmax { axis: usize },
    Sigmoid,
    Relu,
    Add,
    Mul,
    LayerNorm,
    Sum,
    Mse,
    BceWithLogits,
}

impl Op {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Param(_))
    }
}

/// The elementwise family exposed as a single entry point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Relu,
}

#[derive(Clone, Debug)]
enum Saved {
    Nothing,
    Cols(Vec<f64>),
    Argmax(Vec<usize>),
    Broadcast(BroadcastPlan),
    LayerNorm(LayerNormCache),
}

/// One primitive application.
#[derive(Clone, Debug)]
pub struct Record {
    op: Op,
    inputs: Vec<Var>,
    value: Tensor,
    saved: Saved,
}

impl Record {
    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

fn evaluate(op: &Op, xs: &[&Tensor]) -> Result<(Tensor, Saved)> {
    let nothing = |t: Tensor| (t, Saved::Nothing);
    Ok(match op {
        Op::Input | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::Reshape(shape) => nothing(xs[0].reshape(shape.clone())?),
        Op::Transpose => nothing(ops::transpose(xs[0])?),
        Op::MatMul => nothing(ops::matmul(xs[0], xs[1])?),
        Op::Conv { stride, pad } => {
            let (y, cols) = ops::conv2d(xs[0], xs[1], xs.get(2).copied(), *stride, *pad)?;
            (y, Saved::Cols(cols))
        }
        Op::GlobalAvgPool => nothing(ops::global_avg_pool(xs[0])?),
        Op::GlobalMaxPool => {
            let (y, arg) = ops::global_max_pool(xs[0])?;
            (y, Saved::Argmax(arg))
        }
        Op::ChannelMean => nothing(ops::channel_mean(xs[0])?),
        Op::ChannelMax => {
            let (y, arg) = ops::channel_max(xs[0])?;
            (y, Saved::Argmax(arg))
        }
        Op::ConcatChannels => nothing(ops::concat_channels(xs)?),
        Op::Softmax { axis } => nothing(ops::softmax(xs[0], *axis)?),
        Op::Sigmoid => nothing(ops::sigmoid(xs[0])),
        Op::Relu => nothing(ops::relu(xs[0])),
        Op::Add | Op::Mul => {
            let plan = ops::broadcast_plan(xs[0].shape(), xs[1].shape())?;
            let y = if *op == Op::Add {
                ops::binary(xs[0], xs[1], &plan, |a, b| a + b)?
            } else {
                ops::binary(xs[0], xs[1], &plan, |a, b| a * b)?
            };
            (y, Saved::Broadcast(plan))
        }
        Op::LayerNorm => {
            let (y, cache) = ops::layer_norm_cached(xs[0], xs[1], xs[2])?;
            (y, Saved::LayerNorm(cache))
        }
        Op::Sum => nothing(ops::sum(xs[0])),
        Op::Mse => nothing(ops::mse(xs[0], xs[1])?),
        Op::BceWithLogits => nothing(ops::bce_with_logits(xs[0], xs[1])?),
    })
}

/// Linear record of primitive applications for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
    param_vars: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor, saved: Saved) -> Var {
        self.records.push(Record {
            op,
            inputs,
            value,
            saved,
        });
        Var(self.records.len() - 1)
    }

    fn apply(&mut self, op: Op, inputs: Vec<Var>) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.records.len()) {
            return Err(Error::Usage(format!(
                "variable {} is not on this tape",
                bad.0
            )));
        }
        let xs: Vec<&Tensor> = inputs.iter().map(|v| &self.records[v.0].value).collect();
        let (value, saved) = evaluate(&op, &xs)?;
        Ok(self.push(op, inputs, value, saved))
    }

    /// Records a constant (non-parameter) tensor.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, Vec::new(), value, Saved::Nothing)
    }

    /// Records a parameter leaf. Repeated calls for the same id return the
    /// same variable, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(
            Op::Param(id),
            Vec::new(),
            store.value(id).clone(),
            Saved::Nothing,
        );
        self.param_vars.insert(id, v);
        v
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.apply(Op::Reshape(shape.into()), vec![x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Transpose, vec![x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, vec![a, b])
    }

    /// Square-kernel convolution; `w` is `[C_out, C_in, k, k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.apply(Op::Conv { stride, pad }, inputs)
    }

    /// 1×1 convolution; `w` is `[C_out, C_in]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (co, ci) = self.value(w).dims2()?;
        let w4 = self.reshape(w, [co, ci, 1, 1])?;
        self.conv2d(x, w4, bias, 1, 0)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::GlobalAvgPool, vec![x])
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::GlobalMaxPool, vec![x])
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::ChannelMean, vec![x])
    }

    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::ChannelMax, vec![x])
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::ConcatChannels, parts.to_vec())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Op::Softmax { axis }, vec![x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, vec![x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Relu, vec![x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, vec![a, b])
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Relu, None) => self.relu(a),
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (Elementwise::Mul, Some(b)) => self.mul(a, b),
            (Elementwise::Relu, Some(_)) => Err(Error::Usage("relu takes a single operand".into())),
            (_, None) => Err(Error::Usage(format!("{kind:?} needs two operands"))),
        }
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.apply(Op::LayerNorm, vec![x, gamma, beta])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sum, vec![x])
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.apply(Op::Mse, vec![pred, target])
    }

    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        self.apply(Op::BceWithLogits, vec![logits, target])
    }

    /// Re-evaluates every non-leaf record from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let value = if r.op.is_leaf() {
                r.value.clone()
            } else {
                let xs: Vec<&Tensor> = r.inputs.iter().map(|v| &values[v.0]).collect();
                evaluate(&r.op, &xs)?.0
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Gradients of the scalar `output` with respect to every record.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if output.0 >= self.records.len() {
            return Err(Error::Usage(format!(
                "output variable {} is not on this tape",
                output.0
            )));
        }
        if self.records[output.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.records[output.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.records.len()];
        grads[output.0] = Some(Tensor::ones(self.records[output.0].value.shape().to_vec())?);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let record = &self.records[i];
            if !record.op.is_leaf() {
                let input_grads = self.local_backward(record, &g)?;
                for (v, ig) in record.inputs.iter().zip(input_grads) {
                    if let Some(ig) = ig {
                        accumulate(&mut grads[v.0], ig);
                    }
                }
            }
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<std::collections::BTreeMap<_, _>>()
            .into_iter()
            .collect();
        Ok(Gradients { grads, params })
    }

    fn local_backward(&self, r: &Record, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = |k: usize| &self.records[r.inputs[k].0].value;
        let y = &r.value;
        Ok(match (&r.op, &r.saved) {
            (Op::Reshape(_), _) => vec![Some(g.reshape(x(0).shape().to_vec())?)],
            (Op::Transpose, _) => vec![Some(ops::transpose(g)?)],
            (Op::MatMul, _) => {
                let (m, k) = x(0).dims2()?;
                let (_, n) = x(1).dims2()?;
                let mut da = vec![0.0; m * k];
                ops::gemm(m, n, k, g.data(), false, x(1).data(), true, &mut da, false);
                let mut db = vec![0.0; k * n];
                ops::gemm(k, m, n, x(0).data(), true, g.data(), false, &mut db, false);
                vec![
                    Some(Tensor::new([m, k], da)?),
                    Some(Tensor::new([k, n], db)?),
                ]
            }
            (Op::Conv { stride, pad }, Saved::Cols(cols)) => {
                let geo = ConvGeometry::new(x(0), x(1), *stride, *pad)?;
                let (co, patch, p) = (geo.out_channels, geo.patch_len(), geo.out_pixels());
                let mut dw = vec![0.0; co * patch];
                ops::gemm(co, p, patch, g.data(), false, cols, true, &mut dw, false);
                let mut dcols = vec![0.0; patch * p];
                ops::gemm(
                    patch,
                    co,
                    p,
                    x(1).data(),
                    true,
                    g.data(),
                    false,
                    &mut dcols,
                    false,
                );
                let dx = if geo.kernel == 1 && geo.stride == 1 && geo.pad == 0 {
                    dcols
                } else {
                    ops::col2im(&dcols, &geo)
                };
                let mut out = vec![
                    Some(Tensor::new(x(0).shape().to_vec(), dx)?),
                    Some(Tensor::new(x(1).shape().to_vec(), dw)?),
                ];
                if r.inputs.len() == 3 {
                    let db = g.data().chunks(p).map(|row| row.iter().sum()).collect();
                    out.push(Some(Tensor::new([co], db)?));
                }
                out
            }
            (Op::GlobalAvgPool, _) => {
                let (c, h, w) = x(0).dims3()?;
                let hw = (h * w) as f64;
                let dx = Tensor::from_fn([c, h, w], |i| g.data()[i / (h * w)] / hw)?;
                vec![Some(dx)]
            }
            (Op::GlobalMaxPool | Op::ChannelMax, Saved::Argmax(arg)) => {
                let mut dx = x(0).zeros_like();
                for (gi, &j) in g.data().iter().zip(arg) {
                    dx.data_mut()[j] += gi;
                }
                vec![Some(dx)]
            }
            (Op::ChannelMean, _) => {
                let (c, h, w) = x(0).dims3()?;
                let hw = h * w;
                let dx = Tensor::from_fn([c, h, w], |i| g.data()[i % hw] / c as f64)?;
                vec![Some(dx)]
            }
            (Op::ConcatChannels, _) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(r.inputs.len());
                for k in 0..r.inputs.len() {
                    let n = x(k).numel();
                    out.push(Some(Tensor::new(
                        x(k).shape().to_vec(),
                        g.data()[offset..offset + n].to_vec(),
                    )?));
                    offset += n;
                }
                out
            }
            (Op::Softmax { axis }, _) => vec![Some(ops::softmax_backward(y, g, *axis)?)],
            (Op::Sigmoid, _) => {
                let dx = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(s, gi)| gi * s * (1.0 - s));
                vec![Some(Tensor::new(y.shape().to_vec(), dx.collect())?)]
            }
            (Op::Relu, _) => {
                let dx = x(0)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 });
                vec![Some(Tensor::new(y.shape().to_vec(), dx.collect())?)]
            }
            (Op::Add, Saved::Broadcast(plan)) => vec![
                Some(ops::reduce_to(g.data(), &plan.a_map, x(0).shape())?),
                Some(ops::reduce_to(g.data(), &plan.b_map, x(1).shape())?),
            ],
            (Op::Mul, Saved::Broadcast(plan)) => {
                let (a, b) = (x(0), x(1));
                let pick = |t: &Tensor, map: &Option<Vec<usize>>, i: usize| match map {
                    Some(m) => t.data()[m[i]],
                    None => t.data()[i],
                };
                let ga: Vec<f64> = (0..g.numel())
                    .map(|i| g.data()[i] * pick(b, &plan.b_map, i))
                    .collect();
                let gb: Vec<f64> = (0..g.numel())
                    .map(|i| g.data()[i] * pick(a, &plan.a_map, i))
                    .collect();
                vec![
                    Some(ops::reduce_to(&ga, &plan.a_map, a.shape())?),
                    Some(ops::reduce_to(&gb, &plan.b_map, b.shape())?),
                ]
            }
            (Op::LayerNorm, Saved::LayerNorm(cache)) => {
                let gamma = x(1);
                let n = y.numel() as f64;
                let xhat = &cache.normalized;
                let dxhat: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(gamma.data())
                    .map(|(a, b)| a * b)
                    .collect();
                let sum_d: f64 = dxhat.iter().sum();
                let sum_dx: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
                let dx = dxhat
                    .iter()
                    .zip(xhat)
                    .map(|(d, xh)| cache.inv_std / n * (n * d - sum_d - xh * sum_dx))
                    .collect();
                let dgamma = g.data().iter().zip(xhat).map(|(a, b)| a * b).collect();
                let shape = y.shape().to_vec();
                vec![
                    Some(Tensor::new(shape.clone(), dx)?),
                    Some(Tensor::new(shape, dgamma)?),
                    Some(g.clone()),
                ]
            }
            (Op::Sum, _) => vec![Some(Tensor::full(x(0).shape().to_vec(), g.item()?)?)],
            (Op::Mse, _) => {
                let (p, t) = (x(0), x(1));
                let scale = 2.0 * g.item()? / p.numel() as f64;
                let dp: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                let dt = dp.iter().map(|v| -v).collect();
                vec![
                    Some(Tensor::new(p.shape().to_vec(), dp)?),
                    Some(Tensor::new(t.shape().to_vec(), dt)?),
                ]
            }
            (Op::BceWithLogits, _) => {
                let (l, t) = (x(0), x(1));
                let scale = g.item()? / l.numel() as f64;
                let dl = l
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| scale * (ops::sigmoid_scalar(a) - b))
                    .collect();
                let dt = l.data().iter().map(|a| -scale * a).collect();
                vec![
                    Some(Tensor::new(l.shape().to_vec(), dl)?),
                    Some(Tensor::new(t.shape().to_vec(), dt)?),
                ]
            }
            (op, _) => unreachable!("missing saved state for {op:?}"),
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
        None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`, if `v` influences it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients in ascending parameter-id order.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_fn([2, 3], |i| i as f64 - 2.0).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_gradient_closed_form() {
        let xt = Tensor::from_fn([5], |i| i as f64 * 0.7 - 1.5).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(xt.clone());
        let s = tape.sigmoid(x).unwrap();
        let out = tape.sum(s).unwrap();
        let g = tape.backward(out).unwrap();
        for (gv, &xv) in g.get(x).unwrap().data().iter().zip(xt.data()) {
            let sv = ops::sigmoid_scalar(xv);
            assert!((gv - sv * (1.0 - sv)).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_outputs() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros([3]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
        assert!(matches!(tape.backward(Var(17)), Err(Error::Usage(_))));
    }

    #[test]
    fn shared_parameter_accumulates_once_per_use() {
        let mut store = ParamStore::new();
        let id = store
            .add("w", Tensor::new([2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let w1 = tape.param(&store, id);
        let w2 = tape.param(&store, id);
        assert_eq!(w1, w2);
        let prod = tape.mul(w1, w2).unwrap();
        let out = tape.sum(prod).unwrap();
        let grads = tape.backward(out).unwrap();
        store.accumulate(&grads);
        assert_eq!(store.grad(id).data(), &[2.0, 4.0]);
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_fn([2, 3, 3], |i| (i as f64).sin()).unwrap());
        let w = tape.input(Tensor::from_fn([4, 2, 3, 3], |i| (i as f64 * 0.3).cos()).unwrap());
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        let y = tape.relu(y).unwrap();
        let p = tape.global_avg_pool(y).unwrap();
        let z = tape.mul(p, y).unwrap();
        tape.sum(z).unwrap();
        let replayed = tape.replay().unwrap();
        for (r, v) in tape.records().iter().zip(&replayed) {
            assert_eq!(r.value(), v);
        }
    }

    #[test]
    fn elementwise_dispatch_validates_arity() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.elementwise(Elementwise::Relu, a, None).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        assert!(tape.elementwise(Elementwise::Add, a, None).is_err());
        assert!(tape.elementwise(Elementwise::Relu, a, Some(a)).is_err());
    }
}
