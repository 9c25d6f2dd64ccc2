//! A recording tape over the kernels in [`ops`](super::ops).
//!
//! Values are appended as operations run; [`Graph::backward`] walks the tape
//! in reverse, accumulating gradients for values consumed more than once
//! and for parameters referenced from several places (shared weights).

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::tensor::{Grads, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Conv2d {
        input: Var,
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: ParamId,
        bias: ParamId,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Flatten {
        input: Var,
    },
}

#[derive(Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn conv2d(
        &mut self,
        params: &ParamStore,
        input: Var,
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let y = ops::conv2d(
            self.value(input),
            params.value(weight),
            params.value(bias),
            stride,
            padding,
        )?;
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            y,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (y, argmax) = ops::maxpool2d(self.value(input), kernel, stride)?;
        Ok(self.push(Op::MaxPool2d { input, argmax }, y))
    }

    pub fn linear(
        &mut self,
        params: &ParamStore,
        input: Var,
        weight: ParamId,
        bias: ParamId,
    ) -> Result<Var> {
        let y = ops::linear(self.value(input), params.value(weight), params.value(bias))?;
        Ok(self.push(
            Op::Linear {
                input,
                weight,
                bias,
            },
            y,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let y = ops::leaky_relu(self.value(input), slope);
        self.push(Op::LeakyRelu { input, slope }, y)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let y = ops::sigmoid(self.value(input));
        self.push(Op::Sigmoid { input }, y)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(Op::Concat { a, b }, y))
    }

    /// Collapses every axis after the batch axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.shape()[0];
        let f = x.len() / n;
        let y = x.clone().reshape(&[n, f])?;
        Ok(self.push(Op::Flatten { input }, y))
    }

    /// Backpropagates `seed` (the gradient of the objective with respect to
    /// `output`) and returns gradients for every parameter reached.
    ///
    /// Also returns input gradients, indexed like the recorded values, for
    /// callers that need them (gradient checks, perturbation tests).
    pub fn backward(
        &self,
        params: &ParamStore,
        output: Var,
        seed: Tensor,
    ) -> Result<(Grads, Vec<Option<Tensor>>)> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::dim(format!(
                "backward seed {:?} does not match output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        let mut pgrads: Vec<Option<Tensor>> = vec![None; params.len()];
        grads[output.0] = Some(seed);

        fn add(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Input => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let (gi, gw, gb) = ops::conv2d_backward(
                        self.value(*input),
                        params.value(*weight),
                        &g,
                        *stride,
                        *padding,
                    )?;
                    add(&mut grads[input.0], gi)?;
                    add(&mut pgrads[weight.0], gw)?;
                    add(&mut pgrads[bias.0], gb)?;
                }
                Op::MaxPool2d { input, argmax } => {
                    let gi = ops::maxpool2d_backward(self.value(*input).shape(), argmax, &g);
                    add(&mut grads[input.0], gi)?;
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let (gi, gw, gb) =
                        ops::linear_backward(self.value(*input), params.value(*weight), &g)?;
                    add(&mut grads[input.0], gi)?;
                    add(&mut pgrads[weight.0], gw)?;
                    add(&mut pgrads[bias.0], gb)?;
                }
                Op::LeakyRelu { input, slope } => {
                    let gi = ops::leaky_relu_backward(self.value(*input), *slope, &g);
                    add(&mut grads[input.0], gi)?;
                }
                Op::Sigmoid { input } => {
                    let gi = ops::sigmoid_backward(&self.values[idx], &g);
                    add(&mut grads[input.0], gi)?;
                }
                Op::Concat { a, b } => {
                    let ca = self.value(*a).dims4()?.1;
                    let (ga, gb) = ops::concat_channels_backward(&g, ca)?;
                    add(&mut grads[a.0], ga)?;
                    add(&mut grads[b.0], gb)?;
                }
                Op::Flatten { input } => {
                    let shape = self.value(*input).shape().to_vec();
                    add(&mut grads[input.0], g.reshape(&shape)?)?;
                }
            }
        }
        Ok((Grads(pgrads), grads))
    }
}
