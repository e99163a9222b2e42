use super::{Activation, Real, Tensor};
use crate::error::{Error, Result};

/// Fully-connected layer; `weights` is `[nOut, nIn]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayerState<T> {
    pub weights: Tensor<T>,
    pub biases: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayerState<T> {
    pub fn new(weights: Tensor<T>, biases: Vec<T>, activation: Activation) -> Result<Self> {
        let &[n_out, _] = weights.shape() else {
            return Err(Error::shape(format!(
                "dense weights must be [nOut, nIn], got {:?}",
                weights.shape()
            )));
        };
        if biases.len() != n_out {
            return Err(Error::shape(format!(
                "{} biases for {n_out} outputs",
                biases.len()
            )));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn n_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcBackward<T> {
    pub input_grad: Vec<T>,
    pub weight_grad: Tensor<T>,
    pub bias_grad: Vec<T>,
}

/// out = act(W . input + bias)
pub fn fc_forward<T: Real>(layer: &DenseLayerState<T>, input: &[T]) -> Result<Vec<T>> {
    if input.len() != layer.n_in() {
        return Err(Error::shape(format!(
            "dense layer expects {} inputs, got {}",
            layer.n_in(),
            input.len()
        )));
    }
    Ok(forward_unchecked(layer, input))
}

pub(crate) fn forward_unchecked<T: Real>(layer: &DenseLayerState<T>, input: &[T]) -> Vec<T> {
    let n_in = layer.n_in();
    layer
        .weights
        .data()
        .chunks_exact(n_in)
        .zip(&layer.biases)
        .map(|(row, &b)| {
            let z = row.iter().zip(input).fold(T::zero(), |a, (&w, &x)| a + w * x);
            layer.activation.apply(z + b)
        })
        .collect()
}

/// Input-gradient routing: `W^T . delta`.
pub(crate) fn route<T: Real>(layer: &DenseLayerState<T>, delta: &[T]) -> Vec<T> {
    let n_in = layer.n_in();
    let mut ig = vec![T::zero(); n_in];
    for (row, &d) in layer.weights.data().chunks_exact(n_in).zip(delta) {
        for (g, &w) in ig.iter_mut().zip(row) {
            *g += w * d;
        }
    }
    ig
}

/// Accumulates `delta (x) input` and `delta` into the gradient buffers.
pub(crate) fn weight_grad_acc<T: Real>(
    input: &[T],
    delta: &[T],
    weight_grad: &mut [T],
    bias_grad: &mut [T],
) {
    let n_in = input.len();
    for ((row, &d), bg) in weight_grad
        .chunks_exact_mut(n_in)
        .zip(delta)
        .zip(bias_grad.iter_mut())
    {
        for (g, &x) in row.iter_mut().zip(input) {
            *g += d * x;
        }
        *bg += d;
    }
}

/// Adjoint of [`fc_forward`]. `output` is the activated forward output.
pub fn fc_backward<T: Real>(
    layer: &DenseLayerState<T>,
    input: &[T],
    output: &[T],
    output_grad: &[T],
) -> Result<FcBackward<T>> {
    let (n_out, n_in) = (layer.n_out(), layer.n_in());
    if input.len() != n_in || output.len() != n_out || output_grad.len() != n_out {
        return Err(Error::shape(format!(
            "dense backward: layer {n_out}x{n_in}, input {}, output {}, gradient {}",
            input.len(),
            output.len(),
            output_grad.len()
        )));
    }
    let delta = super::conv::activation_delta(layer.activation, output, output_grad);
    let mut weight_grad = Tensor::zeros(&[n_out, n_in]);
    let mut bias_grad = vec![T::zero(); n_out];
    weight_grad_acc(input, &delta, weight_grad.data_mut(), &mut bias_grad);
    Ok(FcBackward {
        input_grad: route(layer, &delta),
        weight_grad,
        bias_grad,
    })
}
