use serde::{Deserialize, Serialize};

use super::{Activation, Real, Tensor};
use crate::error::{Error, Result};
use crate::gabor::EntryId;

/// Where the values of one (outMap, inMap) kernel slot come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelOrigin {
    /// Private kernel, updated by its own gradient.
    Owned,
    /// Copy of a shared kernel-bank entry.
    Shared(EntryId),
}

/// Weights of a convolutional layer.
///
/// `kernels` has shape `[outMaps, inMaps, k, k]`; slot `(j, i)` is stored at
/// index `j * inMaps + i` of `origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerState<T> {
    pub kernels: Tensor<T>,
    pub biases: Vec<T>,
    pub origin: Vec<KernelOrigin>,
    pub activation: Activation,
}

impl<T: Real> ConvLayerState<T> {
    pub fn new(kernels: Tensor<T>, biases: Vec<T>, activation: Activation) -> Result<Self> {
        let shape = kernels.shape();
        if shape.len() != 4 {
            return Err(Error::shape(format!(
                "conv kernels must be [out, in, k, k], got {shape:?}"
            )));
        }
        let (out, inp, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!("kernel extent {kh}x{kw} must be odd")));
        }
        if biases.len() != out {
            return Err(Error::shape(format!(
                "{} biases for {out} output maps",
                biases.len()
            )));
        }
        Ok(Self {
            kernels,
            biases,
            origin: vec![KernelOrigin::Owned; out * inp],
            activation,
        })
    }

    pub fn out_maps(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_maps(&self) -> usize {
        self.kernels.shape()[1]
    }

    /// Kernel extent as (rows, cols).
    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    pub fn kernel_area(&self) -> usize {
        let (kh, kw) = self.kernel_dims();
        kh * kw
    }

    pub fn slot_count(&self) -> usize {
        self.out_maps() * self.in_maps()
    }

    pub fn slot(&self, slot: usize) -> &[T] {
        let a = self.kernel_area();
        &self.kernels.data()[slot * a..(slot + 1) * a]
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut [T] {
        let a = self.kernel_area();
        &mut self.kernels.data_mut()[slot * a..(slot + 1) * a]
    }
}

/// Weight gradients of one conv layer. Masked slots have no entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeightGrads<T> {
    pub slots: Vec<Option<Vec<T>>>,
    pub biases: Vec<Option<T>>,
}

impl<T> ConvWeightGrads<T> {
    pub fn entry_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBackward<T> {
    pub input_grad: Tensor<T>,
    pub weights: ConvWeightGrads<T>,
}

// Raw kernels. `out` is (h-kh+1) x (w-kw+1).

/// out[y, x] += sum_{u,v} input[y+u, x+v] * kernel[u, v]
pub(crate) fn correlate_acc<T: Real>(
    input: &[T],
    (h, w): (usize, usize),
    kernel: &[T],
    (kh, kw): (usize, usize),
    out: &mut [T],
) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    for u in 0..kh {
        for v in 0..kw {
            let k = kernel[u * kw + v];
            for y in 0..oh {
                let src = &input[(y + u) * w + v..(y + u) * w + v + ow];
                let dst = &mut out[y * ow..(y + 1) * ow];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
}

/// grad[u, v] += sum_{y,x} input[y+u, x+v] * delta[y, x]
pub(crate) fn weight_grad_acc<T: Real>(
    input: &[T],
    (h, w): (usize, usize),
    delta: &[T],
    (kh, kw): (usize, usize),
    grad: &mut [T],
) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    for u in 0..kh {
        for v in 0..kw {
            let mut acc = T::zero();
            for y in 0..oh {
                let src = &input[(y + u) * w + v..(y + u) * w + v + ow];
                let d = &delta[y * ow..(y + 1) * ow];
                acc += src.iter().zip(d).fold(T::zero(), |a, (&s, &e)| a + s * e);
            }
            grad[u * kw + v] += acc;
        }
    }
}

/// in_grad[y+u, x+v] += kernel[u, v] * delta[y, x]
pub(crate) fn route_acc<T: Real>(
    delta: &[T],
    (h, w): (usize, usize),
    kernel: &[T],
    (kh, kw): (usize, usize),
    in_grad: &mut [T],
) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    for u in 0..kh {
        for v in 0..kw {
            let k = kernel[u * kw + v];
            for y in 0..oh {
                let d = &delta[y * ow..(y + 1) * ow];
                let dst = &mut in_grad[(y + u) * w + v..(y + u) * w + v + ow];
                for (g, &e) in dst.iter_mut().zip(d) {
                    *g += k * e;
                }
            }
        }
    }
}

/// Valid 2D cross-correlation of a single map with a single kernel.
pub fn conv2d_valid<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[h, w], &[kh, kw]) = (input.shape(), kernel.shape()) else {
        return Err(Error::shape(format!(
            "conv2d_valid expects 2-D operands, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    };
    if kh > h || kw > w {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(&[h - kh + 1, w - kw + 1]);
    correlate_acc(input.data(), (h, w), kernel.data(), (kh, kw), out.data_mut());
    Ok(out)
}

pub(crate) fn check_conv_input<T: Real>(
    state: &ConvLayerState<T>,
    inputs: &Tensor<T>,
) -> Result<(usize, usize)> {
    let &[c, h, w] = inputs.shape() else {
        return Err(Error::shape(format!(
            "conv layer input must be [maps, h, w], got {:?}",
            inputs.shape()
        )));
    };
    if c != state.in_maps() {
        return Err(Error::shape(format!(
            "conv layer expects {} input maps, got {c}",
            state.in_maps()
        )));
    }
    let (kh, kw) = state.kernel_dims();
    if kh > h || kw > w {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    Ok((h, w))
}

/// outputMap[j] = act(sum_i corr(inputs[i], kernels[j, i]) + bias[j])
pub fn conv_layer_forward<T: Real>(
    state: &ConvLayerState<T>,
    inputs: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w) = check_conv_input(state, inputs)?;
    Ok(forward_unchecked(state, inputs, (h, w)))
}

pub(crate) fn forward_unchecked<T: Real>(
    state: &ConvLayerState<T>,
    inputs: &Tensor<T>,
    (h, w): (usize, usize),
) -> Tensor<T> {
    let (kh, kw) = state.kernel_dims();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (m, c) = (state.out_maps(), state.in_maps());
    let mut out = Tensor::zeros(&[m, oh, ow]);
    let plane = oh * ow;
    for j in 0..m {
        let dst = &mut out.data_mut()[j * plane..(j + 1) * plane];
        for i in 0..c {
            correlate_acc(inputs.slab(i), (h, w), state.slot(j * c + i), (kh, kw), dst);
        }
        let b = state.biases[j];
        for v in dst.iter_mut() {
            *v = state.activation.apply(*v + b);
        }
    }
    out
}

/// Local error of a layer: upstream gradient times the activation derivative.
pub(crate) fn activation_delta<T: Real>(
    activation: Activation,
    outputs: &[T],
    output_grad: &[T],
) -> Vec<T> {
    outputs
        .iter()
        .zip(output_grad)
        .map(|(&y, &g)| g * activation.derivative_from_output(y))
        .collect()
}

/// Back-propagates one conv layer.
///
/// `outputs` is the activated forward output. The input gradient is always
/// computed over every slot; weight and bias gradients only for slots whose
/// mask entry is true (a map's bias when any of its slots is true).
pub fn conv_layer_backward<T: Real>(
    state: &ConvLayerState<T>,
    inputs: &Tensor<T>,
    outputs: &Tensor<T>,
    output_grad: &Tensor<T>,
    mask: &[bool],
) -> Result<ConvBackward<T>> {
    let (h, w) = check_conv_input(state, inputs)?;
    let (kh, kw) = state.kernel_dims();
    let (m, c) = (state.out_maps(), state.in_maps());
    let expected = [m, h - kh + 1, w - kw + 1];
    if output_grad.shape() != expected || outputs.shape() != expected {
        return Err(Error::shape(format!(
            "output gradient shape {:?} does not match forward output {expected:?}",
            output_grad.shape()
        )));
    }
    if mask.len() != m * c {
        return Err(Error::Policy(format!(
            "mask has {} entries for {} kernel slots",
            mask.len(),
            m * c
        )));
    }
    let delta = activation_delta(state.activation, outputs.data(), output_grad.data());
    let plane = expected[1] * expected[2];
    let mut input_grad = Tensor::zeros(&[c, h, w]);
    let area = kh * kw;
    let mut slots = vec![None; m * c];
    let mut biases = vec![None; m];
    for j in 0..m {
        let d = &delta[j * plane..(j + 1) * plane];
        for i in 0..c {
            let s = j * c + i;
            route_acc(
                d,
                (h, w),
                state.slot(s),
                (kh, kw),
                &mut input_grad.data_mut()[i * h * w..(i + 1) * h * w],
            );
            if mask[s] {
                let mut g = vec![T::zero(); area];
                weight_grad_acc(inputs.slab(i), (h, w), d, (kh, kw), &mut g);
                slots[s] = Some(g);
            }
        }
        if mask[j * c..(j + 1) * c].iter().any(|&b| b) {
            biases[j] = Some(d.iter().copied().sum());
        }
    }
    Ok(ConvBackward {
        input_grad,
        weights: ConvWeightGrads { slots, biases },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(k: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[k, k]);
        t.set(&[k / 2, k / 2], 1.0);
        t
    }

    #[test]
    fn valid_output_extent() {
        let input = Tensor::<f32>::zeros(&[28, 28]);
        let kernel = Tensor::<f32>::zeros(&[5, 5]);
        assert_eq!(conv2d_valid(&input, &kernel).unwrap().shape(), &[24, 24]);
    }

    #[test]
    fn impulse_kernel_crops_input() {
        let input = Tensor::from_fn(&[7, 9], |i| (i as f64).sin());
        let out = conv2d_valid(&input, &impulse(3)).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(out.at(&[y, x]), input.at(&[y + 1, x + 1]));
            }
        }
    }

    #[test]
    fn ones_on_ones() {
        let input = Tensor::<f64>::filled(&[3, 3], 1.0);
        let kernel = Tensor::<f64>::filled(&[2, 2], 1.0);
        let out = conv2d_valid(&input, &kernel).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn oversized_kernel_is_a_shape_error() {
        let input = Tensor::<f32>::zeros(&[3, 3]);
        let kernel = Tensor::<f32>::zeros(&[5, 5]);
        assert!(matches!(conv2d_valid(&input, &kernel), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_kernels_sigmoid_give_half() {
        let state = ConvLayerState::new(
            Tensor::<f32>::zeros(&[6, 1, 5, 5]),
            vec![0.0; 6],
            Activation::Sigmoid,
        )
        .unwrap();
        let input = Tensor::from_fn(&[1, 28, 28], |i| (i % 7) as f32 / 7.0);
        let out = conv_layer_forward(&state, &input).unwrap();
        assert_eq!(out.shape(), &[6, 24, 24]);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn impulse_kernels_superpose() {
        let mut kernels = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        kernels.set(&[0, 0, 1, 1], 1.0);
        kernels.set(&[0, 1, 1, 1], 1.0);
        let state = ConvLayerState::new(kernels, vec![0.0], Activation::Identity).unwrap();
        let input = Tensor::from_fn(&[2, 5, 5], |i| i as f64 * 0.5);
        let out = conv_layer_forward(&state, &input).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let expect = input.at(&[0, y + 1, x + 1]) + input.at(&[1, y + 1, x + 1]);
                assert_eq!(out.at(&[0, y, x]), expect);
            }
        }
    }

    #[test]
    fn input_map_mismatch() {
        let state = ConvLayerState::new(
            Tensor::<f32>::zeros(&[2, 3, 3, 3]),
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap();
        let input = Tensor::<f32>::zeros(&[2, 8, 8]);
        assert!(matches!(
            conv_layer_forward(&state, &input),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn even_kernels_rejected() {
        assert!(ConvLayerState::new(
            Tensor::<f32>::zeros(&[1, 1, 2, 2]),
            vec![0.0],
            Activation::Identity
        )
        .is_err());
    }

    fn random_layer() -> (ConvLayerState<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let kernels = Tensor::from_fn(&[2, 3, 3, 3], |i| ((i * 37 % 11) as f64 - 5.0) / 10.0);
        let state = ConvLayerState::new(kernels, vec![0.1, -0.2], Activation::Sigmoid).unwrap();
        let input = Tensor::from_fn(&[3, 6, 6], |i| ((i * 13 % 17) as f64) / 17.0);
        let out = conv_layer_forward(&state, &input).unwrap();
        let grad = Tensor::from_fn(&[2, 4, 4], |i| ((i * 7 % 5) as f64 - 2.0) / 3.0);
        (state, input, out, grad)
    }

    #[test]
    fn all_true_mask_gives_every_gradient() {
        let (state, input, out, grad) = random_layer();
        let b = conv_layer_backward(&state, &input, &out, &grad, &[true; 6]).unwrap();
        assert_eq!(b.weights.entry_count(), 6);
        assert!(b.weights.biases.iter().all(Option::is_some));
    }

    #[test]
    fn frozen_layer_still_routes_error() {
        let (state, input, out, grad) = random_layer();
        let frozen = conv_layer_backward(&state, &input, &out, &grad, &[false; 6]).unwrap();
        assert_eq!(frozen.weights.entry_count(), 0);
        assert!(frozen.weights.biases.iter().all(Option::is_none));
        assert!(frozen.input_grad.data().iter().any(|&v| v != 0.0));
        let full = conv_layer_backward(&state, &input, &out, &grad, &[true; 6]).unwrap();
        assert_eq!(frozen.input_grad, full.input_grad);
    }

    #[test]
    fn mask_length_mismatch_is_policy_error() {
        let (state, input, out, grad) = random_layer();
        assert!(matches!(
            conv_layer_backward(&state, &input, &out, &grad, &[true; 5]),
            Err(Error::Policy(_))
        ));
    }

    #[test]
    fn single_weight_matches_finite_difference() {
        let (state, input, out, grad) = random_layer();
        let b = conv_layer_backward(&state, &input, &out, &grad, &[true; 6]).unwrap();
        // loss = <grad, forward(state)>; d loss / d k[1,2,0,1]
        let loss = |s: &ConvLayerState<f64>| -> f64 {
            let o = conv_layer_forward(s, &input).unwrap();
            o.data().iter().zip(grad.data()).map(|(a, b)| a * b).sum()
        };
        let probe = 1 * 3 + 2;
        let tap = 1;
        let h = 1e-3;
        let mut plus = state.clone();
        plus.slot_mut(probe)[tap] += h;
        let mut minus = state.clone();
        minus.slot_mut(probe)[tap] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let analytic = b.weights.slots[probe].as_ref().unwrap()[tap];
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs());
        assert!(rel < 1e-4, "rel {rel}: fd {fd} vs {analytic}");
        let _ = out;
    }
}
