use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvLayerState};
use super::dense::{self, DenseLayerState};
use super::loss::{mse_loss, one_hot};
use super::{meanpool_backward, meanpool_forward, Activation, OpTally, Phase, Real, Tensor};
use crate::error::{Error, Result};

/// Extent of a stack of feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub maps: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn new(maps: usize, h: usize, w: usize) -> Self {
        Self { maps, h, w }
    }

    pub fn len(&self) -> usize {
        self.maps * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.maps, self.h, self.w]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { kernel: usize, maps: usize },
    MeanPool { factor: usize },
    FullyConnected { neurons: usize },
    Output { neurons: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(kernel: usize, maps: usize) -> Self {
        Self {
            kind: LayerKind::Conv { kernel, maps },
            activation: Activation::Sigmoid,
        }
    }

    pub fn pool(factor: usize) -> Self {
        Self {
            kind: LayerKind::MeanPool { factor },
            activation: Activation::Identity,
        }
    }

    pub fn fully_connected(neurons: usize) -> Self {
        Self {
            kind: LayerKind::FullyConnected { neurons },
            activation: Activation::Sigmoid,
        }
    }

    pub fn output(neurons: usize) -> Self {
        Self {
            kind: LayerKind::Output { neurons },
            activation: Activation::Sigmoid,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }
}

/// Layer stack plus input geometry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: Shape3, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// LeNet-style stack: `side^2 (5x5)k c 2s (5x5)2k c 2s classes o`.
    pub fn lenet(side: usize, k: usize, classes: usize) -> Result<Self> {
        Self::new(
            Shape3::new(1, side, side),
            vec![
                LayerSpec::conv(5, k),
                LayerSpec::pool(2),
                LayerSpec::conv(5, 2 * k),
                LayerSpec::pool(2),
                LayerSpec::output(classes),
            ],
        )
    }

    /// Output shape of every layer, validating the geometry chain.
    pub fn shapes(&self) -> Result<Vec<Shape3>> {
        if self.input.is_empty() {
            return Err(Error::shape("empty input geometry"));
        }
        let mut cur = self.input;
        let mut flat = false;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            if shapes.len() > 0 && matches!(self.layers[idx - 1].kind, LayerKind::Output { .. }) {
                return Err(Error::shape("no layer may follow the output layer"));
            }
            cur = match layer.kind {
                LayerKind::Conv { kernel, maps } => {
                    if flat {
                        return Err(Error::shape(format!(
                            "layer {idx}: convolution after a fully-connected layer"
                        )));
                    }
                    if kernel == 0 || kernel % 2 == 0 {
                        return Err(Error::shape(format!(
                            "layer {idx}: kernel extent {kernel} must be odd"
                        )));
                    }
                    if kernel > cur.h || kernel > cur.w || maps == 0 {
                        return Err(Error::shape(format!(
                            "layer {idx}: {kernel}x{kernel} kernel on {}x{} maps",
                            cur.h, cur.w
                        )));
                    }
                    Shape3::new(maps, cur.h - kernel + 1, cur.w - kernel + 1)
                }
                LayerKind::MeanPool { factor } => {
                    if flat {
                        return Err(Error::shape(format!(
                            "layer {idx}: pooling after a fully-connected layer"
                        )));
                    }
                    if factor == 0 || cur.h % factor != 0 || cur.w % factor != 0 {
                        return Err(Error::shape(format!(
                            "layer {idx}: {}x{} maps not divisible by pooling factor {factor}",
                            cur.h, cur.w
                        )));
                    }
                    Shape3::new(cur.maps, cur.h / factor, cur.w / factor)
                }
                LayerKind::FullyConnected { neurons } | LayerKind::Output { neurons } => {
                    if neurons == 0 {
                        return Err(Error::shape(format!("layer {idx}: zero neurons")));
                    }
                    flat = true;
                    Shape3::new(neurons, 1, 1)
                }
            };
            shapes.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec {
                kind: LayerKind::Output { .. },
                ..
            }) => Ok(shapes),
            _ => Err(Error::shape("network must end with an output layer")),
        }
    }

    /// Input shape of layer `idx`.
    pub fn input_of(&self, idx: usize, shapes: &[Shape3]) -> Shape3 {
        if idx == 0 {
            self.input
        } else {
            shapes[idx - 1]
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last().map(|l| l.kind) {
            Some(LayerKind::Output { neurons }) => neurons,
            _ => 0,
        }
    }

    pub fn conv_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayerState<T>),
    Pool { factor: usize },
    Dense(DenseLayerState<T>),
}

/// Activated output of every layer for one sample.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub outputs: Vec<Tensor<T>>,
}

impl<T: Real> Trace<T> {
    pub fn prediction(&self) -> &[T] {
        self.outputs.last().map(|t| t.data()).unwrap_or(&[])
    }
}

/// Which gradients a backward pass computes.
///
/// `masks[l]` is the per-slot weight-gradient mask of conv layer `l`. An input
/// gradient is produced for layer `l` only when some earlier layer has
/// trainable parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackwardPlan {
    pub masks: Vec<Option<Vec<bool>>>,
    pub needs_input_grad: Vec<bool>,
    pub has_trainable: Vec<bool>,
}

impl BackwardPlan {
    pub fn new(spec: &NetworkSpec, masks: Vec<Option<Vec<bool>>>) -> Result<Self> {
        let shapes = spec.shapes()?;
        if masks.len() != spec.layers.len() {
            return Err(Error::Policy(format!(
                "{} layer masks for {} layers",
                masks.len(),
                spec.layers.len()
            )));
        }
        let mut has_trainable = Vec::with_capacity(masks.len());
        for (idx, (layer, mask)) in spec.layers.iter().zip(&masks).enumerate() {
            let t = match (layer.kind, mask) {
                (LayerKind::Conv { maps, .. }, Some(m)) => {
                    let slots = maps * spec.input_of(idx, &shapes).maps;
                    if m.len() != slots {
                        return Err(Error::Policy(format!(
                            "layer {idx}: mask has {} entries for {slots} slots",
                            m.len()
                        )));
                    }
                    m.iter().any(|&b| b)
                }
                (LayerKind::Conv { .. }, None) => {
                    return Err(Error::Policy(format!("layer {idx}: conv layer without mask")))
                }
                (LayerKind::MeanPool { .. }, _) => false,
                _ => true,
            };
            has_trainable.push(t);
        }
        let needs_input_grad = (0..masks.len())
            .map(|l| has_trainable[..l].iter().any(|&t| t))
            .collect();
        Ok(Self {
            masks,
            needs_input_grad,
            has_trainable,
        })
    }

    /// Every parameter trainable.
    pub fn full(spec: &NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let masks = spec
            .layers
            .iter()
            .enumerate()
            .map(|(idx, l)| match l.kind {
                LayerKind::Conv { maps, .. } => {
                    Some(vec![true; maps * spec.input_of(idx, &shapes).maps])
                }
                _ => None,
            })
            .collect();
        Self::new(spec, masks)
    }

    /// Whether layer `l` forms its local error at all.
    pub fn needs_delta(&self, l: usize) -> bool {
        self.has_trainable[l] || self.needs_input_grad[l]
    }

    /// Whether map `j` of conv layer `l` has a trainable bias.
    pub fn bias_trainable(&self, l: usize, j: usize, in_maps: usize) -> bool {
        self.masks[l]
            .as_ref()
            .is_some_and(|m| m[j * in_maps..(j + 1) * in_maps].iter().any(|&b| b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerGradients<T> {
    Conv {
        kernels: Vec<T>,
        biases: Vec<T>,
        slot_mask: Vec<bool>,
        bias_mask: Vec<bool>,
    },
    Pool,
    Dense {
        weights: Vec<T>,
        biases: Vec<T>,
    },
}

/// Gradient sums over a mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGradients<T>>,
    pub samples: usize,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(net: &Network<T>, plan: &BackwardPlan) -> Self {
        let layers = net
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| match layer {
                Layer::Conv(c) => {
                    let slot_mask = plan.masks[l].clone().unwrap_or_default();
                    let bias_mask = (0..c.out_maps())
                        .map(|j| plan.bias_trainable(l, j, c.in_maps()))
                        .collect();
                    LayerGradients::Conv {
                        kernels: vec![T::zero(); c.kernels.len()],
                        biases: vec![T::zero(); c.out_maps()],
                        slot_mask,
                        bias_mask,
                    }
                }
                Layer::Pool { .. } => LayerGradients::Pool,
                Layer::Dense(d) => LayerGradients::Dense {
                    weights: vec![T::zero(); d.weights.len()],
                    biases: vec![T::zero(); d.n_out()],
                },
            })
            .collect();
        Self { layers, samples: 0 }
    }

    /// Per-parameter SGD step for a learning rate, averaging over the batch.
    pub fn step_size(&self, learning_rate: f64) -> T {
        T::from_f64(learning_rate / self.samples.max(1) as f64)
    }

    /// Slot mask of conv layer `l`, if any.
    pub fn slot_mask(&self, l: usize) -> Option<&[bool]> {
        match self.layers.get(l) {
            Some(LayerGradients::Conv { slot_mask, .. }) => Some(slot_mask),
            _ => None,
        }
    }
}

pub(crate) fn sgd_update<T: Real>(weights: &mut [T], grads: &[T], step: T) {
    for (w, &g) in weights.iter_mut().zip(grads) {
        *w -= step * g;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Uniform `[-r, r]` weights with `r = sqrt(6 / (fanIn + fanOut))`, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (idx, layer) in spec.layers.iter().enumerate() {
            let input = spec.input_of(idx, &shapes);
            layers.push(match layer.kind {
                LayerKind::Conv { kernel, maps } => {
                    let area = kernel * kernel;
                    let r = (6.0 / ((input.maps + maps) * area) as f64).sqrt();
                    let kernels = Tensor::from_fn(&[maps, input.maps, kernel, kernel], |_| {
                        T::from_f64(rng.gen_range(-r..r))
                    });
                    Layer::Conv(ConvLayerState::new(
                        kernels,
                        vec![T::zero(); maps],
                        layer.activation,
                    )?)
                }
                LayerKind::MeanPool { factor } => Layer::Pool { factor },
                LayerKind::FullyConnected { neurons } | LayerKind::Output { neurons } => {
                    let n_in = input.len();
                    let r = (6.0 / (n_in + neurons) as f64).sqrt();
                    let weights =
                        Tensor::from_fn(&[neurons, n_in], |_| T::from_f64(rng.gen_range(-r..r)));
                    Layer::Dense(DenseLayerState::new(
                        weights,
                        vec![T::zero(); neurons],
                        layer.activation,
                    )?)
                }
            });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(ConvLayerState {
                    kernels: c.kernels.cast(),
                    biases: c.biases.iter().map(|b| U::from_f64(Real::to_f64(*b))).collect(),
                    origin: c.origin.clone(),
                    activation: c.activation,
                }),
                Layer::Pool { factor } => Layer::Pool { factor: *factor },
                Layer::Dense(d) => Layer::Dense(DenseLayerState {
                    weights: d.weights.cast(),
                    biases: d.biases.iter().map(|b| U::from_f64(Real::to_f64(*b))).collect(),
                    activation: d.activation,
                }),
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            layers,
        }
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    pub fn conv(&self, l: usize) -> Option<&ConvLayerState<T>> {
        match self.layers.get(l) {
            Some(Layer::Conv(c)) => Some(c),
            _ => None,
        }
    }

    pub fn conv_mut(&mut self, l: usize) -> Option<&mut ConvLayerState<T>> {
        match self.layers.get_mut(l) {
            Some(Layer::Conv(c)) => Some(c),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.kernels.len() + c.biases.len(),
                Layer::Pool { .. } => 0,
                Layer::Dense(d) => d.param_count(),
            })
            .sum()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        let mut tally = OpTally::new(self.layers.len());
        self.forward_tallied(input, &mut tally)
    }

    pub fn forward_tallied(&self, input: &Tensor<T>, tally: &mut OpTally) -> Result<Trace<T>> {
        if input.shape() != self.spec.input.dims() {
            return Err(Error::shape(format!(
                "network expects input {:?}, got {:?}",
                self.spec.input.dims(),
                input.shape()
            )));
        }
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = if l == 0 { input } else { &outputs[l - 1] };
            let out = match layer {
                Layer::Conv(c) => {
                    let (h, w) = conv::check_conv_input(c, x)?;
                    let out = conv::forward_unchecked(c, x, (h, w));
                    let plane = (out.shape()[1] * out.shape()[2]) as u64;
                    tally.add(
                        l,
                        Phase::ForwardProp,
                        c.out_maps() as u64 * plane * (c.in_maps() * c.kernel_area() + 1) as u64,
                    );
                    out
                }
                Layer::Pool { factor } => {
                    tally.add(l, Phase::ForwardProp, x.len() as u64);
                    meanpool_forward(x, *factor)?
                }
                Layer::Dense(d) => {
                    let out = dense::fc_forward(d, x.data())?;
                    tally.add(
                        l,
                        Phase::ForwardProp,
                        (d.n_out() * (d.n_in() + 1)) as u64,
                    );
                    Tensor::new(vec![out.len()], out)?
                }
            };
            outputs.push(out);
        }
        if !outputs.last().is_some_and(Tensor::is_finite) {
            return Err(Error::Degenerate("non-finite network output".into()));
        }
        Ok(Trace { outputs })
    }

    pub fn predict(&self, input: &Tensor<T>) -> Result<usize> {
        let trace = self.forward(input)?;
        Ok(argmax(trace.prediction()))
    }

    /// Loss of one sample against its one-hot label.
    pub fn loss(&self, input: &Tensor<T>, label: usize) -> Result<T> {
        let trace = self.forward(input)?;
        let target = one_hot(label, self.classes());
        Ok(mse_loss(trace.prediction(), &target)?.0)
    }

    /// Forward, loss and backward for one sample, adding gradients into `grads`.
    /// Returns the sample loss.
    pub fn accumulate_sample(
        &self,
        input: &Tensor<T>,
        label: usize,
        plan: &BackwardPlan,
        grads: &mut Gradients<T>,
        tally: &mut OpTally,
    ) -> Result<T> {
        if label >= self.classes() {
            return Err(Error::Argument(format!(
                "label {label} outside {} classes",
                self.classes()
            )));
        }
        let trace = self.forward_tallied(input, tally)?;
        let target = one_hot(label, self.classes());
        let (loss, grad) = mse_loss(trace.prediction(), &target)?;
        tally.add(self.layers.len() - 1, Phase::ErrorAndLoss, grad.len() as u64);
        self.backward(input, &trace, grad, plan, grads, tally)?;
        grads.samples += 1;
        Ok(loss)
    }

    /// Back-propagates `output_grad` (gradient w.r.t. the network output).
    pub fn backward(
        &self,
        input: &Tensor<T>,
        trace: &Trace<T>,
        output_grad: Vec<T>,
        plan: &BackwardPlan,
        grads: &mut Gradients<T>,
        tally: &mut OpTally,
    ) -> Result<()> {
        let mut upstream = output_grad;
        for l in (0..self.layers.len()).rev() {
            if !plan.needs_delta(l) {
                break;
            }
            let x = if l == 0 { input } else { &trace.outputs[l - 1] };
            let y = &trace.outputs[l];
            match (&self.layers[l], &mut grads.layers[l]) {
                (Layer::Dense(d), LayerGradients::Dense { weights, biases }) => {
                    let delta = conv::activation_delta(d.activation, y.data(), &upstream);
                    tally.add(
                        l,
                        Phase::BackpropError,
                        d.n_out() as u64 * d.activation.derivative_macs(),
                    );
                    dense::weight_grad_acc(x.data(), &delta, weights, biases);
                    tally.add(l, Phase::WeightGradient, (d.n_out() * (d.n_in() + 1)) as u64);
                    if !plan.needs_input_grad[l] {
                        break;
                    }
                    upstream = dense::route(d, &delta);
                    tally.add(l, Phase::BackpropError, (d.n_out() * d.n_in()) as u64);
                }
                (
                    Layer::Conv(c),
                    LayerGradients::Conv {
                        kernels,
                        biases,
                        slot_mask,
                        bias_mask,
                    },
                ) => {
                    let &[_, h, w] = x.shape() else {
                        return Err(Error::shape("conv input must be 3-D"));
                    };
                    let (kh, kw) = c.kernel_dims();
                    let plane = y.shape()[1] * y.shape()[2];
                    let (m, ci) = (c.out_maps(), c.in_maps());
                    let area = kh * kw;
                    let delta = conv::activation_delta(c.activation, y.data(), &upstream);
                    tally.add(
                        l,
                        Phase::BackpropError,
                        (m * plane) as u64 * c.activation.derivative_macs(),
                    );
                    let mut wg_macs = 0u64;
                    for j in 0..m {
                        let d = &delta[j * plane..(j + 1) * plane];
                        for i in 0..ci {
                            let s = j * ci + i;
                            if slot_mask[s] {
                                conv::weight_grad_acc(
                                    x.slab(i),
                                    (h, w),
                                    d,
                                    (kh, kw),
                                    &mut kernels[s * area..(s + 1) * area],
                                );
                                wg_macs += (plane * area) as u64;
                            }
                        }
                        if bias_mask[j] {
                            biases[j] += d.iter().copied().sum();
                            wg_macs += plane as u64;
                        }
                    }
                    tally.add(l, Phase::WeightGradient, wg_macs);
                    if !plan.needs_input_grad[l] {
                        break;
                    }
                    let mut ig = vec![T::zero(); ci * h * w];
                    for j in 0..m {
                        let d = &delta[j * plane..(j + 1) * plane];
                        for i in 0..ci {
                            conv::route_acc(
                                d,
                                (h, w),
                                c.slot(j * ci + i),
                                (kh, kw),
                                &mut ig[i * h * w..(i + 1) * h * w],
                            );
                        }
                    }
                    tally.add(l, Phase::BackpropError, (m * ci * plane * area) as u64);
                    upstream = ig;
                }
                (Layer::Pool { factor }, LayerGradients::Pool) => {
                    let g = Tensor::new(y.shape().to_vec(), upstream)?;
                    upstream = meanpool_backward(&g, *factor)?.into_data();
                    tally.add(l, Phase::BackpropError, upstream.len() as u64);
                }
                _ => {
                    return Err(Error::shape(format!(
                        "layer {l}: gradient buffer does not match layer type"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Plain SGD over every mask-true parameter, ignoring kernel sharing.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, learning_rate: f64, tally: &mut OpTally) {
        let step = grads.step_size(learning_rate);
        for (l, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            match (layer, g) {
                (
                    Layer::Conv(c),
                    LayerGradients::Conv {
                        kernels,
                        biases,
                        slot_mask,
                        bias_mask,
                    },
                ) => {
                    let area = c.kernel_area();
                    let mut updated = 0u64;
                    for (s, &on) in slot_mask.iter().enumerate() {
                        if on {
                            sgd_update(c.slot_mut(s), &kernels[s * area..(s + 1) * area], step);
                            updated += area as u64;
                        }
                    }
                    for (j, &on) in bias_mask.iter().enumerate() {
                        if on {
                            c.biases[j] -= step * biases[j];
                            updated += 1;
                        }
                    }
                    tally.add(l, Phase::WeightUpdate, updated);
                }
                (Layer::Dense(d), LayerGradients::Dense { weights, biases }) => {
                    sgd_update(d.weights.data_mut(), weights, step);
                    sgd_update(&mut d.biases, biases, step);
                    tally.add(l, Phase::WeightUpdate, d.param_count() as u64);
                }
                _ => {}
            }
        }
    }

    /// One mini-batch of plain SGD with every parameter trainable.
    /// Returns the summed sample loss.
    pub fn train_batch<'a>(
        &mut self,
        samples: impl IntoIterator<Item = (&'a Tensor<T>, usize)>,
        learning_rate: f64,
        tally: &mut OpTally,
    ) -> Result<T> {
        let plan = BackwardPlan::full(&self.spec)?;
        let mut grads = Gradients::zeros(self, &plan);
        let mut loss = T::zero();
        for (x, label) in samples {
            loss += self.accumulate_sample(x, label, &plan, &mut grads, tally)?;
        }
        self.sgd_step(&grads, learning_rate, tally);
        Ok(loss)
    }
}

pub(crate) fn argmax<T: Real>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}
