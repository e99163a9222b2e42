//! Dense tensors and the layer arithmetic used for training.
//!
//! Every arithmetic kernel in this module reports its multiply-accumulate
//! count to an [`OpTally`] under exactly one training [`Phase`], so the cost
//! model can be cross-checked against the work actually executed.

mod conv;
mod dense;
mod gradcheck;
mod loss;
mod network;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conv::{
    conv2d_valid, conv_layer_backward, conv_layer_forward, ConvBackward, ConvLayerState,
    ConvWeightGrads, KernelOrigin,
};
pub use dense::{fc_backward, fc_forward, DenseLayerState, FcBackward};
pub use gradcheck::{numerical_gradient_check, numerical_gradient_check_with, GradCheckReport};
pub use loss::mse_loss;
pub use network::{
    BackwardPlan, Gradients, Layer, LayerGradients, LayerKind, LayerSpec, Network, NetworkSpec,
    Shape3, Trace,
};
pub use pool::{meanpool_backward, meanpool_forward};

pub(crate) use network::sgd_update;

/// Floating-point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Real:
    Float + NumAssign + Copy + Default + Debug + Display + Send + Sync + Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element at a multi-dimensional index.
    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for extent {d}");
                acc * d + i
            })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(Real::to_f64(*v))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// View of the `index`-th slab along the leading axis.
    pub fn slab(&self, index: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[index * stride..(index + 1) * stride]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Identity => T::one(),
        }
    }

    /// MACs charged for applying the derivative to one element.
    pub(crate) fn derivative_macs(self) -> u64 {
        match self {
            Activation::Sigmoid => 1,
            Activation::Identity => 0,
        }
    }
}

/// Segments of training work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    ForwardProp,
    ErrorAndLoss,
    BackpropError,
    WeightGradient,
    WeightUpdate,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::ForwardProp,
        Phase::ErrorAndLoss,
        Phase::BackpropError,
        Phase::WeightGradient,
        Phase::WeightUpdate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Phases that make up back-propagation training of a layer.
    pub fn is_backprop(self) -> bool {
        matches!(
            self,
            Phase::BackpropError | Phase::WeightGradient | Phase::WeightUpdate
        )
    }
}

impl Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::ForwardProp => "forward",
            Phase::ErrorAndLoss => "error_loss",
            Phase::BackpropError => "backprop_error",
            Phase::WeightGradient => "weight_gradient",
            Phase::WeightUpdate => "weight_update",
        };
        f.write_str(s)
    }
}

/// Executed MAC counts per (layer, phase).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally {
    layers: Vec<[u64; 5]>,
}

impl OpTally {
    pub fn new(layer_count: usize) -> Self {
        Self {
            layers: vec![[0; 5]; layer_count],
        }
    }

    pub fn add(&mut self, layer: usize, phase: Phase, macs: u64) {
        if layer >= self.layers.len() {
            self.layers.resize(layer + 1, [0; 5]);
        }
        self.layers[layer][phase.index()] += macs;
    }

    pub fn get(&self, layer: usize, phase: Phase) -> u64 {
        self.layers.get(layer).map_or(0, |l| l[phase.index()])
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn total(&self) -> u64 {
        self.layers.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &OpTally) {
        for (layer, counts) in other.layers.iter().enumerate() {
            for phase in Phase::ALL {
                self.add(layer, phase, counts[phase.index()]);
            }
        }
    }
}
