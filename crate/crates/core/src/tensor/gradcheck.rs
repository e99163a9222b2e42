use serde::Serialize;

use super::network::{BackwardPlan, Gradients, Layer, LayerGradients, Network};
use super::{OpTally, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing back-propagated gradients with central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

const STEP: f64 = 1e-3;
// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-8;

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Checks every trainable parameter of `network` on one sample.
pub fn numerical_gradient_check(
    network: &Network<f64>,
    input: &Tensor<f64>,
    label: usize,
    tolerance: f64,
) -> Result<GradCheckReport> {
    numerical_gradient_check_with(network, input, label, tolerance, |net, x, y| {
        let plan = BackwardPlan::full(&net.spec)?;
        let mut grads = Gradients::zeros(net, &plan);
        let mut tally = OpTally::new(net.layers.len());
        net.accumulate_sample(x, y, &plan, &mut grads, &mut tally)?;
        Ok(grads)
    })
}

/// Same as [`numerical_gradient_check`] with a caller-supplied analytic
/// gradient, e.g. a deliberately broken backward pass.
pub fn numerical_gradient_check_with(
    network: &Network<f64>,
    input: &Tensor<f64>,
    label: usize,
    tolerance: f64,
    analytic: impl Fn(&Network<f64>, &Tensor<f64>, usize) -> Result<Gradients<f64>>,
) -> Result<GradCheckReport> {
    let grads = analytic(network, input, label)?;
    let mut probe = network.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
        tolerance,
        passed: true,
    };

    for l in 0..network.layers.len() {
        let count = match &network.layers[l] {
            Layer::Conv(c) => c.kernels.len() + c.biases.len(),
            Layer::Dense(d) => d.param_count(),
            Layer::Pool { .. } => 0,
        };
        for p in 0..count {
            let (name, a) = match (&network.layers[l], &grads.layers[l]) {
                (Layer::Conv(c), LayerGradients::Conv { kernels, biases, .. }) => {
                    if p < c.kernels.len() {
                        let area = c.kernel_area();
                        let s = p / area;
                        (
                            format!("layer {l} kernel ({}, {}) tap {}", s / c.in_maps(), s % c.in_maps(), p % area),
                            kernels[p],
                        )
                    } else {
                        let j = p - c.kernels.len();
                        (format!("layer {l} bias {j}"), biases[j])
                    }
                }
                (Layer::Dense(d), LayerGradients::Dense { weights, biases }) => {
                    if p < d.weights.len() {
                        (
                            format!("layer {l} weight ({}, {})", p / d.n_in(), p % d.n_in()),
                            weights[p],
                        )
                    } else {
                        let j = p - d.weights.len();
                        (format!("layer {l} bias {j}"), biases[j])
                    }
                }
                _ => return Err(Error::shape(format!("layer {l}: gradient layout mismatch"))),
            };
            let original = param(&probe, l, p);
            set_param(&mut probe, l, p, original + STEP);
            let plus = loss_or_diagnose(&probe, input, label, &name)?;
            set_param(&mut probe, l, p, original - STEP);
            let minus = loss_or_diagnose(&probe, input, label, &name)?;
            set_param(&mut probe, l, p, original);
            let numeric = (plus - minus) / (2.0 * STEP);
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite { param: name });
            }
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name;
            }
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}

fn loss_or_diagnose(net: &Network<f64>, x: &Tensor<f64>, y: usize, name: &str) -> Result<f64> {
    match net.loss(x, y) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::Degenerate(_)) => Err(Error::NonFinite {
            param: name.to_string(),
        }),
        Err(e) => Err(e),
    }
}

fn param(net: &Network<f64>, l: usize, p: usize) -> f64 {
    match &net.layers[l] {
        Layer::Conv(c) if p < c.kernels.len() => c.kernels.data()[p],
        Layer::Conv(c) => c.biases[p - c.kernels.len()],
        Layer::Dense(d) if p < d.weights.len() => d.weights.data()[p],
        Layer::Dense(d) => d.biases[p - d.weights.len()],
        Layer::Pool { .. } => unreachable!("pooling has no parameters"),
    }
}

fn set_param(net: &mut Network<f64>, l: usize, p: usize, v: f64) {
    match &mut net.layers[l] {
        Layer::Conv(c) if p < c.kernels.len() => c.kernels.data_mut()[p] = v,
        Layer::Conv(c) => {
            let n = c.kernels.len();
            c.biases[p - n] = v
        }
        Layer::Dense(d) if p < d.weights.len() => d.weights.data_mut()[p] = v,
        Layer::Dense(d) => {
            let n = d.weights.len();
            d.biases[p - n] = v
        }
        Layer::Pool { .. } => unreachable!("pooling has no parameters"),
    }
}
