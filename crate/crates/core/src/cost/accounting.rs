use std::collections::BTreeMap;

use super::{CostLedger, MemKind};
use crate::error::{Error, Result};
use crate::policy::NetworkConfig;
use crate::tensor::{BackwardPlan, LayerKind, NetworkSpec, Phase};

/// Rule set deciding which executed work a ledger charges.
pub trait AccountingModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Whether routing the error back through transposed weights is charged.
    fn charges_routing(&self) -> bool;
}

/// Charges layer-local work only: activation derivatives, pooling adjoints,
/// weight gradients and updates. Error routing through transposed weights is
/// treated as free. This is the default model.
pub struct LocalAccounting;

impl AccountingModel for LocalAccounting {
    fn name(&self) -> &'static str {
        "local"
    }
    fn description(&self) -> &'static str {
        "layer-local backward work only; transposed-weight error routing not charged"
    }
    fn charges_routing(&self) -> bool {
        false
    }
}

/// Charges every multiply-accumulate the training loop executes.
pub struct ExhaustiveAccounting;

impl AccountingModel for ExhaustiveAccounting {
    fn name(&self) -> &'static str {
        "exhaustive"
    }
    fn description(&self) -> &'static str {
        "every executed MAC, including error routing into earlier layers"
    }
    fn charges_routing(&self) -> bool {
        true
    }
}

pub const DEFAULT_ACCOUNTING: &str = "local";

pub struct AccountingRegistry {
    models: BTreeMap<&'static str, Box<dyn AccountingModel>>,
}

impl Default for AccountingRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl AccountingRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            models: BTreeMap::new(),
        };
        r.register(Box::new(LocalAccounting));
        r.register(Box::new(ExhaustiveAccounting));
        r
    }

    pub fn register(&mut self, model: Box<dyn AccountingModel>) {
        self.models.insert(model.name(), model);
    }

    pub fn get(&self, name: &str) -> Result<&dyn AccountingModel> {
        self.models.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            Error::Argument(format!(
                "unknown accounting model {name:?}; known: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.models.keys().copied().collect()
    }
}

/// Ledger of one training sample (forward, loss, backward; no update).
pub fn sample_ledger(
    spec: &NetworkSpec,
    plan: &BackwardPlan,
    model: &dyn AccountingModel,
) -> Result<CostLedger> {
    use MemKind::*;
    let shapes = spec.shapes()?;
    let n = spec.layers.len();
    let mut led = CostLedger::new(n);
    led.samples = 1;

    for (l, layer) in spec.layers.iter().enumerate() {
        let x = spec.input_of(l, &shapes);
        let y = shapes[l];
        let fp = Phase::ForwardProp;
        match layer.kind {
            LayerKind::Conv { kernel, maps } => {
                let area = (kernel * kernel) as u64;
                let (m, c) = (maps as u64, x.maps as u64);
                let plane = (y.h * y.w) as u64;
                led.add_macs(l, fp, m * plane * (c * area + 1));
                led.add_mem(l, fp, ActivationRead, x.len() as u64);
                led.add_mem(l, fp, WeightRead, m * c * area + m);
                led.add_mem(l, fp, ActivationWrite, y.len() as u64);
            }
            LayerKind::MeanPool { .. } => {
                led.add_macs(l, fp, x.len() as u64);
                led.add_mem(l, fp, ActivationRead, x.len() as u64);
                led.add_mem(l, fp, ActivationWrite, y.len() as u64);
            }
            LayerKind::FullyConnected { neurons } | LayerKind::Output { neurons } => {
                let (o, i) = (neurons as u64, x.len() as u64);
                led.add_macs(l, fp, o * (i + 1));
                led.add_mem(l, fp, ActivationRead, i);
                led.add_mem(l, fp, WeightRead, o * i + o);
                led.add_mem(l, fp, ActivationWrite, o);
            }
        }
    }

    let out = spec.classes() as u64;
    led.add_macs(n - 1, Phase::ErrorAndLoss, out);
    led.add_mem(n - 1, Phase::ErrorAndLoss, ActivationRead, 2 * out);
    led.add_mem(n - 1, Phase::ErrorAndLoss, ActivationWrite, out);

    let bpe = Phase::BackpropError;
    let wg = Phase::WeightGradient;
    for l in (0..n).rev() {
        if !plan.needs_delta(l) {
            break;
        }
        let layer = &spec.layers[l];
        let x = spec.input_of(l, &shapes);
        let y = shapes[l];
        let dm = layer.activation.derivative_macs();
        match layer.kind {
            LayerKind::FullyConnected { neurons } | LayerKind::Output { neurons } => {
                let (o, i) = (neurons as u64, x.len() as u64);
                led.add_macs(l, bpe, o * dm);
                led.add_mem(l, bpe, ActivationRead, 2 * o);
                led.add_mem(l, bpe, ActivationWrite, o);
                led.add_macs(l, wg, o * (i + 1));
                led.add_mem(l, wg, ActivationRead, i + o);
                led.add_mem(l, wg, WeightRead, o * i + o);
                led.add_mem(l, wg, WeightWrite, o * i + o);
                if !plan.needs_input_grad[l] {
                    break;
                }
                if model.charges_routing() {
                    led.add_macs(l, bpe, o * i);
                    led.add_mem(l, bpe, WeightRead, o * i);
                    led.add_mem(l, bpe, ActivationRead, o);
                    led.add_mem(l, bpe, ActivationWrite, i);
                }
            }
            LayerKind::Conv { kernel, maps } => {
                let area = (kernel * kernel) as u64;
                let plane = (y.h * y.w) as u64;
                let (m, c) = (maps as u64, x.maps);
                let mask = plan.masks[l]
                    .as_ref()
                    .ok_or_else(|| Error::Policy(format!("layer {l}: conv layer without mask")))?;
                led.add_macs(l, bpe, m * plane * dm);
                led.add_mem(l, bpe, ActivationRead, 2 * m * plane);
                led.add_mem(l, bpe, ActivationWrite, m * plane);

                let true_slots = mask.iter().filter(|&&b| b).count() as u64;
                let live_maps = (0..maps)
                    .filter(|&j| mask[j * c..(j + 1) * c].iter().any(|&b| b))
                    .count() as u64;
                let used_inputs = (0..c)
                    .filter(|&i| (0..maps).any(|j| mask[j * c + i]))
                    .count() as u64;
                led.add_macs(l, wg, true_slots * plane * area + live_maps * plane);
                led.add_mem(
                    l,
                    wg,
                    ActivationRead,
                    used_inputs * (x.h * x.w) as u64 + live_maps * plane,
                );
                led.add_mem(l, wg, WeightRead, true_slots * area + live_maps);
                led.add_mem(l, wg, WeightWrite, true_slots * area + live_maps);
                if !plan.needs_input_grad[l] {
                    break;
                }
                if model.charges_routing() {
                    led.add_macs(l, bpe, m * c as u64 * plane * area);
                    led.add_mem(l, bpe, ActivationRead, m * plane);
                    led.add_mem(l, bpe, WeightRead, m * c as u64 * area);
                    led.add_mem(l, bpe, ActivationWrite, x.len() as u64);
                }
            }
            LayerKind::MeanPool { .. } => {
                led.add_macs(l, bpe, x.len() as u64);
                led.add_mem(l, bpe, ActivationRead, y.len() as u64);
                led.add_mem(l, bpe, ActivationWrite, x.len() as u64);
            }
        }
    }
    Ok(led)
}

/// Ledger of one SGD update: one MAC, one weight read and one weight write
/// per updated parameter.
pub fn batch_ledger(spec: &NetworkSpec, plan: &BackwardPlan) -> Result<CostLedger> {
    let shapes = spec.shapes()?;
    let mut led = CostLedger::new(spec.layers.len());
    led.batches = 1;
    for (l, layer) in spec.layers.iter().enumerate() {
        let updated = match layer.kind {
            LayerKind::Conv { kernel, maps } => {
                let c = spec.input_of(l, &shapes).maps;
                let mask = plan.masks[l].as_deref().unwrap_or(&[]);
                let slots = mask.iter().filter(|&&b| b).count();
                let biases = (0..maps).filter(|&j| plan.bias_trainable(l, j, c)).count();
                (slots * kernel * kernel + biases) as u64
            }
            LayerKind::MeanPool { .. } => 0,
            LayerKind::FullyConnected { neurons } | LayerKind::Output { neurons } => {
                (neurons * (spec.input_of(l, &shapes).len() + 1)) as u64
            }
        };
        led.add_macs(l, Phase::WeightUpdate, updated);
        led.add_mem(l, Phase::WeightUpdate, MemKind::WeightRead, updated);
        led.add_mem(l, Phase::WeightUpdate, MemKind::WeightWrite, updated);
    }
    Ok(led)
}

/// Per-layer MAC counts of one phase under the config's masks at
/// `epoch_fraction`: per sample, or per batch for [`Phase::WeightUpdate`].
pub fn count_macs(
    config: &NetworkConfig,
    epoch_fraction: f64,
    phase: Phase,
    model: &dyn AccountingModel,
) -> Result<Vec<u64>> {
    let plan = config.backward_plan(epoch_fraction)?;
    let led = if phase == Phase::WeightUpdate {
        batch_ledger(&config.spec, &plan)?
    } else {
        sample_ledger(&config.spec, &plan, model)?
    };
    Ok((0..config.spec.layers.len())
        .map(|l| led.macs(l, phase))
        .collect())
}

/// Shape of a training run for cost purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunSchedule {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
}

impl RunSchedule {
    pub fn batches_per_epoch(&self) -> usize {
        self.samples_per_epoch.div_ceil(self.batch_size.max(1))
    }

    /// Fraction of training completed at the start of `epoch`.
    pub fn epoch_fraction(&self, epoch: usize) -> f64 {
        epoch as f64 / self.epochs as f64
    }
}

/// Analytic ledger of a whole run: for every epoch, samples times the
/// per-sample ledger plus batches times the per-batch ledger, both under
/// that epoch's masks.
pub fn run_ledger(
    config: &NetworkConfig,
    schedule: &RunSchedule,
    model: &dyn AccountingModel,
) -> Result<CostLedger> {
    if schedule.epochs == 0 || schedule.batch_size == 0 {
        return Err(Error::Argument("epochs and batch size must be positive".into()));
    }
    let mut total = CostLedger::new(config.spec.layers.len());
    for e in 0..schedule.epochs {
        total.merge(&epoch_ledger(config, schedule, e, model)?);
    }
    Ok(total)
}

pub fn epoch_ledger(
    config: &NetworkConfig,
    schedule: &RunSchedule,
    epoch: usize,
    model: &dyn AccountingModel,
) -> Result<CostLedger> {
    let plan = config.backward_plan(schedule.epoch_fraction(epoch))?;
    let mut led = sample_ledger(&config.spec, &plan, model)?.scaled(schedule.samples_per_epoch as u64);
    led.merge(&batch_ledger(&config.spec, &plan)?.scaled(schedule.batches_per_epoch() as u64));
    Ok(led)
}
