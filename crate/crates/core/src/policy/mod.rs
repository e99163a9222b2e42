//! Which convolution kernels train, which are pinned to Gabor bank entries,
//! and which train for an initial fraction of the run before freezing.

mod presets;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{EntryId, KernelBank};
use crate::tensor::{
    BackwardPlan, Gradients, KernelOrigin, Layer, LayerGradients, LayerKind, Network, NetworkSpec,
    OpTally, Phase, Real,
};

pub use presets::{
    build_config, fixed_orientations, sweep_configs, AllGabor, Baseline, FirstLayerGabor,
    HalfHalf, PolicyPreset, PresetRegistry, Sweep,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainabilityStatus {
    Trainable,
    FixedGabor { entry: EntryId },
    /// Trains while the epoch fraction is below `freeze_at`, then stays fixed.
    PartialGabor { entry: EntryId, freeze_at: f64 },
}

impl TrainabilityStatus {
    pub fn entry(&self) -> Option<EntryId> {
        match *self {
            TrainabilityStatus::Trainable => None,
            TrainabilityStatus::FixedGabor { entry }
            | TrainabilityStatus::PartialGabor { entry, .. } => Some(entry),
        }
    }

    pub fn trainable_at(&self, epoch_fraction: f64) -> bool {
        match *self {
            TrainabilityStatus::Trainable => true,
            TrainabilityStatus::FixedGabor { .. } => false,
            TrainabilityStatus::PartialGabor { freeze_at, .. } => epoch_fraction < freeze_at,
        }
    }
}

/// Per-slot statuses of one conv layer, row-major over (outMap, inMap).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvPolicy {
    pub layer: usize,
    pub out_maps: usize,
    pub in_maps: usize,
    pub slots: Vec<TrainabilityStatus>,
}

impl ConvPolicy {
    pub fn all_trainable(layer: usize, out_maps: usize, in_maps: usize) -> Self {
        Self {
            layer,
            out_maps,
            in_maps,
            slots: vec![TrainabilityStatus::Trainable; out_maps * in_maps],
        }
    }

    /// Pins every slot of output map `map` to `entry`.
    pub fn fix_map(&mut self, map: usize, entry: EntryId) {
        for s in &mut self.slots[map * self.in_maps..(map + 1) * self.in_maps] {
            *s = TrainabilityStatus::FixedGabor { entry };
        }
    }

    pub fn mask(&self, epoch_fraction: f64) -> Vec<bool> {
        self.slots
            .iter()
            .map(|s| s.trainable_at(epoch_fraction))
            .collect()
    }

    /// True when no slot of `map` is ever owned by the map itself.
    pub fn map_is_gabor(&self, map: usize) -> bool {
        self.slots[map * self.in_maps..(map + 1) * self.in_maps]
            .iter()
            .all(|s| s.entry().is_some())
    }

    pub fn count(&self, pred: impl Fn(&TrainabilityStatus) -> bool) -> usize {
        self.slots.iter().filter(|s| pred(s)).count()
    }
}

/// Layer stack, per-slot trainability and the bank fixed slots refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    pub spec: NetworkSpec,
    pub policies: Vec<ConvPolicy>,
    pub bank: KernelBank,
}

impl NetworkConfig {
    pub fn new(
        name: impl Into<String>,
        spec: NetworkSpec,
        policies: Vec<ConvPolicy>,
        bank: KernelBank,
    ) -> Result<Self> {
        let config = Self {
            name: name.into(),
            spec,
            policies,
            bank,
        };
        config.validate()?;
        Ok(config)
    }

    /// Every conv slot trainable.
    pub fn all_trainable(
        name: impl Into<String>,
        spec: &NetworkSpec,
        bank: KernelBank,
    ) -> Result<Self> {
        let shapes = spec.shapes()?;
        let policies = spec
            .conv_layer_indices()
            .into_iter()
            .map(|l| {
                let LayerKind::Conv { maps, .. } = spec.layers[l].kind else {
                    unreachable!()
                };
                ConvPolicy::all_trainable(l, maps, spec.input_of(l, &shapes).maps)
            })
            .collect();
        Self::new(name, spec.clone(), policies, bank)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.spec.shapes()?;
        let conv = self.spec.conv_layer_indices();
        if conv.len() != self.policies.len() {
            return Err(Error::Policy(format!(
                "{} conv layers but {} layer policies",
                conv.len(),
                self.policies.len()
            )));
        }
        for (p, &l) in self.policies.iter().zip(&conv) {
            let LayerKind::Conv { kernel, maps } = self.spec.layers[l].kind else {
                unreachable!()
            };
            let in_maps = self.spec.input_of(l, &shapes).maps;
            if p.layer != l || p.out_maps != maps || p.in_maps != in_maps {
                return Err(Error::Policy(format!(
                    "policy for layer {} ({}x{}) does not match conv layer {l} ({maps}x{in_maps})",
                    p.layer, p.out_maps, p.in_maps
                )));
            }
            if p.slots.len() != maps * in_maps {
                return Err(Error::Policy(format!(
                    "layer {l}: {} statuses for {} slots",
                    p.slots.len(),
                    maps * in_maps
                )));
            }
            for s in &p.slots {
                if let TrainabilityStatus::PartialGabor { freeze_at, .. } = s {
                    if !(*freeze_at > 0.0 && *freeze_at < 1.0) {
                        return Err(Error::Policy(format!(
                            "freeze fraction {freeze_at} must lie strictly between 0 and 1"
                        )));
                    }
                }
                if let Some(e) = s.entry() {
                    if self.bank.entry(e).is_none() {
                        return Err(Error::Policy(format!(
                            "layer {l}: bank entry {e} does not exist"
                        )));
                    }
                    if self.bank.kernel_size() != kernel {
                        return Err(Error::Policy(format!(
                            "layer {l}: {kernel}x{kernel} kernels cannot reference a {0}x{0} bank",
                            self.bank.kernel_size()
                        )));
                    }
                }
            }
        }
        // A shared entry must be either fixed everywhere or partial with one
        // freeze point, otherwise its slots would drift apart.
        let mut modes: BTreeMap<EntryId, Option<u64>> = BTreeMap::new();
        for s in self.policies.iter().flat_map(|p| &p.slots) {
            let (entry, mode) = match *s {
                TrainabilityStatus::Trainable => continue,
                TrainabilityStatus::FixedGabor { entry } => (entry, None),
                TrainabilityStatus::PartialGabor { entry, freeze_at } => {
                    (entry, Some(freeze_at.to_bits()))
                }
            };
            if *modes.entry(entry).or_insert(mode) != mode {
                return Err(Error::Policy(format!(
                    "bank entry {entry} is referenced with conflicting statuses"
                )));
            }
        }
        Ok(())
    }

    pub fn policy(&self, layer: usize) -> Option<&ConvPolicy> {
        self.policies.iter().find(|p| p.layer == layer)
    }

    /// Weight-gradient mask of `layer` at a point of the run.
    pub fn gradient_mask(&self, layer: usize, epoch_fraction: f64) -> Option<Vec<bool>> {
        self.policy(layer).map(|p| p.mask(epoch_fraction))
    }

    pub fn gradient_masks(&self, epoch_fraction: f64) -> Vec<Option<Vec<bool>>> {
        (0..self.spec.layers.len())
            .map(|l| self.gradient_mask(l, epoch_fraction))
            .collect()
    }

    pub fn backward_plan(&self, epoch_fraction: f64) -> Result<BackwardPlan> {
        BackwardPlan::new(&self.spec, self.gradient_masks(epoch_fraction))
    }

    /// Turns every fixed slot into a partially trained one freezing at `freeze_at`.
    pub fn with_partial_training(mut self, freeze_at: f64) -> Result<Self> {
        for s in self.policies.iter_mut().flat_map(|p| p.slots.iter_mut()) {
            if let TrainabilityStatus::FixedGabor { entry } = *s {
                *s = TrainabilityStatus::PartialGabor { entry, freeze_at };
            }
        }
        self.name = format!("{}+partial{}", self.name, freeze_at);
        self.validate()?;
        Ok(self)
    }

    /// Bank entries referenced anywhere in the network, each counted once.
    pub fn referenced_entries(&self) -> BTreeSet<EntryId> {
        self.policies
            .iter()
            .flat_map(|p| &p.slots)
            .filter_map(|s| s.entry())
            .collect()
    }

    pub fn gabor_slot_count(&self) -> usize {
        self.policies
            .iter()
            .map(|p| p.count(|s| s.entry().is_some()))
            .sum()
    }

    /// Fresh network: trainable slots initialised from `seed`, Gabor slots
    /// copied from the bank. The random stream is consumed for every slot so
    /// trainable weights match the all-trainable network with the same seed.
    pub fn instantiate<T: Real>(&self, seed: u64) -> Result<Network<T>> {
        let mut net = Network::<T>::init(&self.spec, seed)?;
        for p in &self.policies {
            let conv = net
                .conv_mut(p.layer)
                .ok_or_else(|| Error::Policy(format!("layer {} is not convolutional", p.layer)))?;
            for (s, status) in p.slots.iter().enumerate() {
                if let Some(e) = status.entry() {
                    let kernel = &self.bank.entry(e).expect("validated").kernel;
                    for (dst, &v) in conv.slot_mut(s).iter_mut().zip(kernel.data()) {
                        *dst = T::from_f64(v);
                    }
                    conv.origin[s] = KernelOrigin::Shared(e);
                }
            }
            for j in 0..p.out_maps {
                if p.map_is_gabor(j) {
                    conv.biases[j] = T::zero();
                }
            }
        }
        Ok(net)
    }
}

/// Free-function form of [`NetworkConfig::gradient_mask`].
pub fn gradient_mask(config: &NetworkConfig, layer: usize, epoch_fraction: f64) -> Option<Vec<bool>> {
    config.gradient_mask(layer, epoch_fraction)
}

/// SGD step under the config's policy.
///
/// Mask-true owned slots take their own step; fixed slots are untouched;
/// partially trained slots sharing a bank entry receive one common step built
/// from the sum of their gradients, so they stay bitwise equal.
pub fn apply_updates<T: Real>(
    config: &NetworkConfig,
    net: &mut Network<T>,
    grads: &Gradients<T>,
    epoch_fraction: f64,
    learning_rate: f64,
    tally: &mut OpTally,
) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Policy("gradient structure does not match network".into()));
    }
    for p in &config.policies {
        let expected = p.mask(epoch_fraction);
        if grads.slot_mask(p.layer) != Some(expected.as_slice()) {
            return Err(Error::Policy(format!(
                "layer {}: gradients were not produced under the mask for fraction {epoch_fraction}",
                p.layer
            )));
        }
    }
    let step = grads.step_size(learning_rate);
    let mut shared: BTreeMap<EntryId, (Vec<T>, Vec<(usize, usize)>)> = BTreeMap::new();

    for (l, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
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
                let policy = config.policy(l);
                let area = c.kernel_area();
                let mut updated = 0u64;
                for (s, &on) in slot_mask.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    let g = &kernels[s * area..(s + 1) * area];
                    let status = policy.map_or(TrainabilityStatus::Trainable, |p| p.slots[s]);
                    match status {
                        TrainabilityStatus::Trainable => {
                            crate::tensor::sgd_update(c.slot_mut(s), g, step);
                        }
                        TrainabilityStatus::PartialGabor { entry, .. } => {
                            let (sum, refs) = shared
                                .entry(entry)
                                .or_insert_with(|| (vec![T::zero(); area], Vec::new()));
                            for (a, &v) in sum.iter_mut().zip(g) {
                                *a += v;
                            }
                            refs.push((l, s));
                        }
                        TrainabilityStatus::FixedGabor { .. } => {
                            return Err(Error::Policy(format!(
                                "layer {l}: gradient present for fixed slot {s}"
                            )))
                        }
                    }
                    updated += area as u64;
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
                crate::tensor::sgd_update(d.weights.data_mut(), weights, step);
                crate::tensor::sgd_update(&mut d.biases, biases, step);
                tally.add(l, Phase::WeightUpdate, d.param_count() as u64);
            }
            _ => {}
        }
    }

    for (entry, (sum, refs)) in shared {
        // Every referencing slot in the network, not only the mask-true ones,
        // must carry the new value.
        let targets: Vec<(usize, usize)> = config
            .policies
            .iter()
            .flat_map(|p| {
                p.slots
                    .iter()
                    .enumerate()
                    .filter(move |(_, s)| s.entry() == Some(entry))
                    .map(move |(s, _)| (p.layer, s))
            })
            .collect();
        let (l0, s0) = refs[0];
        let mut value = net.conv(l0).expect("conv layer").slot(s0).to_vec();
        crate::tensor::sgd_update(&mut value, &sum, step);
        for (l, s) in targets {
            net.conv_mut(l).expect("conv layer").slot_mut(s).copy_from_slice(&value);
        }
    }
    Ok(())
}
