//! MAC and memory-access accounting per (layer, training phase), energy and
//! storage reports.

mod accounting;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{NetworkConfig, TrainabilityStatus};
use crate::tensor::{LayerKind, OpTally, Phase};

pub use accounting::{
    batch_ledger, count_macs, epoch_ledger, run_ledger, sample_ledger, AccountingModel,
    AccountingRegistry, ExhaustiveAccounting, LocalAccounting, RunSchedule, DEFAULT_ACCOUNTING,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemKind {
    WeightRead,
    WeightWrite,
    ActivationRead,
    ActivationWrite,
}

impl MemKind {
    pub const ALL: [MemKind; 4] = [
        MemKind::WeightRead,
        MemKind::WeightWrite,
        MemKind::ActivationRead,
        MemKind::ActivationWrite,
    ];
}

impl fmt::Display for MemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemKind::WeightRead => "weight_read",
            MemKind::WeightWrite => "weight_write",
            MemKind::ActivationRead => "activation_read",
            MemKind::ActivationWrite => "activation_write",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLedger {
    pub macs: BTreeMap<Phase, u64>,
    pub memory: BTreeMap<Phase, BTreeMap<MemKind, u64>>,
}

/// Operation counts bucketed by layer and phase.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub layers: Vec<LayerLedger>,
    pub samples: u64,
    pub batches: u64,
}

impl CostLedger {
    pub fn new(layer_count: usize) -> Self {
        Self {
            layers: vec![LayerLedger::default(); layer_count],
            samples: 0,
            batches: 0,
        }
    }

    fn layer_mut(&mut self, l: usize) -> &mut LayerLedger {
        if l >= self.layers.len() {
            self.layers.resize(l + 1, LayerLedger::default());
        }
        &mut self.layers[l]
    }

    pub fn add_macs(&mut self, l: usize, phase: Phase, n: u64) {
        if n > 0 {
            *self.layer_mut(l).macs.entry(phase).or_default() += n;
        }
    }

    pub fn add_mem(&mut self, l: usize, phase: Phase, kind: MemKind, n: u64) {
        if n > 0 {
            *self
                .layer_mut(l)
                .memory
                .entry(phase)
                .or_default()
                .entry(kind)
                .or_default() += n;
        }
    }

    pub fn macs(&self, l: usize, phase: Phase) -> u64 {
        self.layers
            .get(l)
            .and_then(|x| x.macs.get(&phase))
            .copied()
            .unwrap_or(0)
    }

    pub fn memory(&self, l: usize, phase: Phase, kind: MemKind) -> u64 {
        self.layers
            .get(l)
            .and_then(|x| x.memory.get(&phase))
            .and_then(|m| m.get(&kind))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().flat_map(|l| l.macs.values()).sum()
    }

    pub fn phase_macs(&self, phase: Phase) -> u64 {
        (0..self.layers.len()).map(|l| self.macs(l, phase)).sum()
    }

    pub fn layer_macs(&self, l: usize) -> u64 {
        self.layers.get(l).map_or(0, |x| x.macs.values().sum())
    }

    pub fn total_memory(&self, kind: MemKind) -> u64 {
        self.layers
            .iter()
            .flat_map(|l| l.memory.values())
            .filter_map(|m| m.get(&kind))
            .sum()
    }

    pub fn total_memory_events(&self) -> u64 {
        MemKind::ALL.iter().map(|&k| self.total_memory(k)).sum()
    }

    /// Every count, and the sample and batch counters, multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.macs.values_mut().for_each(|v| *v *= k);
            l.memory
                .values_mut()
                .flat_map(|m| m.values_mut())
                .for_each(|v| *v *= k);
        }
        out.samples *= k;
        out.batches *= k;
        out
    }

    /// Commutative addition.
    pub fn merge(&mut self, other: &CostLedger) {
        for (l, layer) in other.layers.iter().enumerate() {
            for (&p, &v) in &layer.macs {
                self.add_macs(l, p, v);
            }
            for (&p, kinds) in &layer.memory {
                for (&k, &v) in kinds {
                    self.add_mem(l, p, k, v);
                }
            }
        }
        self.samples += other.samples;
        self.batches += other.batches;
    }

    /// MAC counts as an instrumentation tally, for cross-checking.
    pub fn mac_tally(&self) -> OpTally {
        let mut t = OpTally::new(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            for (&p, &v) in &layer.macs {
                t.add(l, p, v);
            }
        }
        t
    }
}

/// Energy units per operation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub energy_per_mac: f64,
    pub weight_read: f64,
    pub weight_write: f64,
    pub activation_read: f64,
    pub activation_write: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            energy_per_mac: 1.0,
            weight_read: 2.5,
            weight_write: 2.5,
            activation_read: 2.5,
            activation_write: 2.5,
        }
    }
}

impl CostTable {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let t: CostTable =
            toml::from_str(text).map_err(|e| Error::Config(format!("cost table: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("cost table serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("energy_per_mac", self.energy_per_mac),
            ("weight_read", self.weight_read),
            ("weight_write", self.weight_write),
            ("activation_read", self.activation_read),
            ("activation_write", self.activation_write),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn memory_cost(&self, kind: MemKind) -> f64 {
        match kind {
            MemKind::WeightRead => self.weight_read,
            MemKind::WeightWrite => self.weight_write,
            MemKind::ActivationRead => self.activation_read,
            MemKind::ActivationWrite => self.activation_write,
        }
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            energy_per_mac: self.energy_per_mac * k,
            weight_read: self.weight_read * k,
            weight_write: self.weight_write * k,
            activation_read: self.activation_read * k,
            activation_write: self.activation_write * k,
        }
    }
}

/// Energy of a ledger. Phase and layer shares are fractions of compute
/// (MAC) energy; memory-access energy is reported alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub compute: Vec<BTreeMap<Phase, f64>>,
    pub memory: Vec<BTreeMap<Phase, f64>>,
    pub compute_total: f64,
    pub memory_total: f64,
    /// Part of `memory_total` spent on weight reads and writes.
    pub weight_memory_total: f64,
    pub total: f64,
    pub phase_shares: BTreeMap<Phase, f64>,
}

impl EnergyReport {
    pub fn compute_energy(&self, l: usize, phase: Phase) -> f64 {
        self.compute
            .get(l)
            .and_then(|m| m.get(&phase))
            .copied()
            .unwrap_or(0.0)
    }

    /// Share of compute energy spent by layer `l` in the back-propagation
    /// phases (error, gradient, update).
    pub fn backprop_share(&self, l: usize) -> f64 {
        if self.compute_total == 0.0 {
            return 0.0;
        }
        Phase::ALL
            .iter()
            .filter(|p| p.is_backprop())
            .map(|&p| self.compute_energy(l, p))
            .sum::<f64>()
            / self.compute_total
    }

    pub fn phase_share(&self, phase: Phase) -> f64 {
        self.phase_shares.get(&phase).copied().unwrap_or(0.0)
    }
}

pub fn compute_energy(ledger: &CostLedger, table: &CostTable) -> Result<EnergyReport> {
    table.validate()?;
    let mut compute = Vec::with_capacity(ledger.layers.len());
    let mut memory = Vec::with_capacity(ledger.layers.len());
    let mut by_phase: BTreeMap<Phase, f64> = Phase::ALL.iter().map(|&p| (p, 0.0)).collect();
    let (mut ct, mut mt, mut wt) = (0.0, 0.0, 0.0);
    for layer in &ledger.layers {
        let mut c = BTreeMap::new();
        let mut m = BTreeMap::new();
        for p in Phase::ALL {
            let e = layer.macs.get(&p).copied().unwrap_or(0) as f64 * table.energy_per_mac;
            let me: f64 = layer
                .memory
                .get(&p)
                .map(|k| {
                    k.iter()
                        .map(|(&kind, &n)| n as f64 * table.memory_cost(kind))
                        .sum()
                })
                .unwrap_or(0.0);
            wt += layer
                .memory
                .get(&p)
                .map(|k| {
                    k.iter()
                        .filter(|(kind, _)| matches!(kind, MemKind::WeightRead | MemKind::WeightWrite))
                        .map(|(&kind, &n)| n as f64 * table.memory_cost(kind))
                        .sum()
                })
                .unwrap_or(0.0);
            c.insert(p, e);
            m.insert(p, me);
            *by_phase.get_mut(&p).unwrap() += e;
            ct += e;
            mt += me;
        }
        compute.push(c);
        memory.push(m);
    }
    let phase_shares = by_phase
        .into_iter()
        .map(|(p, e)| (p, if ct > 0.0 { e / ct } else { 0.0 }))
        .collect();
    Ok(EnergyReport {
        compute,
        memory,
        compute_total: ct,
        memory_total: mt,
        weight_memory_total: wt,
        total: ct + mt,
        phase_shares,
    })
}

fn check_comparable(a: &CostLedger, b: &CostLedger) -> Result<()> {
    if a.samples != b.samples || a.batches != b.batches {
        return Err(Error::Comparison(format!(
            "ledgers cover {} samples / {} batches vs {} samples / {} batches",
            a.samples, a.batches, b.samples, b.batches
        )));
    }
    Ok(())
}

/// `1 - E(config) / E(baseline)` on compute energy.
pub fn savings_vs_baseline(
    config: &CostLedger,
    baseline: &CostLedger,
    table: &CostTable,
) -> Result<f64> {
    check_comparable(config, baseline)?;
    let c = compute_energy(config, table)?.compute_total;
    let b = compute_energy(baseline, table)?.compute_total;
    if b == 0.0 {
        return Err(Error::Degenerate("baseline ledger has zero energy".into()));
    }
    Ok(1.0 - c / b)
}

/// `E_w(baseline) / E_w(config)` where `E_w` is the energy of weight-memory
/// traffic: forward weight reads, gradient accumulator reads and writes, and
/// update reads and writes. Activation traffic is not part of the factor.
pub fn memory_access_report(
    config: &CostLedger,
    baseline: &CostLedger,
    table: &CostTable,
) -> Result<f64> {
    check_comparable(config, baseline)?;
    let c = compute_energy(config, table)?.weight_memory_total;
    let b = compute_energy(baseline, table)?.weight_memory_total;
    if c == 0.0 {
        return Err(Error::Degenerate("configuration has zero weight-memory energy".into()));
    }
    Ok(b / c)
}

/// MACs the baseline executes that the config does not.
pub fn skipped_macs(config: &CostLedger, baseline: &CostLedger) -> Result<u64> {
    check_comparable(config, baseline)?;
    Ok(baseline.total_macs().saturating_sub(config.total_macs()))
}

pub const BYTES_PER_VALUE: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    /// Owned kernel taps, biases of maps with an owned slot, dense weights and biases.
    pub trainable_param_count: u64,
    pub distinct_fixed_kernel_count: u64,
    pub kernel_area: u64,
    /// Biases of all-Gabor maps, pinned but still stored.
    pub frozen_bias_count: u64,
    pub total_stored_values: u64,
    pub bytes: u64,
    pub baseline_values: u64,
    pub savings_ratio: f64,
}

/// Stored values of a config, with bank entries counted once however many
/// slots and layers share them. The baseline is the all-trainable network.
pub fn storage_report(config: &NetworkConfig) -> Result<StorageReport> {
    let shapes = config.spec.shapes()?;
    let mut owned = 0u64;
    let mut live_bias = 0u64;
    let mut frozen_bias = 0u64;
    let mut baseline = 0u64;
    for (l, layer) in config.spec.layers.iter().enumerate() {
        let x = config.spec.input_of(l, &shapes);
        match layer.kind {
            LayerKind::Conv { kernel, maps } => {
                let area = (kernel * kernel) as u64;
                baseline += maps as u64 * (x.maps as u64 * area + 1);
                let p = config
                    .policy(l)
                    .ok_or_else(|| Error::Policy(format!("layer {l} has no policy")))?;
                owned += p.count(|s| *s == TrainabilityStatus::Trainable) as u64 * area;
                for j in 0..maps {
                    if p.map_is_gabor(j) {
                        frozen_bias += 1;
                    } else {
                        live_bias += 1;
                    }
                }
            }
            LayerKind::MeanPool { .. } => {}
            LayerKind::FullyConnected { neurons } | LayerKind::Output { neurons } => {
                let n = (neurons * (x.len() + 1)) as u64;
                owned += n;
                baseline += n;
            }
        }
    }
    let distinct = config.referenced_entries().len() as u64;
    let area = (config.bank.kernel_size() * config.bank.kernel_size()) as u64;
    let total = owned + live_bias + distinct * area + frozen_bias;
    Ok(StorageReport {
        trainable_param_count: owned + live_bias,
        distinct_fixed_kernel_count: distinct,
        kernel_area: area,
        frozen_bias_count: frozen_bias,
        total_stored_values: total,
        bytes: total * BYTES_PER_VALUE,
        baseline_values: baseline,
        savings_ratio: 1.0 - total as f64 / baseline as f64,
    })
}
