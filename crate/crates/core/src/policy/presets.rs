use std::collections::BTreeMap;

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::gabor::{EntryId, KernelBank};
use crate::tensor::{LayerKind, NetworkSpec};

/// A named recipe turning a layer stack and a bank into a [`NetworkConfig`].
pub trait PolicyPreset: Send + Sync {
    fn name(&self) -> String;
    fn description(&self) -> String;
    fn build(&self, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig>;
}

/// Orientations for `count` fixed maps of a layer following a `base`-map first
/// layer. Level 0 repeats the first layer's orientations `j * 180 / base`;
/// each further level bisects the gaps left by the previous ones.
/// `start_level = 1` skips the first-layer orientations.
pub fn fixed_orientations(base: usize, count: usize, start_level: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut level = start_level;
    while out.len() < count {
        if level == 0 {
            out.extend((0..base).map(|j| (j * 180) as f64 / base as f64));
        } else {
            let denom = base << level;
            let n = base << (level - 1);
            out.extend((0..n).map(|j| ((2 * j + 1) * 180) as f64 / denom as f64));
        }
        level += 1;
    }
    out.truncate(count);
    out
}

fn lookup(bank: &KernelBank, theta: f64) -> Result<EntryId> {
    bank.find_orientation(theta).ok_or_else(|| {
        Error::Policy(format!(
            "the {}-entry bank has no kernel at {theta} degrees",
            bank.len()
        ))
    })
}

fn conv_maps(spec: &NetworkSpec, layer: usize) -> usize {
    match spec.layers[layer].kind {
        LayerKind::Conv { maps, .. } => maps,
        _ => 0,
    }
}

/// Common shape of every Gabor preset: the first conv layer fully fixed, then
/// `fixed_in(layer_maps)` maps of each later conv layer fixed.
fn gabor_config(
    name: String,
    spec: &NetworkSpec,
    bank: &KernelBank,
    fixed_in: impl Fn(usize) -> Result<usize>,
    start_level: u32,
) -> Result<NetworkConfig> {
    let mut config = NetworkConfig::all_trainable(name, spec, bank.clone())?;
    let conv = spec.conv_layer_indices();
    let Some(&first) = conv.first() else {
        return Err(Error::Policy("Gabor presets need a convolution layer".into()));
    };
    let base = conv_maps(spec, first);
    for (k, policy) in config.policies.iter_mut().enumerate() {
        let (count, thetas) = if k == 0 {
            (base, fixed_orientations(base, base, 0))
        } else {
            let n = fixed_in(policy.out_maps)?;
            (n, fixed_orientations(base, n, start_level))
        };
        for (j, &theta) in thetas.iter().enumerate().take(count) {
            policy.fix_map(j, lookup(bank, theta)?);
        }
    }
    config.validate()?;
    Ok(config)
}

pub struct Baseline;

impl PolicyPreset for Baseline {
    fn name(&self) -> String {
        "baseline".into()
    }
    fn description(&self) -> String {
        "every kernel trainable".into()
    }
    fn build(&self, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
        NetworkConfig::all_trainable(self.name(), spec, bank.clone())
    }
}

pub struct FirstLayerGabor;

impl PolicyPreset for FirstLayerGabor {
    fn name(&self) -> String {
        "gabor1".into()
    }
    fn description(&self) -> String {
        "first conv layer fixed Gabor, the rest trainable".into()
    }
    fn build(&self, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
        gabor_config(self.name(), spec, bank, |_| Ok(0), 0)
    }
}

pub struct AllGabor;

impl PolicyPreset for AllGabor {
    fn name(&self) -> String {
        "gabor-all".into()
    }
    fn description(&self) -> String {
        "every conv kernel fixed Gabor".into()
    }
    fn build(&self, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
        gabor_config(self.name(), spec, bank, Ok, 0)
    }
}

/// First conv layer fixed; half the maps of every later conv layer fixed.
/// With `distinct_kernels` the later fixed maps avoid the first layer's
/// orientations, which needs a bank twice the first layer's width.
pub struct HalfHalf {
    pub distinct_kernels: bool,
}

impl PolicyPreset for HalfHalf {
    fn name(&self) -> String {
        if self.distinct_kernels {
            "half-half-distinct".into()
        } else {
            "half-half".into()
        }
    }
    fn description(&self) -> String {
        "first conv layer fixed, half of each later conv layer fixed".into()
    }
    fn build(&self, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
        gabor_config(
            self.name(),
            spec,
            bank,
            |m| Ok(m / 2),
            u32::from(self.distinct_kernels),
        )
    }
}

/// First conv layer fixed; the first `fixed_maps` maps of every later conv
/// layer fixed.
pub struct Sweep {
    pub fixed_maps: usize,
}

impl PolicyPreset for Sweep {
    fn name(&self) -> String {
        format!("sweep-{}", self.fixed_maps)
    }
    fn description(&self) -> String {
        format!(
            "first conv layer fixed, {} maps of each later conv layer fixed",
            self.fixed_maps
        )
    }
    fn build(&self, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
        let i = self.fixed_maps;
        gabor_config(
            self.name(),
            spec,
            bank,
            |m| {
                if i > m {
                    Err(Error::Argument(format!(
                        "cannot fix {i} maps of a {m}-map layer"
                    )))
                } else {
                    Ok(i)
                }
            },
            0,
        )
    }
}

/// Presets addressable by name. `sweep-<i>` resolves for any `i`.
pub struct PresetRegistry {
    presets: BTreeMap<String, Box<dyn PolicyPreset>>,
}

impl Default for PresetRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PresetRegistry {
    pub fn empty() -> Self {
        Self {
            presets: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Baseline));
        r.register(Box::new(FirstLayerGabor));
        r.register(Box::new(AllGabor));
        r.register(Box::new(HalfHalf {
            distinct_kernels: false,
        }));
        r.register(Box::new(HalfHalf {
            distinct_kernels: true,
        }));
        r
    }

    pub fn register(&mut self, preset: Box<dyn PolicyPreset>) {
        self.presets.insert(preset.name(), preset);
    }

    pub fn names(&self) -> Vec<String> {
        self.presets.keys().cloned().collect()
    }

    pub fn describe(&self) -> Vec<(String, String)> {
        self.presets
            .values()
            .map(|p| (p.name(), p.description()))
            .collect()
    }

    pub fn build(&self, name: &str, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
        if let Some(p) = self.presets.get(name) {
            return p.build(spec, bank);
        }
        if let Some(i) = name.strip_prefix("sweep-") {
            let fixed_maps = i
                .parse()
                .map_err(|_| Error::Argument(format!("bad sweep index in {name:?}")))?;
            return Sweep { fixed_maps }.build(spec, bank);
        }
        Err(Error::Argument(format!(
            "unknown preset {name:?}; known: {}, sweep-<i>",
            self.names().join(", ")
        )))
    }
}

/// Builds a built-in preset by name.
pub fn build_config(name: &str, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
    PresetRegistry::builtin().build(name, spec, bank)
}

/// Sweep configs for `fixed_maps` = 0..=max over the later conv layers.
pub fn sweep_configs(spec: &NetworkSpec, bank: &KernelBank) -> Result<Vec<NetworkConfig>> {
    let conv = spec.conv_layer_indices();
    let max = conv[1..].iter().map(|&l| conv_maps(spec, l)).min().unwrap_or(0);
    (0..=max)
        .map(|i| Sweep { fixed_maps: i }.build(spec, bank))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabor::{make_gabor_bank, BankParams};
    use crate::policy::TrainabilityStatus;

    fn lenet() -> NetworkSpec {
        NetworkSpec::lenet(28, 6, 10).unwrap()
    }

    fn bank(n: usize) -> KernelBank {
        make_gabor_bank(n, BankParams::default()).unwrap()
    }

    fn statuses(cfg: &NetworkConfig, k: usize) -> &[TrainabilityStatus] {
        &cfg.policies[k].slots
    }

    #[test]
    fn orientation_levels() {
        assert_eq!(
            fixed_orientations(6, 12, 0),
            vec![0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 15.0, 45.0, 75.0, 105.0, 135.0, 165.0]
        );
        assert_eq!(fixed_orientations(6, 3, 1), vec![15.0, 45.0, 75.0]);
        assert_eq!(fixed_orientations(6, 14, 0)[12..], [7.5, 22.5]);
    }

    #[test]
    fn gabor1_fixes_only_first_layer() {
        let cfg = build_config("gabor1", &lenet(), &bank(6)).unwrap();
        assert!(statuses(&cfg, 0).iter().all(|s| s.entry().is_some()));
        assert!(statuses(&cfg, 1).iter().all(|s| *s == TrainabilityStatus::Trainable));
        assert_eq!(cfg.referenced_entries().len(), 6);
    }

    #[test]
    fn half_half_layout() {
        let cfg = build_config("half-half", &lenet(), &bank(6)).unwrap();
        let l2 = statuses(&cfg, 1);
        assert_eq!(l2.iter().filter(|s| s.entry().is_some()).count(), 36);
        assert!(l2[36..].iter().all(|s| *s == TrainabilityStatus::Trainable));
        // map j of layer 2 shares map j's kernel of layer 1
        for j in 0..6 {
            assert_eq!(l2[j * 6].entry(), statuses(&cfg, 0)[j].entry());
        }
        assert_eq!(cfg.referenced_entries().len(), 6);
    }

    #[test]
    fn distinct_half_half_needs_wider_bank() {
        let p = HalfHalf {
            distinct_kernels: true,
        };
        assert!(matches!(p.build(&lenet(), &bank(6)), Err(Error::Policy(_))));
        let cfg = p.build(&lenet(), &bank(12)).unwrap();
        assert_eq!(cfg.referenced_entries().len(), 12);
    }

    #[test]
    fn gabor_all_needs_wider_bank() {
        assert!(build_config("gabor-all", &lenet(), &bank(6)).is_err());
        let cfg = build_config("gabor-all", &lenet(), &bank(12)).unwrap();
        assert!(cfg.policies.iter().flat_map(|p| &p.slots).all(|s| s.entry().is_some()));
        assert_eq!(cfg.referenced_entries().len(), 12);
    }

    #[test]
    fn sweep_end_points_match_presets() {
        let (spec, b) = (lenet(), bank(12));
        let sweeps = sweep_configs(&spec, &b).unwrap();
        assert_eq!(sweeps.len(), 13);
        for (i, name) in [(0, "gabor1"), (6, "half-half"), (12, "gabor-all")] {
            assert_eq!(sweeps[i].policies, build_config(name, &spec, &b).unwrap().policies);
        }
        assert!(build_config("sweep-13", &spec, &b).is_err());
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(
            build_config("gabor9", &lenet(), &bank(6)),
            Err(Error::Argument(_))
        ));
        assert!(build_config("sweep-x", &lenet(), &bank(6)).is_err());
    }

    #[test]
    fn registry_accepts_custom_presets() {
        struct Head;
        impl PolicyPreset for Head {
            fn name(&self) -> String {
                "head".into()
            }
            fn description(&self) -> String {
                "map 0 of layer 1 fixed".into()
            }
            fn build(&self, spec: &NetworkSpec, bank: &KernelBank) -> Result<NetworkConfig> {
                let mut c = NetworkConfig::all_trainable("head", spec, bank.clone())?;
                c.policies[0].fix_map(0, EntryId(0));
                Ok(c)
            }
        }
        let mut r = PresetRegistry::builtin();
        r.register(Box::new(Head));
        let c = r.build("head", &lenet(), &bank(6)).unwrap();
        assert_eq!(c.gabor_slot_count(), 1);
    }
}
