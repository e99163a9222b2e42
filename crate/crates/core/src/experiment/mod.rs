//! Declarative runs: build a configuration, train it, account its cost and
//! compare it against a baseline run.

mod arch;
mod compare;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::cost::{
    compute_energy, run_ledger, storage_report, AccountingRegistry, CostLedger, CostTable,
    EnergyReport, ExhaustiveAccounting, RunSchedule, StorageReport, DEFAULT_ACCOUNTING,
};
use crate::data::{batches, load_mnist, synth_twoclass, Dataset};
use crate::error::{Error, Result};
use crate::gabor::{make_gabor_bank, BankParams, GaborOverrides};
use crate::policy::{apply_updates, NetworkConfig, PresetRegistry};
use crate::tensor::{Gradients, LayerKind, Network, NetworkSpec, OpTally};

pub use arch::{format_architecture, parse_architecture};
pub use compare::{compare, compare_table, write_table_csv, ComparisonRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Mnist {
        dir: PathBuf,
    },
    /// Bars against blobs; see [`synth_twoclass`].
    Synthetic {
        samples: usize,
        size: usize,
        seed: u64,
    },
}

fn default_accounting() -> String {
    DEFAULT_ACCOUNTING.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub architecture: String,
    /// Preset name, e.g. `baseline`, `half-half`, or `sweep-<i>`.
    pub preset: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub partial_fraction: Option<f64>,
    #[serde(default)]
    pub cost_table: Option<PathBuf>,
    #[serde(default = "default_accounting")]
    pub accounting: String,
    /// Bank width; twice the first conv layer's map count when unset.
    #[serde(default)]
    pub bank_size: Option<usize>,
    #[serde(default)]
    pub gabor: GaborOverrides,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

impl RunConfig {
    pub fn new(architecture: impl Into<String>, preset: impl Into<String>, data: DataSource) -> Self {
        Self {
            architecture: architecture.into(),
            preset: preset.into(),
            epochs: 10,
            batch_size: 50,
            learning_rate: 1.0,
            seed: 1,
            data,
            partial_fraction: None,
            cost_table: None,
            accounting: default_accounting(),
            bank_size: None,
            gabor: GaborOverrides::default(),
            train_limit: None,
            test_limit: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        // training runs in f32
        if self.learning_rate > f32::MAX as f64 {
            return Err(Error::Argument(format!(
                "learning rate {} overflows single precision",
                self.learning_rate
            )));
        }
        if let Some(p) = self.partial_fraction {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Argument(format!("partial fraction {p} outside (0, 1)")));
            }
        }
        parse_architecture(&self.architecture)?;
        Ok(())
    }

    pub fn cost_table(&self) -> Result<CostTable> {
        match &self.cost_table {
            Some(p) => CostTable::load(p),
            None => Ok(CostTable::default()),
        }
    }

    /// Configuration name as reported: the preset plus any freeze fraction.
    pub fn label(&self) -> String {
        match self.partial_fraction {
            Some(p) => format!("{}+partial{p}", self.preset),
            None => self.preset.clone(),
        }
    }

    pub fn network_config(&self) -> Result<NetworkConfig> {
        let spec = parse_architecture(&self.architecture)?;
        let (k, maps) = spec
            .layers
            .iter()
            .find_map(|l| match l.kind {
                LayerKind::Conv { kernel, maps } => Some((kernel, maps)),
                _ => None,
            })
            .unwrap_or((5, 1));
        let bank = make_gabor_bank(self.bank_size.unwrap_or(2 * maps), self.gabor.apply(BankParams::for_size(k)))?;
        let config = PresetRegistry::builtin().build(&self.preset, &spec, &bank)?;
        match self.partial_fraction {
            Some(p) => config.with_partial_training(p),
            None => Ok(config),
        }
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.data {
            DataSource::Mnist { dir } => load_mnist(dir)?,
            DataSource::Synthetic {
                samples,
                size,
                seed,
            } => synth_twoclass(*samples, *size, *seed)?,
        };
        let train = match self.train_limit {
            Some(n) => train.take(n),
            None => train,
        };
        let test = match self.test_limit {
            Some(n) => test.take(n),
            None => test,
        };
        Ok((train, test))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent correct on the test split.
    pub test_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config: RunConfig,
    pub architecture: String,
    pub schedule: RunSchedule,
    pub test_samples: usize,
    pub epochs: Vec<EpochRecord>,
    pub final_accuracy: f64,
    pub median_epoch_seconds: f64,
    pub accounting: String,
    pub cost_table: CostTable,
    pub ledger: CostLedger,
    pub energy: EnergyReport,
    pub storage: StorageReport,
    /// MACs counted by the arithmetic kernels while training.
    pub instrumented: OpTally,
    /// Whether `instrumented` equals the analytic exhaustive ledger.
    pub instrumented_matches_exhaustive: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Report and trained weights of a run.
pub struct RunOutcome {
    pub report: RunReport,
    pub network: Network<f32>,
    pub config: NetworkConfig,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn check_data(spec: &NetworkSpec, set: &Dataset) -> Result<()> {
    let (h, w) = set.side();
    if (spec.input.maps, spec.input.h, spec.input.w) != (1, h, w) {
        return Err(Error::shape(format!(
            "architecture expects {}x{} inputs, dataset has {h}x{w}",
            spec.input.h, spec.input.w
        )));
    }
    if spec.classes() != set.classes {
        return Err(Error::shape(format!(
            "architecture has {} outputs, dataset {} classes",
            spec.classes(),
            set.classes
        )));
    }
    Ok(())
}

/// Percent of `set` classified correctly.
pub fn accuracy(net: &Network<f32>, set: &Dataset) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for i in 0..set.len() {
        if net.predict(&set.image(i))? == set.labels[i] {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / set.len() as f64)
}

pub fn run(config: &RunConfig) -> Result<RunReport> {
    let (train, test) = config.load_data()?;
    Ok(run_with_data(config, &train, &test)?.report)
}

/// Trains on already loaded data.
pub fn run_with_data(config: &RunConfig, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    config.validate()?;
    let table = config.cost_table()?;
    let registry = AccountingRegistry::builtin();
    let model = registry.get(&config.accounting)?;
    let netcfg = config.network_config()?;
    check_data(&netcfg.spec, train)?;
    check_data(&netcfg.spec, test)?;
    if train.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }

    let schedule = RunSchedule {
        epochs: config.epochs,
        samples_per_epoch: train.len(),
        batch_size: config.batch_size,
    };
    let mut net = netcfg.instantiate::<f32>(config.seed)?;
    let mut tally = OpTally::new(net.layers.len());
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let fraction = schedule.epoch_fraction(epoch);
        let plan = netcfg.backward_plan(fraction)?;
        let order = batches(train.len(), config.batch_size, config.seed, epoch)?;
        let start = Instant::now();
        let mut loss_sum = 0.0f64;
        for batch in &order {
            let mut grads = Gradients::zeros(&net, &plan);
            for &i in batch {
                let loss = net
                    .accumulate_sample(&train.image(i), train.labels[i], &plan, &mut grads, &mut tally)
                    .map_err(|e| match e {
                        Error::Degenerate(reason) => Error::Divergence { epoch, reason },
                        other => other,
                    })?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        reason: format!("non-finite loss on sample {i}"),
                    });
                }
                loss_sum += loss as f64;
            }
            apply_updates(&netcfg, &mut net, &grads, fraction, config.learning_rate, &mut tally)?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let test_accuracy = accuracy(&net, test)?;
        let train_loss = loss_sum / train.len() as f64;
        info!(
            "{} epoch {}/{}: loss {train_loss:.5}, test accuracy {test_accuracy:.2}%, {seconds:.1}s",
            config.label(),
            epoch + 1,
            config.epochs
        );
        records.push(EpochRecord {
            epoch,
            train_loss,
            test_accuracy,
            seconds,
        });
    }

    let ledger = run_ledger(&netcfg, &schedule, model)?;
    let exhaustive = run_ledger(&netcfg, &schedule, &ExhaustiveAccounting)?;
    let energy = compute_energy(&ledger, &table)?;
    let storage = storage_report(&netcfg)?;
    let times: Vec<f64> = records.iter().map(|r| r.seconds).collect();
    let report = RunReport {
        name: config.label(),
        config: config.clone(),
        architecture: format_architecture(&netcfg.spec),
        schedule,
        test_samples: test.len(),
        final_accuracy: records.last().map_or(0.0, |r| r.test_accuracy),
        median_epoch_seconds: median(&times),
        epochs: records,
        accounting: model.name().to_string(),
        cost_table: table,
        ledger,
        energy,
        storage,
        instrumented_matches_exhaustive: exhaustive.mac_tally() == tally,
        instrumented: tally,
    };
    Ok(RunOutcome {
        report,
        network: net,
        config: netcfg,
    })
}
