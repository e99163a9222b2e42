use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gaborcnn::experiment::{
    compare_table, parse_architecture, run, write_table_csv, DataSource, RunConfig, RunReport,
};
use gaborcnn::gabor::{make_gabor_bank, BankParams};
use gaborcnn::policy::PresetRegistry;
use gaborcnn::tensor::{numerical_gradient_check, Network, Tensor};

const LENET: &str = "784 (5x5)6c 2s (5x5)12c 2s 10o";

#[derive(Parser)]
#[command(name = "gaborcnn", version, about = "Train CNNs with fixed Gabor kernels and account their training cost")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its report.
    Run(RunArgs),
    /// Compare run reports against a baseline report.
    Compare(CompareArgs),
    /// Export a Gabor bank as PGM tiles.
    Bank(BankArgs),
    /// Check back-propagation against central differences.
    CheckGrad(CheckGradArgs),
    /// List policy presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, conflicts_with = "sweep_i")]
    preset: Option<String>,
    /// Fix the first conv layer and this many maps of each later one.
    #[arg(long)]
    sweep_i: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding the MNIST IDX files.
    #[arg(long, conflicts_with = "synthetic")]
    data_dir: Option<PathBuf>,
    /// Use the synthetic two-class set instead of MNIST.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 2000)]
    synthetic_samples: usize,
    #[arg(long, default_value_t = 28)]
    synthetic_size: usize,
    #[arg(long)]
    cost_table: Option<PathBuf>,
    /// Train fixed kernels until this fraction of the epochs, then freeze.
    #[arg(long)]
    partial_fraction: Option<f64>,
    /// Cost accounting model: local or exhaustive.
    #[arg(long)]
    accounting: Option<String>,
    #[arg(long)]
    bank_size: Option<usize>,
    #[arg(long)]
    gabor_wavelength: Option<f64>,
    #[arg(long)]
    gabor_sigma: Option<f64>,
    #[arg(long)]
    gabor_gamma: Option<f64>,
    /// Carrier phase in degrees.
    #[arg(long)]
    gabor_psi: Option<f64>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// Report path (.json) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    candidate: Vec<PathBuf>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BankArgs {
    #[arg(long, default_value_t = 12)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    size: usize,
    #[arg(long, default_value = "gabor_bank")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckGradArgs {
    #[arg(long, default_value = "8x8 (3x3)2c 2s 3o")]
    arch: String,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml_str(&text)?
        }
        None => RunConfig::new(
            LENET,
            "baseline",
            DataSource::Mnist {
                dir: "data/mnist".into(),
            },
        ),
    };
    if let Some(v) = &a.arch {
        c.architecture = v.clone();
    }
    if let Some(v) = &a.preset {
        c.preset = v.clone();
    }
    if let Some(i) = a.sweep_i {
        c.preset = format!("sweep-{i}");
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.batch {
        c.batch_size = v;
    }
    if let Some(v) = a.lr {
        c.learning_rate = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(d) = &a.data_dir {
        c.data = DataSource::Mnist { dir: d.clone() };
    }
    if a.synthetic {
        c.data = DataSource::Synthetic {
            samples: a.synthetic_samples,
            size: a.synthetic_size,
            seed: c.seed,
        };
    }
    if a.cost_table.is_some() {
        c.cost_table = a.cost_table.clone();
    }
    if a.partial_fraction.is_some() {
        c.partial_fraction = a.partial_fraction;
    }
    if let Some(v) = &a.accounting {
        c.accounting = v.clone();
    }
    if a.bank_size.is_some() {
        c.bank_size = a.bank_size;
    }
    let g = &mut c.gabor;
    g.wavelength = a.gabor_wavelength.or(g.wavelength);
    g.sigma = a.gabor_sigma.or(g.sigma);
    g.gamma = a.gabor_gamma.or(g.gamma);
    g.psi_deg = a.gabor_psi.or(g.psi_deg);
    if a.train_limit.is_some() {
        c.train_limit = a.train_limit;
    }
    if a.test_limit.is_some() {
        c.test_limit = a.test_limit;
    }
    c.validate()?;
    Ok(c)
}

fn report_path(out: &Path, name: &str) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        out.to_path_buf()
    } else {
        out.join(format!("{name}.json"))
    }
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let config = run_config(a)?;
    info!("running {} on {}", config.label(), config.architecture);
    let report = run(&config)?;
    let path = report_path(a.out.as_deref().unwrap_or(Path::new("runs")), &report.name);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    report.save(&path)?;
    println!(
        "{}: final accuracy {:.2}%, median epoch {:.2}s, compute energy {:.4e}, stored values {}",
        report.name,
        report.final_accuracy,
        report.median_epoch_seconds,
        report.energy.compute_total,
        report.storage.total_stored_values
    );
    println!("report written to {}", path.display());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let baseline = RunReport::load(&a.baseline)?;
    let candidates = a
        .candidate
        .iter()
        .map(|p| RunReport::load(p))
        .collect::<gaborcnn::Result<Vec<_>>>()?;
    let rows = compare_table(&baseline, &candidates)?;
    match &a.out {
        Some(p) => {
            write_table_csv(&rows, fs::File::create(p)?)?;
            println!("{} rows written to {}", rows.len(), p.display());
        }
        None => write_table_csv(&rows, std::io::stdout())?,
    }
    Ok(())
}

fn cmd_bank(a: &BankArgs) -> Result<()> {
    let bank = make_gabor_bank(a.count, BankParams::for_size(a.size))?;
    let paths = bank.export_pgm(&a.out)?;
    for (e, p) in bank.entries().iter().zip(&paths) {
        println!("{} theta {:>7.2} -> {}", e.id, e.theta_deg, p.display());
    }
    Ok(())
}

fn cmd_check_grad(a: &CheckGradArgs) -> Result<()> {
    let spec = parse_architecture(&a.arch)?;
    let mut worst: f64 = 0.0;
    for t in 0..a.trials {
        let seed = a.seed + t as u64;
        let net = Network::<f64>::init(&spec, seed)?;
        let dims = spec.input.dims();
        let x = Tensor::from_fn(&dims, |i| ((i as u64 * 7919 + seed * 104729) % 1000) as f64 / 1000.0);
        let label = (seed as usize) % spec.classes();
        let r = numerical_gradient_check(&net, &x, label, a.tolerance)?;
        worst = worst.max(r.max_rel_error);
        println!(
            "trial {t}: {} parameters, max relative error {:.3e} at {} [{}]",
            r.checked,
            r.max_rel_error,
            r.worst_param,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    if worst > a.tolerance {
        bail!("max relative error {worst:.3e} exceeds {:.1e}", a.tolerance);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Bank(a) => cmd_bank(a),
        Command::CheckGrad(a) => cmd_check_grad(a),
        Command::Presets => {
            for (name, text) in PresetRegistry::builtin().describe() {
                println!("{name:<20} {text}");
            }
            println!("{:<20} first conv layer fixed, i maps of each later conv layer fixed", "sweep-<i>");
            Ok(())
        }
    }
}
