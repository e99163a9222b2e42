use gaborcnn::data::synth_twoclass;
use gaborcnn::experiment::{
    compare, compare_table, format_architecture, parse_architecture, run, run_with_data,
    write_table_csv, DataSource, RunConfig, RunReport,
};
use gaborcnn::tensor::{BackwardPlan, Gradients, Network, OpTally, Phase, Tensor};
use gaborcnn::Error;

const SMALL: &str = "256 (5x5)4c 2s (5x5)8c 2s 2o";

fn synthetic(preset: &str, epochs: usize) -> RunConfig {
    let mut c = RunConfig::new(SMALL, preset, DataSource::Synthetic { samples: 200, size: 16, seed: 7 });
    c.epochs = epochs;
    c.batch_size = 10;
    c
}

fn without_timing(mut r: RunReport) -> RunReport {
    r.median_epoch_seconds = 0.0;
    for e in &mut r.epochs {
        e.seconds = 0.0;
    }
    r
}

#[test]
fn synthetic_set_is_learnable() {
    let mut c = RunConfig::new("256 (5x5)4c 4s 2o", "baseline", DataSource::Synthetic { samples: 400, size: 16, seed: 7 });
    c.epochs = 8;
    c.batch_size = 5;
    let r = run(&c).unwrap();
    assert_eq!(r.epochs.len(), 8);
    assert!(r.final_accuracy > 90.0, "{}", r.final_accuracy);
    assert!(r.epochs.last().unwrap().train_loss < r.epochs[0].train_loss);
    assert!(r.instrumented_matches_exhaustive);
}

#[test]
fn runs_are_reproducible() {
    let (train, test) = synth_twoclass(120, 16, 3).unwrap();
    let c = synthetic("half-half", 2);
    let a = run_with_data(&c, &train, &test).unwrap();
    let b = run_with_data(&c, &train, &test).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(without_timing(a.report), without_timing(b.report));
    let mut other = c.clone();
    other.seed = 2;
    assert_ne!(run_with_data(&other, &train, &test).unwrap().network, b.network);
}

#[test]
fn report_json_round_trip() {
    let r = run(&synthetic("gabor1", 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    r.save(&path).unwrap();
    assert_eq!(RunReport::load(&path).unwrap(), r);
    let shares: f64 = Phase::ALL.iter().map(|&p| r.energy.phase_share(p)).sum();
    assert!((shares - 1.0).abs() < 1e-9);
}

#[test]
fn baseline_against_itself_is_neutral() {
    let r = run(&synthetic("baseline", 1)).unwrap();
    let row = compare(&r, &r).unwrap();
    assert_eq!(row.accuracy_loss_pp, 0.0);
    assert_eq!(row.energy_savings_pct, 0.0);
    assert_eq!(row.storage_savings_pct, 0.0);
    assert_eq!(row.training_time_reduction_pct, 0.0);
    assert_eq!(row.memory_access_factor, 1.0);
    assert_eq!(row.skipped_macs, 0);
}

#[test]
fn comparisons_must_be_iso_epoch() {
    let a = run(&synthetic("baseline", 1)).unwrap();
    let b = run(&synthetic("gabor-all", 2)).unwrap();
    assert!(matches!(compare(&b, &a), Err(Error::Comparison(_))));
    let mut c = synthetic("gabor-all", 1);
    c.accounting = "exhaustive".into();
    let c = run(&c).unwrap();
    assert!(matches!(compare(&c, &a), Err(Error::Comparison(_))));
}

#[test]
fn fixed_kernels_save_energy_and_storage() {
    let base = run(&synthetic("baseline", 1)).unwrap();
    let cands: Vec<RunReport> = ["gabor1", "half-half", "gabor-all"]
        .iter()
        .map(|p| run(&synthetic(p, 1)).unwrap())
        .collect();
    let rows = compare_table(&base, &cands).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].energy_savings_pct > w[0].energy_savings_pct);
        assert!(w[1].storage_savings_pct > w[0].storage_savings_pct);
    }
    assert!(rows.iter().all(|r| r.memory_access_factor > 1.0 && r.skipped_macs > 0));
    let mut csv = Vec::new();
    write_table_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("configuration,"));
}

#[test]
fn non_finite_outputs_are_reported() {
    let spec = parse_architecture(SMALL).unwrap();
    let mut net = Network::<f32>::init(&spec, 1).unwrap();
    net.conv_mut(0).unwrap().slot_mut(0)[0] = f32::NAN;
    let plan = BackwardPlan::full(&spec).unwrap();
    let mut g = Gradients::zeros(&net, &plan);
    let x = Tensor::from_fn(&[1, 16, 16], |i| (i % 3) as f32 / 2.0);
    let err = net.accumulate_sample(&x, 0, &plan, &mut g, &mut OpTally::new(5)).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)));
}

#[test]
fn step_sizes_beyond_single_precision_are_rejected() {
    let mut c = synthetic("baseline", 1);
    c.learning_rate = 1e39;
    assert!(matches!(run(&c), Err(Error::Argument(_))));
}

#[test]
fn shape_mismatch_is_rejected() {
    let c = RunConfig::new("784 (5x5)6c 2s 2o", "baseline", DataSource::Synthetic { samples: 20, size: 16, seed: 1 });
    assert!(matches!(run(&c), Err(Error::Shape(_))));
}

#[test]
fn unknown_names_are_rejected() {
    let c = synthetic("no-such-preset", 1);
    assert!(run(&c).is_err());
    let mut c = synthetic("baseline", 1);
    c.accounting = "nope".into();
    assert!(run(&c).is_err());
}

#[test]
fn architecture_strings() {
    let s = parse_architecture("[784 (5×5)6c 2s (5×5)12c 2s 10o]").unwrap();
    assert_eq!(format_architecture(&s), "784 (5x5)6c 2s (5x5)12c 2s 10o");
    assert_eq!(parse_architecture(&format_architecture(&s)).unwrap(), s);
    assert!(parse_architecture("28x28 (5x5)6c 2s 10o").is_ok());
    for bad in ["", "784", "784 (5x5)6c 5s 10o", "784 (5x5)6c 2s", "785 10o", "784 (4x5)6c 2s 10o", "784 3s"] {
        assert!(matches!(parse_architecture(bad), Err(Error::Parse { .. })), "{bad:?}");
    }
}

#[test]
fn partial_training_label_and_ledger() {
    let mut c = synthetic("gabor-all", 4);
    c.partial_fraction = Some(0.5);
    let r = run(&c).unwrap();
    assert_eq!(r.name, "gabor-all+partial0.5");
    let fixed = run(&synthetic("gabor-all", 4)).unwrap();
    let base = run(&synthetic("baseline", 4)).unwrap();
    let wg = |r: &RunReport| r.ledger.phase_macs(Phase::WeightGradient);
    assert!(wg(&fixed) < wg(&r) && wg(&r) < wg(&base));
}
