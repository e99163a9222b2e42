use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunReport;
use crate::cost::{memory_access_report, savings_vs_baseline, skipped_macs};
use crate::error::{Error, Result};

/// One configuration against a baseline. Percentages are in percent,
/// accuracy loss in percentage points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub configuration: String,
    pub baseline: String,
    pub epochs: usize,
    pub accuracy: f64,
    pub accuracy_loss_pp: f64,
    pub energy_savings_pct: f64,
    pub training_time_reduction_pct: f64,
    pub storage_savings_pct: f64,
    pub memory_access_factor: f64,
    pub skipped_macs: u64,
}

pub fn compare(report: &RunReport, baseline: &RunReport) -> Result<ComparisonRow> {
    if report.schedule.epochs != baseline.schedule.epochs {
        return Err(Error::Comparison(format!(
            "{} ran {} epochs, {} ran {}; comparisons are iso-epoch",
            report.name, report.schedule.epochs, baseline.name, baseline.schedule.epochs
        )));
    }
    if report.schedule != baseline.schedule || report.test_samples != baseline.test_samples {
        return Err(Error::Comparison(format!(
            "{} and {} saw different data or batching",
            report.name, baseline.name
        )));
    }
    if report.accounting != baseline.accounting || report.cost_table != baseline.cost_table {
        return Err(Error::Comparison(
            "reports use different accounting models or cost tables".into(),
        ));
    }
    let table = &baseline.cost_table;
    let time_reduction = if baseline.median_epoch_seconds > 0.0 {
        100.0 * (1.0 - report.median_epoch_seconds / baseline.median_epoch_seconds)
    } else {
        0.0
    };
    let storage = 1.0
        - report.storage.total_stored_values as f64 / baseline.storage.total_stored_values as f64;
    Ok(ComparisonRow {
        configuration: report.name.clone(),
        baseline: baseline.name.clone(),
        epochs: report.schedule.epochs,
        accuracy: report.final_accuracy,
        accuracy_loss_pp: baseline.final_accuracy - report.final_accuracy,
        energy_savings_pct: 100.0 * savings_vs_baseline(&report.ledger, &baseline.ledger, table)?,
        training_time_reduction_pct: time_reduction,
        storage_savings_pct: 100.0 * storage,
        memory_access_factor: memory_access_report(&report.ledger, &baseline.ledger, table)?,
        skipped_macs: skipped_macs(&report.ledger, &baseline.ledger)?,
    })
}

/// One row per candidate, refusing the whole table on any mismatch.
pub fn compare_table(baseline: &RunReport, candidates: &[RunReport]) -> Result<Vec<ComparisonRow>> {
    candidates.iter().map(|c| compare(c, baseline)).collect()
}

pub fn write_table_csv<W: std::io::Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))
}
