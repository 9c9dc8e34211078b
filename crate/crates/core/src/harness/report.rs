//! Result reporting: a fixed-format CSV table and a JSON provenance file.
//!
//! The CSV carries nothing run-dependent beyond the metrics themselves, so
//! equal configurations produce byte-identical tables; timestamps live only
//! in the JSON provenance.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::experiment::ExperimentResult;
use super::HarnessError;

/// Published results for this architecture on the original (non-
/// redistributable) dataset; kept in the report schema so runs against a
/// real corpus can be compared directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTarget {
    pub window: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn reference_targets() -> Vec<ReferenceTarget> {
    let row = |window: &str, accuracy, precision, recall, f1| ReferenceTarget {
        window: window.to_string(),
        accuracy,
        precision,
        recall,
        f1,
    };
    vec![
        row("E10", 0.865, 0.858, 0.871, 0.860),
        row("L10", 0.870, 0.861, 0.872, 0.864),
        row("E30", 0.907, 0.899, 0.910, 0.903),
        row("L30", 0.900, 0.892, 0.902, 0.895),
        row("E100", 0.922, 0.914, 0.926, 0.918),
        row("L100", 0.915, 0.907, 0.919, 0.911),
        row("full", 0.937, 0.929, 0.941, 0.933),
    ]
}

/// Everything needed to reread or audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Seconds since the Unix epoch at write time; the only timestamp in
    /// any report output.
    pub created_unix: u64,
    pub reference_targets: Vec<ReferenceTarget>,
    pub results: Vec<ExperimentResult>,
}

impl Provenance {
    pub fn new(results: Vec<ExperimentResult>) -> Self {
        Provenance {
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            reference_targets: reference_targets(),
            results,
        }
    }
}

/// Table rows shaped like the published comparison: one row per window,
/// metrics at three decimals.
pub fn write_csv<W: Write>(results: &[ExperimentResult], out: &mut W) -> Result<(), HarnessError> {
    writeln!(out, "model,window,accuracy,precision,recall,f1")?;
    for r in results {
        writeln!(
            out,
            "SERCNN,{},{:.3},{:.3},{:.3},{:.3}",
            r.window, r.mean.accuracy, r.mean.macro_precision, r.mean.macro_recall, r.mean.macro_f1
        )?;
    }
    Ok(())
}

pub fn write_json<W: Write>(provenance: &Provenance, out: &mut W) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(&mut *out, provenance)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WindowSpec;
    use crate::harness::experiment::{ExperimentConfig, FoldResult};
    use crate::harness::metrics::Metrics;
    use crate::harness::train::EpochStats;

    fn sample_result() -> ExperimentResult {
        let metrics = Metrics {
            accuracy: 0.875,
            macro_precision: 0.8701,
            macro_recall: 0.8666,
            macro_f1: 0.86849,
        };
        ExperimentResult {
            window: WindowSpec::Earliest(10).label(),
            config: ExperimentConfig::default(),
            parameter_budget: 2_095_452,
            folds: (0..5)
                .map(|fold| FoldResult {
                    fold,
                    test_users: 4,
                    vocab_size: 120,
                    parameter_count: 2_000,
                    best_epoch: 3,
                    metrics,
                    curve: vec![EpochStats {
                        epoch: 1,
                        train_loss: 0.7,
                        val_loss: 0.6,
                        val_accuracy: 0.5,
                    }],
                })
                .collect(),
            mean: metrics,
        }
    }

    #[test]
    fn csv_rows_and_three_decimal_formatting() {
        let mut buf = Vec::new();
        write_csv(&[sample_result()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "model,window,accuracy,precision,recall,f1");
        assert_eq!(lines[1], "SERCNN,E10,0.875,0.870,0.867,0.868");
    }

    #[test]
    fn csv_is_timestamp_free_and_stable() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&[sample_result()], &mut a).unwrap();
        write_csv(&[sample_result()], &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn provenance_json_round_trips() {
        let prov = Provenance::new(vec![sample_result()]);
        let mut buf = Vec::new();
        write_json(&prov, &mut buf).unwrap();
        let back: Provenance = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, prov);
        assert_eq!(back.results[0].folds.len(), 5);
    }

    #[test]
    fn reference_table_covers_every_matrix_row() {
        let targets = reference_targets();
        assert_eq!(targets.len(), 7);
        let windows: Vec<&str> = targets.iter().map(|t| t.window.as_str()).collect();
        for spec in crate::harness::experiment::matrix_windows() {
            assert!(
                windows.contains(&spec.label().as_str()),
                "missing reference row for {spec}"
            );
        }
        // The full-history row is the strongest published configuration.
        let full = targets.iter().find(|t| t.window == "full").unwrap();
        assert_eq!(full.accuracy, 0.937);
        assert!(targets.iter().all(|t| t.accuracy <= full.accuracy));
    }
}
