//! Cross-run comparison: groups metrics tables by method and reports mean ±
//! population standard deviation of the final test accuracy, as aligned text
//! and as CSV.

use std::collections::HashMap;

use crate::config::Method;
use crate::error::{Error, Result};
use crate::experiment::MetricsTable;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodStats {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub mean_final_acc: f64,
    /// Population standard deviation (√ of the mean squared deviation).
    pub std_final_acc: f64,
}

impl MethodStats {
    pub fn trials(&self) -> usize {
        self.seeds.len()
    }
}

/// Rows in first-appearance order of the input tables.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<MethodStats>,
}

pub fn compare_report(tables: &[MetricsTable]) -> Result<CompareReport> {
    if tables.is_empty() {
        return Err(Error::EmptyInput("compare_report"));
    }
    let mut order: Vec<Method> = Vec::new();
    let mut groups: HashMap<Method, Vec<(u64, f64)>> = HashMap::new();
    for table in tables {
        let s = &table.summary;
        let group = groups.entry(s.method).or_default();
        if group.is_empty() {
            order.push(s.method);
        }
        group.push((s.seed, s.final_test_acc));
    }
    let rows = order
        .into_iter()
        .map(|method| {
            let trials = &groups[&method];
            let finals: Vec<f64> = trials.iter().map(|&(_, acc)| acc).collect();
            MethodStats {
                method,
                seeds: trials.iter().map(|&(seed, _)| seed).collect(),
                mean_final_acc: mean(&finals),
                std_final_acc: population_std(&finals),
            }
        })
        .collect();
    Ok(CompareReport { rows })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// Human-facing table, columns aligned, accuracies at four decimals.
pub fn render_report_text(report: &CompareReport) -> String {
    let name_width = report
        .rows
        .iter()
        .map(|r| r.method.name().len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!(
        "{:<name_width$}  {:>6}  {:>14}  {:>13}\n",
        "method", "trials", "mean_final_acc", "std_final_acc"
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{:<name_width$}  {:>6}  {:>14.4}  {:>13.4}\n",
            row.method.name(),
            row.trials(),
            row.mean_final_acc,
            row.std_final_acc
        ));
    }
    out
}

/// Machine-facing form with full-precision reals.
pub fn render_report_csv(report: &CompareReport) -> String {
    let mut out = String::from("method,trials,mean_final_acc,std_final_acc\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.method.name(),
            row.trials(),
            row.mean_final_acc,
            row.std_final_acc
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::RunSummary;
    use crate::fed::{Phase, RoundRecord};

    fn table(method: Method, seed: u64, final_acc: f64) -> MetricsTable {
        MetricsTable {
            records: vec![RoundRecord {
                round: 0,
                phase: Phase::One,
                estimated_accuracy: 0.5,
                tau_p: 0,
                test_accuracy: final_acc,
                cos_sim: None,
            }],
            summary: RunSummary {
                method,
                seed,
                final_test_acc: final_acc,
                best_test_acc: final_acc,
                prestop_round: None,
                mean_cos_sim: None,
            },
        }
    }

    #[test]
    fn single_trial_has_zero_std() {
        let report = compare_report(&[table(Method::FedAvg, 1, 0.8)]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].trials(), 1);
        assert_eq!(report.rows[0].mean_final_acc, 0.8);
        assert_eq!(report.rows[0].std_final_acc, 0.0);
    }

    #[test]
    fn three_trials_hand_arithmetic() {
        let tables = [
            table(Method::FedEfc, 1, 0.7),
            table(Method::FedEfc, 2, 0.8),
            table(Method::FedEfc, 3, 0.9),
        ];
        let report = compare_report(&tables).unwrap();
        let row = &report.rows[0];
        assert!((row.mean_final_acc - 0.8).abs() < 1e-12);
        let expected_std = (0.02f64 / 3.0).sqrt(); // ≈ 0.0816
        assert!((row.std_final_acc - expected_std).abs() < 1e-12);
        assert_eq!(row.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn methods_group_in_first_appearance_order() {
        let tables = [
            table(Method::FedEfc, 1, 0.8),
            table(Method::FedAvg, 1, 0.6),
            table(Method::FedEfc, 2, 0.9),
            table(Method::FedAvgClean, 1, 0.95),
        ];
        let report = compare_report(&tables).unwrap();
        let methods: Vec<Method> = report.rows.iter().map(|r| r.method).collect();
        assert_eq!(
            methods,
            vec![Method::FedEfc, Method::FedAvg, Method::FedAvgClean]
        );
        assert_eq!(report.rows[0].trials(), 2);
        assert!((report.rows[0].mean_final_acc - 0.85).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            compare_report(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn text_rendering_is_aligned_and_stable() {
        let tables = [
            table(Method::FedAvg, 1, 0.6),
            table(Method::ForwardPercentile, 1, 0.7),
        ];
        let report = compare_report(&tables).unwrap();
        let text = render_report_text(&report);
        let expected = "\
method              trials  mean_final_acc  std_final_acc
fedavg                   1          0.6000         0.0000
forward_percentile       1          0.7000         0.0000
";
        assert_eq!(text, expected);
    }

    #[test]
    fn csv_rendering_keeps_full_precision() {
        let third = 2.0 / 3.0;
        let report = compare_report(&[table(Method::FedAvg, 7, third)]).unwrap();
        let csv = render_report_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,trials,mean_final_acc,std_final_acc"
        );
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "fedavg");
        assert_eq!(fields[1], "1");
        let back: f64 = fields[2].parse().unwrap();
        assert_eq!(back.to_bits(), third.to_bits());
    }
}
