//! Report structures: per-user rows, aggregate blocks, hypothesis tests,
//! and plot-ready data tables.
//!
//! Everything here serializes to JSON with a stable field order, so two runs
//! with the same seed produce byte-identical reports once the timestamp is
//! normalized.

use crate::classifiers::{ClassifierSpec, GridCell};
use crate::ingest::DatasetStats;
use crate::protocol::{ConfusionMatrix, ImbalanceNote, MetricSet};
use crate::stats::{ks_normality_test, t_test_independent, TestResult};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Five-number summary over per-user values (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub average: f64,
    pub maximum: f64,
    pub minimum: f64,
    pub median: f64,
    pub std_dev: f64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "summary of an empty slice");
        let n = values.len() as f64;
        let average = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
        };
        let var = values.iter().map(|v| (v - average) * (v - average)).sum::<f64>() / n;
        Self {
            average,
            maximum: sorted[sorted.len() - 1],
            minimum: sorted[0],
            median,
            std_dev: var.sqrt(),
        }
    }
}

/// One classifier family's outcome for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub chosen_spec: ClassifierSpec,
    pub converged: bool,
    pub val_accuracy: f64,
    pub test: MetricSet,
    pub confusion: ConfusionMatrix,
    pub grid: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user_id: u32,
    pub threshold: f64,
    pub selected_feature_count: usize,
    pub imbalance: Vec<ImbalanceNote>,
    pub families: Vec<FamilyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAggregate {
    pub family: String,
    pub val_accuracy: SummaryStats,
    pub test_accuracy: SummaryStats,
    pub test_f1: SummaryStats,
}

/// Recomputes the aggregate block from per-user rows.
pub fn compute_aggregates(users: &[UserReport]) -> Vec<FamilyAggregate> {
    let mut out = Vec::new();
    if users.is_empty() {
        return out;
    }
    for (idx, family) in users[0].families.iter().enumerate() {
        let collect = |f: &dyn Fn(&FamilyReport) -> f64| -> Vec<f64> {
            users.iter().map(|u| f(&u.families[idx])).collect()
        };
        out.push(FamilyAggregate {
            family: family.family.clone(),
            val_accuracy: SummaryStats::from_values(&collect(&|f| f.val_accuracy)),
            test_accuracy: SummaryStats::from_values(&collect(&|f| f.test.accuracy)),
            test_f1: SummaryStats::from_values(&collect(&|f| f.test.f1)),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthReport {
    pub users: Vec<UserReport>,
    pub aggregates: Vec<FamilyAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub family: String,
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestEntry {
    pub family_a: String,
    pub family_b: String,
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Normality tests per family and metric, then pairwise t-tests between
/// families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisBlock {
    pub ks_tests: Vec<KsEntry>,
    pub t_tests: Vec<TTestEntry>,
}

/// Builds the hypothesis block from per-user rows. Needs at least three
/// users (for the KS test) and runs t-tests for every family pair.
pub fn build_hypothesis_block(auth: &AuthReport) -> Option<HypothesisBlock> {
    if auth.users.len() < 3 || auth.users[0].families.is_empty() {
        return None;
    }
    let families: Vec<String> = auth.users[0]
        .families
        .iter()
        .map(|f| f.family.clone())
        .collect();
    let metric_values = |family_idx: usize, metric: &str| -> Vec<f64> {
        auth.users
            .iter()
            .map(|u| match metric {
                "test_accuracy" => u.families[family_idx].test.accuracy,
                "test_f1" => u.families[family_idx].test.f1,
                _ => unreachable!(),
            })
            .collect()
    };

    let mut ks_tests = Vec::new();
    for (idx, family) in families.iter().enumerate() {
        for metric in ["test_accuracy", "test_f1"] {
            let values = metric_values(idx, metric);
            let entry = match ks_normality_test(&values) {
                Ok(result) => KsEntry {
                    family: family.clone(),
                    metric: metric.into(),
                    result: Some(result),
                    error: None,
                },
                Err(e) => KsEntry {
                    family: family.clone(),
                    metric: metric.into(),
                    result: None,
                    error: Some(e.to_string()),
                },
            };
            ks_tests.push(entry);
        }
    }

    let mut t_tests = Vec::new();
    for a in 0..families.len() {
        for b in a + 1..families.len() {
            for metric in ["test_accuracy", "test_f1"] {
                let va = metric_values(a, metric);
                let vb = metric_values(b, metric);
                let entry = match t_test_independent(&va, &vb) {
                    Ok(result) => TTestEntry {
                        family_a: families[a].clone(),
                        family_b: families[b].clone(),
                        metric: metric.into(),
                        result: Some(result),
                        error: None,
                    },
                    Err(e) => TTestEntry {
                        family_a: families[a].clone(),
                        family_b: families[b].clone(),
                        metric: metric.into(),
                        result: None,
                        error: Some(e.to_string()),
                    },
                };
                t_tests.push(entry);
            }
        }
    }
    Some(HypothesisBlock { ks_tests, t_tests })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBlock {
    pub raw: DatasetStats,
    pub windows: DatasetStats,
    pub split_rows: SplitCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub created_unix: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub dataset: DatasetBlock,
    pub incomplete: bool,
    pub auth: AuthReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis_tests: Option<HypothesisBlock>,
}

impl EvaluationReport {
    pub fn render_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Multi-class pilot outcome: one model over all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotReport {
    pub classifier: String,
    pub split_fraction: f64,
    pub user_ids: Vec<u32>,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// `confusion[actual][predicted]`, indices aligned with `user_ids`.
    pub confusion: Vec<Vec<u64>>,
}

fn write_table(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}

/// Emits the plot-ready CSV tables next to the report: selected feature
/// counts, per-user validation accuracy, and per-user test performance.
pub fn write_plot_tables(report: &EvaluationReport, dir: &Path) -> std::io::Result<()> {
    let mut t = String::from("user_id,selected_features,threshold\n");
    for u in &report.auth.users {
        let _ = writeln!(t, "{},{},{}", u.user_id, u.selected_feature_count, u.threshold);
    }
    write_table(&dir.join("selected_features_per_user.csv"), &t)?;

    let mut t = String::from("user_id,family,val_accuracy\n");
    for u in &report.auth.users {
        for f in &u.families {
            let _ = writeln!(t, "{},{},{}", u.user_id, f.family, f.val_accuracy);
        }
    }
    write_table(&dir.join("validation_accuracy_per_user.csv"), &t)?;

    let mut t = String::from("user_id,family,test_accuracy,test_f1\n");
    for u in &report.auth.users {
        for f in &u.families {
            let _ = writeln!(
                t,
                "{},{},{},{}",
                u.user_id, f.family, f.test.accuracy, f.test.f1
            );
        }
    }
    write_table(&dir.join("test_performance_per_user.csv"), &t)?;
    Ok(())
}

/// Emits the pilot confusion matrix as CSV with user-id headers.
pub fn write_pilot_confusion(report: &PilotReport, path: &Path) -> std::io::Result<()> {
    let mut t = String::from("actual_user");
    for u in &report.user_ids {
        let _ = write!(t, ",pred_{u}");
    }
    t.push('\n');
    for (i, row) in report.confusion.iter().enumerate() {
        let _ = write!(t, "{}", report.user_ids[i]);
        for v in row {
            let _ = write!(t, ",{v}");
        }
        t.push('\n');
    }
    write_table(path, &t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_stats_by_hand() {
        let s = SummaryStats::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.average, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.minimum, 1.0);
        assert_eq!(s.maximum, 4.0);
        assert!((s.std_dev - 1.25f64.sqrt()).abs() < 1e-12);

        let s = SummaryStats::from_values(&[5.0, 1.0, 3.0]);
        assert_eq!(s.median, 3.0);
    }
}
