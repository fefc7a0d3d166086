//! From-scratch kNN, LDA, and SVM classifiers with grid search.
//!
//! Hyperparameter grids mirror the study design: kNN over
//! k in {4, 5, 6} x {euclidean, manhattan}; SVMs over C in
//! {0.1, 1, 10, 100}, with gamma in {scale, auto} for the RBF kernel.

mod knn;
mod lda;
mod linalg;
mod svm;

pub use knn::{train_knn, KnnModel};
pub use lda::{train_lda, LdaModel};
pub use svm::{
    rbf_kernel, train_svm_resolved, train_svm_traced, ResolvedKernel, SvmDiagnostics, SvmModel,
};

use crate::features::FeatureMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("labels length {labels} does not match row count {rows}")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("labels must be binary (0/1); found {0}")]
    NonBinaryLabel(u32),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("invalid classifier spec: {0}")]
    InvalidSpec(String),
    #[error("pooled feature variance is zero; gamma mode 'scale' is undefined")]
    DegenerateVariance,
    #[error("matrix has no feature columns")]
    NoFeatures,
    #[error("within-class scatter is singular even after ridge regularization")]
    SingularScatter,
    #[error("every grid cell failed to train; last error: {0}")]
    AllCellsFailed(String),
    #[error("empty grid")]
    EmptyGrid,
    #[error("model i/o error on {path}: {source}")]
    ModelIo {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("malformed model file {path}: {detail}")]
    MalformedModel {
        path: std::path::PathBuf,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    Manhattan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnSpec {
    pub k: usize,
    pub metric: DistanceMetric,
}

/// RBF kernel width: `auto` is `1/d`, `scale` is `1/(d * var)` with the
/// variance pooled over every training value, `fixed` pins a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    Scale,
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmKernel {
    Linear,
    Rbf { gamma: GammaMode },
}

fn default_tolerance() -> f64 {
    1e-3
}

fn default_max_iter() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmSpec {
    pub kernel: SvmKernel,
    pub c: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: u64,
}

impl SvmSpec {
    pub fn linear(c: f64) -> Self {
        Self {
            kernel: SvmKernel::Linear,
            c,
            tolerance: default_tolerance(),
            max_iter: default_max_iter(),
        }
    }

    pub fn rbf(c: f64, gamma: GammaMode) -> Self {
        Self {
            kernel: SvmKernel::Rbf { gamma },
            c,
            tolerance: default_tolerance(),
            max_iter: default_max_iter(),
        }
    }
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Knn(KnnSpec),
    Lda,
    Svm(SvmSpec),
}

/// A fitted model of any variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedClassifier {
    Knn(KnnModel),
    Lda(LdaModel),
    Svm(SvmModel),
}

impl TrainedClassifier {
    pub fn predict(&self, x: &[f64]) -> u32 {
        match self {
            TrainedClassifier::Knn(m) => m.predict(x),
            TrainedClassifier::Lda(m) => m.predict(x),
            TrainedClassifier::Svm(m) => m.predict(x),
        }
    }

    /// False only for an SVM that hit its iteration cap.
    pub fn converged(&self) -> bool {
        match self {
            TrainedClassifier::Svm(m) => m.converged,
            _ => true,
        }
    }
}

/// Resolves a gamma mode against the training matrix.
pub fn resolve_gamma(mode: GammaMode, train: &FeatureMatrix) -> Result<f64, ClassifierError> {
    let d = train.n_cols();
    if d == 0 {
        return Err(ClassifierError::NoFeatures);
    }
    match mode {
        GammaMode::Auto => Ok(1.0 / d as f64),
        GammaMode::Fixed(g) => {
            if g > 0.0 && g.is_finite() {
                Ok(g)
            } else {
                Err(ClassifierError::InvalidSpec(format!(
                    "fixed gamma must be positive, got {g}"
                )))
            }
        }
        GammaMode::Scale => {
            let values = train.data();
            if values.is_empty() {
                return Err(ClassifierError::EmptyTrainingSet);
            }
            let n = values.len() as f64;
            let mean: f64 = values.iter().sum::<f64>() / n;
            let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var == 0.0 {
                return Err(ClassifierError::DegenerateVariance);
            }
            Ok(1.0 / (d as f64 * var))
        }
    }
}

/// Trains one spec on 0/1-labeled data (LDA accepts any integer labels).
pub fn train_classifier(
    spec: &ClassifierSpec,
    train: &FeatureMatrix,
    labels: &[u32],
) -> Result<TrainedClassifier, ClassifierError> {
    match spec {
        ClassifierSpec::Knn(s) => Ok(TrainedClassifier::Knn(train_knn(train, labels, s)?)),
        ClassifierSpec::Lda => Ok(TrainedClassifier::Lda(train_lda(train, labels)?)),
        ClassifierSpec::Svm(s) => {
            let kernel = match s.kernel {
                SvmKernel::Linear => ResolvedKernel::Linear,
                SvmKernel::Rbf { gamma } => ResolvedKernel::Rbf {
                    gamma: resolve_gamma(gamma, train)?,
                },
            };
            Ok(TrainedClassifier::Svm(train_svm_resolved(
                train,
                labels,
                kernel,
                s.c,
                s.tolerance,
                s.max_iter,
            )?))
        }
    }
}

/// Fraction of rows whose prediction matches the label.
pub fn accuracy(model: &TrainedClassifier, m: &FeatureMatrix, labels: &[u32]) -> f64 {
    if m.n_rows() == 0 {
        return 0.0;
    }
    let correct = m
        .iter_rows()
        .zip(labels)
        .filter(|(row, &label)| model.predict(row) == label)
        .count();
    correct as f64 / m.n_rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub spec: ClassifierSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best_accuracy: f64,
    pub model: TrainedClassifier,
    /// Every cell's outcome, in declared grid order.
    pub cells: Vec<GridCell>,
}

/// Trains every cell on `train`, scores accuracy on `val`, and returns the
/// argmax. Ties break toward the earlier grid position; failed cells are
/// recorded and skipped.
pub fn grid_search(
    train: &FeatureMatrix,
    train_labels: &[u32],
    val: &FeatureMatrix,
    val_labels: &[u32],
    grid: &[ClassifierSpec],
) -> Result<GridSearchResult, ClassifierError> {
    if grid.is_empty() {
        return Err(ClassifierError::EmptyGrid);
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64, TrainedClassifier)> = None;
    let mut last_error = String::new();
    for (idx, spec) in grid.iter().enumerate() {
        match train_classifier(spec, train, train_labels) {
            Ok(model) => {
                let acc = accuracy(&model, val, val_labels);
                cells.push(GridCell {
                    spec: spec.clone(),
                    val_accuracy: Some(acc),
                    error: None,
                    converged: Some(model.converged()),
                });
                let replace = match &best {
                    Some((_, best_acc, _)) => acc > *best_acc,
                    None => true,
                };
                if replace {
                    best = Some((idx, acc, model));
                }
            }
            Err(e) => {
                last_error = e.to_string();
                cells.push(GridCell {
                    spec: spec.clone(),
                    val_accuracy: None,
                    error: Some(last_error.clone()),
                    converged: None,
                });
            }
        }
    }
    match best {
        Some((best_index, best_accuracy, model)) => Ok(GridSearchResult {
            best_index,
            best_accuracy,
            model,
            cells,
        }),
        None => Err(ClassifierError::AllCellsFailed(last_error)),
    }
}

/// The hyperparameter grids of the study, by family name.
pub fn paper_grid(family: &str) -> Option<Vec<ClassifierSpec>> {
    match family {
        "knn" => Some(
            [4usize, 5, 6]
                .iter()
                .flat_map(|&k| {
                    [DistanceMetric::Euclidean, DistanceMetric::Manhattan]
                        .iter()
                        .map(move |&metric| ClassifierSpec::Knn(KnnSpec { k, metric }))
                })
                .collect(),
        ),
        "lda" => Some(vec![ClassifierSpec::Lda]),
        "lsvm" => Some(
            [0.1, 1.0, 10.0, 100.0]
                .iter()
                .map(|&c| ClassifierSpec::Svm(SvmSpec::linear(c)))
                .collect(),
        ),
        "nlsvm" => Some(
            [0.1, 1.0, 10.0, 100.0]
                .iter()
                .flat_map(|&c| {
                    [GammaMode::Scale, GammaMode::Auto]
                        .iter()
                        .map(move |&g| ClassifierSpec::Svm(SvmSpec::rbf(c, g)))
                })
                .collect(),
        ),
        _ => None,
    }
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    schema_version: u32,
    model: TrainedClassifier,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

pub fn save_model(path: &Path, model: &TrainedClassifier) -> Result<(), ClassifierError> {
    let saved = SavedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&saved).expect("model serializes");
    std::fs::write(path, text).map_err(|e| ClassifierError::ModelIo {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedClassifier, ClassifierError> {
    let text = std::fs::read_to_string(path).map_err(|e| ClassifierError::ModelIo {
        path: path.to_path_buf(),
        source: e,
    })?;
    let saved: SavedModel =
        serde_json::from_str(&text).map_err(|e| ClassifierError::MalformedModel {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    if saved.schema_version != MODEL_SCHEMA_VERSION {
        return Err(ClassifierError::MalformedModel {
            path: path.to_path_buf(),
            detail: format!("unsupported schema_version {}", saved.schema_version),
        });
    }
    Ok(saved.model)
}
