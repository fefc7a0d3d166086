//! k-nearest-neighbor classifier.
//!
//! Majority vote among the k nearest training rows. Distance ties break
//! toward the lower training-row index, vote ties toward the smaller label,
//! so predictions are deterministic and invariant to tie-free permutations
//! of the training set.

use super::{ClassifierError, DistanceMetric, KnnSpec};
use crate::features::FeatureMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub metric: DistanceMetric,
    pub n_features: usize,
    rows: Vec<f64>,
    labels: Vec<u32>,
}

fn distance(metric: DistanceMetric, x: &[f64], y: &[f64]) -> f64 {
    match metric {
        // squared euclidean preserves the ordering (and its ties)
        DistanceMetric::Euclidean => x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum(),
        DistanceMetric::Manhattan => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
    }
}

pub fn train_knn(
    m: &FeatureMatrix,
    labels: &[u32],
    spec: &KnnSpec,
) -> Result<KnnModel, ClassifierError> {
    if m.n_rows() == 0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if labels.len() != m.n_rows() {
        return Err(ClassifierError::LabelMismatch {
            labels: labels.len(),
            rows: m.n_rows(),
        });
    }
    if spec.k == 0 {
        return Err(ClassifierError::InvalidSpec("k must be positive".into()));
    }
    if spec.k > m.n_rows() {
        return Err(ClassifierError::InvalidSpec(format!(
            "k = {} exceeds the {} training rows",
            spec.k,
            m.n_rows()
        )));
    }
    Ok(KnnModel {
        k: spec.k,
        metric: spec.metric,
        n_features: m.n_cols(),
        rows: m.data().to_vec(),
        labels: labels.to_vec(),
    })
}

impl KnnModel {
    pub fn predict(&self, x: &[f64]) -> u32 {
        let d = self.n_features;
        let mut scored: Vec<(f64, usize)> = self
            .rows
            .chunks_exact(d)
            .enumerate()
            .map(|(i, row)| (distance(self.metric, row, x), i))
            .collect();
        scored.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for &(_, idx) in scored.iter().take(self.k) {
            *votes.entry(self.labels[idx]).or_insert(0) += 1;
        }
        // max count; BTreeMap iteration order makes the smaller label win ties
        let mut best_label = 0u32;
        let mut best_count = 0usize;
        for (&label, &count) in &votes {
            if count > best_count {
                best_count = count;
                best_label = label;
            }
        }
        best_label
    }
}
