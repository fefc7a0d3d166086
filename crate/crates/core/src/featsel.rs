//! Per-user feature selection with extremely randomized trees.
//!
//! Each tree draws `max_features` candidate features uniformly at random per
//! node, one uniformly random cut-point per candidate between that feature's
//! node-local minimum and maximum, and keeps the candidate with the largest
//! Gini impurity decrease. Importance of a feature is the weighted impurity
//! decrease it accounts for, normalized per tree, averaged over the ensemble,
//! and renormalized to sum to one. Every tree sees the full training set (no
//! bootstrap) and grows until purity or `min_samples_split`.
//!
//! The ensemble is only used for feature scoring, so trees are not retained.

use crate::features::FeatureMatrix;
use crate::seeds::{mix_chain, stage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatselError {
    #[error("empty feature matrix")]
    EmptyMatrix,
    #[error("labels length {labels} does not match row count {rows}")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("labels must be binary (0/1); found {0}")]
    NonBinaryLabel(u32),
    #[error("invalid extra-trees spec: {0}")]
    InvalidSpec(String),
    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),
    #[error("selection is empty at threshold {0}; lower the threshold")]
    EmptySelection(f64),
    #[error("no threshold candidates were given")]
    NoCandidates,
    #[error("every candidate threshold yields an empty selection")]
    AllMasksEmpty,
    #[error("threshold evaluation failed: {0}")]
    EvalFailed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtraTreesSpec {
    pub n_trees: usize,
    pub max_features: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ExtraTreesSpec {
    fn default() -> Self {
        Self {
            n_trees: 100,
            // ceil(sqrt(192)) for the standard 192-column feature matrix
            max_features: 14,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

impl ExtraTreesSpec {
    pub fn validate(&self, n_features: usize) -> Result<(), FeatselError> {
        if self.n_trees == 0 {
            return Err(FeatselError::InvalidSpec("n_trees must be positive".into()));
        }
        if self.max_features == 0 || self.max_features > n_features {
            return Err(FeatselError::InvalidSpec(format!(
                "max_features {} must be in 1..={n_features}",
                self.max_features
            )));
        }
        if self.min_samples_split < 2 {
            return Err(FeatselError::InvalidSpec(
                "min_samples_split must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// `ceil(sqrt(d))`, the usual candidate-count default.
    pub fn sqrt_features(n_features: usize) -> usize {
        (n_features as f64).sqrt().ceil() as usize
    }
}

/// Retained column indices (ascending) and the threshold that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub indices: Vec<usize>,
    pub threshold: f64,
}

impl SelectionMask {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn gini(n_pos: usize, n_total: usize) -> f64 {
    let p = n_pos as f64 / n_total as f64;
    let q = 1.0 - p;
    1.0 - p * p - q * q
}

/// Grows one tree and accumulates weighted impurity decreases per feature.
fn tree_importance(
    m: &FeatureMatrix,
    labels: &[u8],
    spec: &ExtraTreesSpec,
    tree_index: usize,
) -> Vec<f64> {
    let d = m.n_cols();
    let n_total = m.n_rows() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_chain(spec.seed, &[stage::TREE, tree_index as u64]));
    let mut importance = vec![0.0f64; d];
    let mut feature_pool: Vec<usize> = (0..d).collect();

    let root_rows: Vec<usize> = (0..m.n_rows()).collect();
    let root_pos = labels.iter().filter(|&&l| l == 1).count();
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(root_rows, gini(root_pos, m.n_rows()))];

    while let Some((rows, node_gini)) = stack.pop() {
        let n_node = rows.len();
        if n_node < spec.min_samples_split || node_gini == 0.0 {
            continue;
        }
        // draw max_features distinct candidates (partial Fisher-Yates)
        for i in 0..spec.max_features {
            let j = rng.random_range(i..d);
            feature_pool.swap(i, j);
        }

        let mut best: Option<(usize, f64, f64, Vec<usize>, Vec<usize>, f64, f64)> = None;
        for &f in &feature_pool[..spec.max_features] {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &r in &rows {
                let v = m.row(r)[f];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !(hi > lo) {
                continue;
            }
            let cut: f64 = rng.random_range(lo..hi);
            let mut left = Vec::new();
            let mut right = Vec::new();
            let mut left_pos = 0usize;
            let mut right_pos = 0usize;
            for &r in &rows {
                if m.row(r)[f] < cut {
                    left.push(r);
                    left_pos += labels[r] as usize;
                } else {
                    right.push(r);
                    right_pos += labels[r] as usize;
                }
            }
            if left.is_empty() || right.is_empty() {
                continue;
            }
            let g_left = gini(left_pos, left.len());
            let g_right = gini(right_pos, right.len());
            let decrease = node_gini
                - (left.len() as f64 / n_node as f64) * g_left
                - (right.len() as f64 / n_node as f64) * g_right;
            let better = match &best {
                Some((_, best_dec, ..)) => decrease > *best_dec,
                None => true,
            };
            if better {
                best = Some((f, decrease, cut, left, right, g_left, g_right));
            }
        }

        if let Some((f, decrease, _cut, left, right, g_left, g_right)) = best {
            importance[f] += (n_node as f64 / n_total) * decrease;
            stack.push((left, g_left));
            stack.push((right, g_right));
        }
    }

    // per-tree normalization
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        for v in &mut importance {
            *v /= total;
        }
    }
    importance
}

/// Fits the ensemble and returns per-column importances summing to one.
/// Deterministic given `spec.seed`; trees run in parallel on independent
/// streams derived from `(seed, tree_index)`.
pub fn fit_importance(
    train: &FeatureMatrix,
    labels: &[u8],
    spec: &ExtraTreesSpec,
) -> Result<Vec<f64>, FeatselError> {
    if train.n_rows() == 0 {
        return Err(FeatselError::EmptyMatrix);
    }
    if labels.len() != train.n_rows() {
        return Err(FeatselError::LabelMismatch {
            labels: labels.len(),
            rows: train.n_rows(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(FeatselError::NonBinaryLabel(bad as u32));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(FeatselError::SingleClass);
    }
    spec.validate(train.n_cols())?;

    let per_tree: Vec<Vec<f64>> = (0..spec.n_trees)
        .into_par_iter()
        .map(|t| tree_importance(train, labels, spec, t))
        .collect();

    let d = train.n_cols();
    let mut out = vec![0.0f64; d];
    for tree in &per_tree {
        for (o, v) in out.iter_mut().zip(tree) {
            *o += v;
        }
    }
    for v in &mut out {
        *v /= spec.n_trees as f64;
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        for v in &mut out {
            *v /= total;
        }
    }
    Ok(out)
}

/// Keeps every column whose importance is at least `threshold`.
pub fn select_features(importance: &[f64], threshold: f64) -> Result<SelectionMask, FeatselError> {
    if !(threshold >= 0.0) {
        return Err(FeatselError::NegativeThreshold(threshold));
    }
    let indices: Vec<usize> = importance
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(FeatselError::EmptySelection(threshold));
    }
    Ok(SelectionMask { indices, threshold })
}

/// Picks the candidate threshold whose mask maximizes `eval` (validation
/// accuracy). Ties break toward the larger threshold, i.e. fewer features.
/// Candidates whose mask is empty are skipped.
pub fn tune_threshold<F>(
    importance: &[f64],
    candidates: &[f64],
    mut eval: F,
) -> Result<(f64, SelectionMask), FeatselError>
where
    F: FnMut(&SelectionMask) -> Result<f64, FeatselError>,
{
    if candidates.is_empty() {
        return Err(FeatselError::NoCandidates);
    }
    let mut best: Option<(f64, SelectionMask, f64)> = None;
    for &t in candidates {
        let mask = match select_features(importance, t) {
            Ok(mask) => mask,
            Err(FeatselError::EmptySelection(_)) => continue,
            Err(e) => return Err(e),
        };
        let score = eval(&mask)?;
        let replace = match &best {
            Some((best_t, _, best_score)) => {
                score > *best_score || (score == *best_score && t > *best_t)
            }
            None => true,
        };
        if replace {
            best = Some((t, mask, score));
        }
    }
    match best {
        Some((t, mask, _)) => Ok((t, mask)),
        None => Err(FeatselError::AllMasksEmpty),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RowMeta;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta(i: usize) -> RowMeta {
        RowMeta {
            user_id: 1,
            session_id: 1,
            window_index: i as u32,
        }
    }

    /// 500 rows; feature 0 equals the label, features 1..=9 pure noise.
    fn labeled_noise(seed: u64) -> (FeatureMatrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let mut m = FeatureMatrix::empty(cols);
        let mut labels = Vec::new();
        for i in 0..500 {
            let label = (i % 2) as u8;
            let mut row = vec![label as f64];
            for _ in 1..10 {
                row.push(rng.random_range(-1.0..1.0));
            }
            m.push_row(meta(i), &row);
            labels.push(label);
        }
        (m, labels)
    }

    fn spec(seed: u64) -> ExtraTreesSpec {
        ExtraTreesSpec {
            n_trees: 50,
            max_features: 3,
            min_samples_split: 2,
            seed,
        }
    }

    #[test]
    fn predictive_feature_dominates_noise() {
        let (m, labels) = labeled_noise(1);
        let imp = fit_importance(&m, &labels, &spec(7)).unwrap();
        for j in 1..10 {
            assert!(imp[0] > imp[j], "importance[0]={} vs [{j}]={}", imp[0], imp[j]);
        }
    }

    #[test]
    fn importances_sum_to_one() {
        let (m, labels) = labeled_noise(2);
        let imp = fit_importance(&m, &labels, &spec(3)).unwrap();
        let sum: f64 = imp.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "sum = {sum}");
        assert!(imp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn same_seed_is_identical() {
        let (m, labels) = labeled_noise(3);
        let a = fit_importance(&m, &labels, &spec(11)).unwrap();
        let b = fit_importance(&m, &labels, &spec(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_and_empty_inputs_fail() {
        let (m, _) = labeled_noise(4);
        let ones = vec![1u8; m.n_rows()];
        assert!(matches!(
            fit_importance(&m, &ones, &spec(0)),
            Err(FeatselError::SingleClass)
        ));
        let empty = FeatureMatrix::empty(vec!["a".into()]);
        assert!(matches!(
            fit_importance(&empty, &[], &spec(0)),
            Err(FeatselError::EmptyMatrix)
        ));
    }

    #[test]
    fn select_features_examples() {
        let imp = [0.5, 0.3, 0.2];
        assert_eq!(select_features(&imp, 0.25).unwrap().indices, vec![0, 1]);
        assert_eq!(select_features(&imp, 0.0).unwrap().indices, vec![0, 1, 2]);
        // boundary: 0.2 excluded at threshold 0.21, >= comparison
        assert_eq!(select_features(&imp, 0.21).unwrap().indices, vec![0, 1]);
        assert_eq!(select_features(&imp, 0.2).unwrap().indices, vec![0, 1, 2]);
        assert!(matches!(
            select_features(&imp, 0.9),
            Err(FeatselError::EmptySelection(_))
        ));
    }

    #[test]
    fn threshold_zero_keeps_all_192() {
        let imp = vec![1.0 / 192.0; 192];
        assert_eq!(select_features(&imp, 0.0).unwrap().len(), 192);
    }

    #[test]
    fn tune_threshold_contract() {
        let imp = [0.5, 0.3, 0.2];
        // single candidate
        let (t, _) = tune_threshold(&imp, &[0.25], |_| Ok(0.5)).unwrap();
        assert_eq!(t, 0.25);
        // argmax
        let (t, mask) =
            tune_threshold(&imp, &[0.1, 0.25], |m| Ok(if m.len() == 2 { 0.9 } else { 0.1 }))
                .unwrap();
        assert_eq!(t, 0.25);
        assert_eq!(mask.len(), 2);
        // tie toward larger threshold
        let (t, _) = tune_threshold(&imp, &[0.1, 0.25], |_| Ok(0.5)).unwrap();
        assert_eq!(t, 0.25);
        // empty-mask candidates skipped; all empty is an error
        assert!(matches!(
            tune_threshold(&imp, &[0.9, 0.95], |_| Ok(1.0)),
            Err(FeatselError::AllMasksEmpty)
        ));
    }

    #[test]
    fn raising_the_threshold_never_grows_the_mask() {
        let (m, labels) = labeled_noise(5);
        let imp = fit_importance(&m, &labels, &spec(21)).unwrap();
        let mut prev_len = usize::MAX;
        for t in [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5] {
            let len = match select_features(&imp, t) {
                Ok(mask) => mask.len(),
                Err(FeatselError::EmptySelection(_)) => 0,
                Err(e) => panic!("{e}"),
            };
            assert!(len <= prev_len, "threshold {t} grew the mask");
            prev_len = len;
        }
    }

    #[test]
    fn permuting_a_predictive_column_reduces_its_importance() {
        let mut reduced = 0;
        for seed in 0..10u64 {
            let (m, labels) = labeled_noise(seed + 100);
            let before = fit_importance(&m, &labels, &spec(seed)).unwrap();

            // shuffle column 0 across rows
            let mut perm: Vec<usize> = (0..m.n_rows()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 999);
            for i in (1..perm.len()).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let mut shuffled = FeatureMatrix::empty(m.columns().to_vec());
            for i in 0..m.n_rows() {
                let mut row = m.row(i).to_vec();
                row[0] = m.row(perm[i])[0];
                shuffled.push_row(m.meta(i), &row);
            }
            let after = fit_importance(&shuffled, &labels, &spec(seed)).unwrap();
            if after[0] < before[0] {
                reduced += 1;
            }
        }
        assert!(reduced >= 9, "importance dropped in only {reduced}/10 seeds");
    }
}
