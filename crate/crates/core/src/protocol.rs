//! Session-based splitting, one-vs-rest labeling, impostor balancing, the
//! per-user authentication loop, and the multi-class pilot experiment.
//!
//! Labels are 1 for the genuine user and 0 for every impostor. Training data
//! is balanced by downsampling each impostor to `floor(G / m)` rows (G
//! genuine training rows, m impostors); validation and test are left alone.
//! All per-user fitting (normalizer, importances, threshold, grid choice)
//! sees only the train and validation splits, so deleting the test split
//! cannot change any fitted parameter.

use crate::classifiers::{
    accuracy, grid_search, resolve_gamma, train_classifier, train_lda, train_svm_resolved,
    ClassifierError, ClassifierSpec, GammaMode, ResolvedKernel, SvmKernel, TrainedClassifier,
};
use crate::features::{FeatureError, FeatureMatrix, Normalizer};
use crate::featsel::{fit_importance, tune_threshold, ExtraTreesSpec, FeatselError, SelectionMask};
use crate::report::{
    compute_aggregates, AuthReport, FamilyReport, PilotReport, UserReport,
};
use crate::seeds::{mix_chain, stage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid split plan: {0}")]
    InvalidPlan(String),
    #[error("plan session {session} is absent from the data")]
    PlanSessionMissing { session: u32 },
    #[error("data session {session} is not routed by the plan")]
    SessionNotInPlan { session: u32 },
    #[error("need at least two users, found {0}")]
    TooFewUsers(usize),
    #[error("user {user} has no rows in the {split} split")]
    NoGenuineRows { user: u32, split: &'static str },
    #[error("cannot balance: {genuine} genuine rows for {impostors} impostors")]
    BalanceInfeasible { genuine: usize, impostors: usize },
    #[error("pilot split leaves user {user} without {side} rows")]
    PilotSplitDegenerate { user: u32, side: &'static str },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Featsel(#[from] FeatselError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("user {user}, stage {stage}: {source}")]
    UserStage {
        user: u32,
        stage: &'static str,
        #[source]
        source: Box<ProtocolError>,
    },
}

impl ProtocolError {
    fn for_user(user: u32, stage: &'static str) -> impl FnOnce(ProtocolError) -> ProtocolError {
        move |source| ProtocolError::UserStage {
            user,
            stage,
            source: Box::new(source),
        }
    }
}

/// Which sessions land in train, validation, and test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_sessions: Vec<u32>,
    pub val_sessions: Vec<u32>,
    pub test_sessions: Vec<u32>,
}

impl Default for SplitPlan {
    /// First 5 of 9 sessions train, next 2 validation, last 2 test.
    fn default() -> Self {
        Self {
            train_sessions: vec![1, 2, 3, 4, 5],
            val_sessions: vec![6, 7],
            test_sessions: vec![8, 9],
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        for (name, set) in [
            ("train", &self.train_sessions),
            ("validation", &self.val_sessions),
            ("test", &self.test_sessions),
        ] {
            if set.is_empty() {
                return Err(ProtocolError::InvalidPlan(format!("{name} set is empty")));
            }
        }
        let mut all: Vec<u32> = self
            .train_sessions
            .iter()
            .chain(&self.val_sessions)
            .chain(&self.test_sessions)
            .copied()
            .collect();
        all.sort_unstable();
        for pair in all.windows(2) {
            if pair[0] == pair[1] {
                return Err(ProtocolError::InvalidPlan(format!(
                    "session {} appears in more than one split",
                    pair[0]
                )));
            }
        }
        Ok(())
    }
}

/// Routes rows by session id; within-split row order is preserved. Every
/// plan session must exist in the data and every data session must be
/// routed, so the three splits partition the rows.
pub fn split_sessions(
    fm: &FeatureMatrix,
    plan: &SplitPlan,
) -> Result<(FeatureMatrix, FeatureMatrix, FeatureMatrix), ProtocolError> {
    plan.validate()?;
    let present = fm.session_ids();
    for &s in plan
        .train_sessions
        .iter()
        .chain(&plan.val_sessions)
        .chain(&plan.test_sessions)
    {
        if !present.contains(&s) {
            return Err(ProtocolError::PlanSessionMissing { session: s });
        }
    }
    for &s in &present {
        let routed = plan.train_sessions.contains(&s)
            || plan.val_sessions.contains(&s)
            || plan.test_sessions.contains(&s);
        if !routed {
            return Err(ProtocolError::SessionNotInPlan { session: s });
        }
    }
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, meta) in fm.metas().iter().enumerate() {
        if plan.train_sessions.contains(&meta.session_id) {
            train_idx.push(i);
        } else if plan.val_sessions.contains(&meta.session_id) {
            val_idx.push(i);
        } else {
            test_idx.push(i);
        }
    }
    Ok((
        fm.take_rows(&train_idx),
        fm.take_rows(&val_idx),
        fm.take_rows(&test_idx),
    ))
}

/// Binary confusion counts with the genuine user as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, precision, recall, and F1 from confusion counts; any 0/0 is 0.
pub fn metrics(cm: &ConfusionMatrix) -> MetricSet {
    let total = cm.total() as f64;
    let tp = cm.true_positive as f64;
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let accuracy = ratio(tp + cm.true_negative as f64, total);
    let precision = ratio(tp, tp + cm.false_positive as f64);
    let recall = ratio(tp, tp + cm.false_negative as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    MetricSet {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Counts predictions of `model` over `m` against binary labels.
pub fn compute_confusion(
    model: &TrainedClassifier,
    m: &FeatureMatrix,
    labels: &[u32],
) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix {
        true_positive: 0,
        false_positive: 0,
        false_negative: 0,
        true_negative: 0,
    };
    for (row, &label) in m.iter_rows().zip(labels) {
        let pred = model.predict(row);
        match (label, pred) {
            (1, 1) => cm.true_positive += 1,
            (0, 1) => cm.false_positive += 1,
            (1, 0) => cm.false_negative += 1,
            (0, 0) => cm.true_negative += 1,
            _ => {}
        }
    }
    cm
}

/// A feature matrix with per-row binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatures {
    pub features: FeatureMatrix,
    pub labels: Vec<u32>,
}

impl LabeledFeatures {
    fn genuine_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Recorded when an impostor has fewer rows than the balancing quota.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImbalanceNote {
    pub impostor: u32,
    pub available: usize,
    pub wanted: usize,
}

/// One user's authentication problem: labeled train/val/test triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthTask {
    pub genuine_user: u32,
    pub train: LabeledFeatures,
    pub val: LabeledFeatures,
    pub test: LabeledFeatures,
    pub imbalance: Vec<ImbalanceNote>,
}

fn label_against(fm: &FeatureMatrix, genuine: u32) -> Vec<u32> {
    fm.metas()
        .iter()
        .map(|m| (m.user_id == genuine) as u32)
        .collect()
}

/// Labels the three splits one-vs-rest for `genuine_user`. No balancing.
pub fn build_auth_task(
    genuine_user: u32,
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    test: &FeatureMatrix,
) -> AuthTask {
    AuthTask {
        genuine_user,
        train: LabeledFeatures {
            features: train.clone(),
            labels: label_against(train, genuine_user),
        },
        val: LabeledFeatures {
            features: val.clone(),
            labels: label_against(val, genuine_user),
        },
        test: LabeledFeatures {
            features: test.clone(),
            labels: label_against(test, genuine_user),
        },
        imbalance: Vec::new(),
    }
}

/// Downsamples each impostor's training rows to `floor(G / m)` without
/// replacement (seeded per impostor), leaving validation and test untouched.
/// Impostors with fewer rows than the quota keep everything and are noted.
pub fn balance_downsample(task: AuthTask, seed: u64) -> Result<AuthTask, ProtocolError> {
    let genuine = task.genuine_user;
    let g = task.train.genuine_count();
    let mut by_user: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, meta) in task.train.features.metas().iter().enumerate() {
        by_user.entry(meta.user_id).or_default().push(i);
    }
    let impostors: Vec<u32> = by_user.keys().copied().filter(|&u| u != genuine).collect();
    let m = impostors.len();
    if m == 0 || g < m {
        return Err(ProtocolError::BalanceInfeasible {
            genuine: g,
            impostors: m,
        });
    }
    let quota = g / m;
    let mut keep: Vec<usize> = by_user.get(&genuine).cloned().unwrap_or_default();
    let mut imbalance = Vec::new();
    for &impostor in &impostors {
        let rows = &by_user[&impostor];
        if rows.len() <= quota {
            if rows.len() < quota {
                imbalance.push(ImbalanceNote {
                    impostor,
                    available: rows.len(),
                    wanted: quota,
                });
            }
            keep.extend_from_slice(rows);
            continue;
        }
        // partial Fisher-Yates over a scratch copy, quota picks
        let mut pool = rows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_chain(
            seed,
            &[stage::BALANCE, genuine as u64, impostor as u64],
        ));
        for i in 0..quota {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        keep.extend_from_slice(&pool[..quota]);
    }
    keep.sort_unstable();
    let features = task.train.features.take_rows(&keep);
    let labels = label_against(&features, genuine);
    Ok(AuthTask {
        train: LabeledFeatures { features, labels },
        imbalance,
        ..task
    })
}

/// Returns a copy of `fm` whose user ids are shuffled across rows (the
/// label-permutation control). Session and window metadata stay put, so
/// split routing is unchanged while user identity becomes noise.
pub fn permute_user_labels(fm: &FeatureMatrix, seed: u64) -> FeatureMatrix {
    let n = fm.n_rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_chain(seed, &[stage::PERMUTE]));
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut out = FeatureMatrix::empty(fm.columns().to_vec());
    for i in 0..n {
        let mut meta = fm.meta(i);
        meta.user_id = fm.meta(perm[i]).user_id;
        out.push_row(meta, fm.row(i));
    }
    out
}

/// A named hyperparameter grid, e.g. `lsvm` over four C values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedGrid {
    pub name: String,
    pub cells: Vec<ClassifierSpec>,
}

/// Everything the per-user loop needs besides the data.
#[derive(Debug, Clone)]
pub struct AuthSettings {
    /// Tree parameters; the seed field is replaced by a per-user stream.
    pub trees: ExtraTreesSpec,
    pub threshold_candidates: Vec<f64>,
    pub grids: Vec<NamedGrid>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFamily {
    pub name: String,
    pub outcome: crate::classifiers::GridSearchResult,
}

/// Every train/validation-fitted parameter for one user. Serializable so
/// leakage checks can compare two fits bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedUser {
    pub user_id: u32,
    pub normalizer: Normalizer,
    pub importance: Vec<f64>,
    pub threshold: f64,
    pub mask: SelectionMask,
    pub families: Vec<FittedFamily>,
    pub imbalance: Vec<ImbalanceNote>,
}

/// Fits one user's full pipeline from the train and validation splits only:
/// balance, normalize, importance, threshold tuning (validation accuracy of
/// the first grid's first cell), then a grid search per family.
pub fn fit_user(
    user_id: u32,
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    settings: &AuthSettings,
) -> Result<FittedUser, ProtocolError> {
    let wrap = ProtocolError::for_user;
    if settings.grids.is_empty() || settings.grids[0].cells.is_empty() {
        return Err(ProtocolError::InvalidPlan("no classifier grids".into()));
    }
    let train_labels_all = label_against(train, user_id);
    if !train_labels_all.contains(&1) {
        return Err(ProtocolError::NoGenuineRows {
            user: user_id,
            split: "train",
        });
    }
    let val_labels = label_against(val, user_id);
    if !val_labels.contains(&1) {
        return Err(ProtocolError::NoGenuineRows {
            user: user_id,
            split: "validation",
        });
    }

    let task = build_auth_task(user_id, train, val, val);
    let task = balance_downsample(task, settings.seed).map_err(wrap(user_id, "balance"))?;
    let imbalance = task.imbalance.clone();
    let balanced = task.train;

    let normalizer =
        Normalizer::fit(&balanced.features).map_err(|e| wrap(user_id, "normalize")(e.into()))?;
    let train_norm = normalizer
        .apply(&balanced.features)
        .map_err(|e| wrap(user_id, "normalize")(e.into()))?;
    let val_norm = normalizer
        .apply(val)
        .map_err(|e| wrap(user_id, "normalize")(e.into()))?;

    let tree_spec = ExtraTreesSpec {
        seed: mix_chain(settings.seed, &[stage::FEATSEL, user_id as u64]),
        max_features: settings.trees.max_features.min(train_norm.n_cols()),
        ..settings.trees
    };
    let label_bytes: Vec<u8> = balanced.labels.iter().map(|&l| l as u8).collect();
    let importance = fit_importance(&train_norm, &label_bytes, &tree_spec)
        .map_err(|e| wrap(user_id, "feature-importance")(e.into()))?;

    let tuning_cell = settings.grids[0].cells[0].clone();
    let (threshold, mask) = tune_threshold(
        &importance,
        &settings.threshold_candidates,
        |mask: &SelectionMask| {
            let train_m = train_norm.select_columns(&mask.indices);
            let val_m = val_norm.select_columns(&mask.indices);
            let model = train_classifier(&tuning_cell, &train_m, &balanced.labels)
                .map_err(|e| FeatselError::EvalFailed(e.to_string()))?;
            Ok(accuracy(&model, &val_m, &val_labels))
        },
    )
    .map_err(|e| wrap(user_id, "threshold-tuning")(e.into()))?;

    let train_sel = train_norm.select_columns(&mask.indices);
    let val_sel = val_norm.select_columns(&mask.indices);
    let mut families = Vec::with_capacity(settings.grids.len());
    for grid in &settings.grids {
        let outcome = grid_search(
            &train_sel,
            &balanced.labels,
            &val_sel,
            &val_labels,
            &grid.cells,
        )
        .map_err(|e| wrap(user_id, "grid-search")(e.into()))?;
        families.push(FittedFamily {
            name: grid.name.clone(),
            outcome,
        });
    }

    Ok(FittedUser {
        user_id,
        normalizer,
        importance,
        threshold,
        mask,
        families,
        imbalance,
    })
}

/// Scores a fitted user on the held-out test split.
pub fn evaluate_user(
    fitted: &FittedUser,
    test: &FeatureMatrix,
) -> Result<UserReport, ProtocolError> {
    let test_labels = label_against(test, fitted.user_id);
    let test_norm = fitted
        .normalizer
        .apply(test)
        .map_err(|e| ProtocolError::for_user(fitted.user_id, "evaluate")(e.into()))?;
    let test_sel = test_norm.select_columns(&fitted.mask.indices);
    let families = fitted
        .families
        .iter()
        .map(|family| {
            let cm = compute_confusion(&family.outcome.model, &test_sel, &test_labels);
            FamilyReport {
                family: family.name.clone(),
                chosen_spec: family.outcome.cells[family.outcome.best_index].spec.clone(),
                converged: family.outcome.model.converged(),
                val_accuracy: family.outcome.best_accuracy,
                test: metrics(&cm),
                confusion: cm,
                grid: family.outcome.cells.clone(),
            }
        })
        .collect();
    Ok(UserReport {
        user_id: fitted.user_id,
        threshold: fitted.threshold,
        selected_feature_count: fitted.mask.len(),
        imbalance: fitted.imbalance.clone(),
        families,
    })
}

/// Like [`run_authentication`], but collects per-user failures instead of
/// aborting on the first one, so callers can emit a partial report. The
/// outer error covers dataset-level problems (too few users, bad plan).
pub fn run_authentication_collect(
    features: &FeatureMatrix,
    plan: &SplitPlan,
    settings: &AuthSettings,
) -> Result<(Vec<UserReport>, Vec<(u32, ProtocolError)>), ProtocolError> {
    let users = features.user_ids();
    if users.len() < 2 {
        return Err(ProtocolError::TooFewUsers(users.len()));
    }
    let (train, val, test) = split_sessions(features, plan)?;
    let results: Vec<(u32, Result<UserReport, ProtocolError>)> = users
        .par_iter()
        .map(|&user| {
            let outcome = fit_user(user, &train, &val, settings)
                .and_then(|fitted| evaluate_user(&fitted, &test));
            (user, outcome)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (user, outcome) in results {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((user, e)),
        }
    }
    Ok((rows, failures))
}

/// The full one-vs-rest loop: every user is fitted (train+validation only)
/// and scored on test, in parallel, merged in user-id order.
pub fn run_authentication(
    features: &FeatureMatrix,
    plan: &SplitPlan,
    settings: &AuthSettings,
) -> Result<AuthReport, ProtocolError> {
    let (rows, failures) = run_authentication_collect(features, plan, settings)?;
    if let Some((_, e)) = failures.into_iter().next() {
        return Err(e);
    }
    let aggregates = compute_aggregates(&rows);
    Ok(AuthReport {
        users: rows,
        aggregates,
    })
}

/// Pilot classifier choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotClassifier {
    Lda,
    RbfSvm { c: f64, gamma: GammaMode },
}

impl PilotClassifier {
    fn name(&self) -> String {
        match self {
            PilotClassifier::Lda => "lda".into(),
            PilotClassifier::RbfSvm { .. } => "rbf-svm".into(),
        }
    }
}

/// Multi-class pilot: one model over all users, chronological
/// `split_fraction` train / rest test per user, confusion matrix over user
/// ids. The SVM variant is one-vs-rest with argmax decision values.
pub fn run_pilot(
    features: &FeatureMatrix,
    split_fraction: f64,
    classifier: PilotClassifier,
) -> Result<PilotReport, ProtocolError> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(ProtocolError::InvalidPlan(format!(
            "split fraction {split_fraction} must be in (0, 1)"
        )));
    }
    let users = features.user_ids();
    if users.len() < 2 {
        return Err(ProtocolError::TooFewUsers(users.len()));
    }
    let mut by_user: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, meta) in features.metas().iter().enumerate() {
        by_user.entry(meta.user_id).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (&user, rows) in &by_user {
        let n_train = (rows.len() as f64 * split_fraction).floor() as usize;
        if n_train == 0 {
            return Err(ProtocolError::PilotSplitDegenerate {
                user,
                side: "train",
            });
        }
        if n_train == rows.len() {
            return Err(ProtocolError::PilotSplitDegenerate { user, side: "test" });
        }
        train_idx.extend_from_slice(&rows[..n_train]);
        test_idx.extend_from_slice(&rows[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train_raw = features.take_rows(&train_idx);
    let test_raw = features.take_rows(&test_idx);
    let normalizer = Normalizer::fit(&train_raw)?;
    let train = normalizer.apply(&train_raw)?;
    let test = normalizer.apply(&test_raw)?;
    let train_labels: Vec<u32> = train.metas().iter().map(|m| m.user_id).collect();
    let test_labels: Vec<u32> = test.metas().iter().map(|m| m.user_id).collect();

    let user_index =
        |u: u32| -> usize { users.binary_search(&u).expect("label from known user set") };
    let mut confusion = vec![vec![0u64; users.len()]; users.len()];
    let mut correct = 0u64;

    match classifier {
        PilotClassifier::Lda => {
            let model = train_lda(&train, &train_labels)?;
            for (row, &actual) in test.iter_rows().zip(&test_labels) {
                let pred = model.predict(row);
                confusion[user_index(actual)][user_index(pred)] += 1;
                if pred == actual {
                    correct += 1;
                }
            }
        }
        PilotClassifier::RbfSvm { c, gamma } => {
            let gamma = resolve_gamma(gamma, &train)?;
            let kernel = ResolvedKernel::Rbf { gamma };
            let _ = SvmKernel::Rbf {
                gamma: GammaMode::Fixed(gamma),
            };
            // one-vs-rest: a binary machine per user, argmax decision value
            let machines: Vec<Result<crate::classifiers::SvmModel, ClassifierError>> = users
                .par_iter()
                .map(|&u| {
                    let labels: Vec<u32> = train_labels
                        .iter()
                        .map(|&l| (l == u) as u32)
                        .collect();
                    train_svm_resolved(&train, &labels, kernel, c, 1e-3, 1_000_000)
                })
                .collect();
            let mut models = Vec::with_capacity(machines.len());
            for m in machines {
                models.push(m?);
            }
            for (row, &actual) in test.iter_rows().zip(&test_labels) {
                let mut best = 0usize;
                let mut best_value = f64::NEG_INFINITY;
                for (k, model) in models.iter().enumerate() {
                    let v = model.decision_value(row);
                    if v > best_value {
                        best_value = v;
                        best = k;
                    }
                }
                let pred = users[best];
                confusion[user_index(actual)][user_index(pred)] += 1;
                if pred == actual {
                    correct += 1;
                }
            }
        }
    }

    Ok(PilotReport {
        classifier: classifier.name(),
        split_fraction,
        user_ids: users,
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        accuracy: correct as f64 / test.n_rows() as f64,
        confusion,
    })
}
