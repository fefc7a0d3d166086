//! End-to-end pipeline: ingest, preprocess, features, per-user
//! authentication, aggregation, and hypothesis testing, driven by one
//! configuration value.
//!
//! The run is deterministic given the seed: per-stage and per-user streams
//! are derived with [`crate::seeds`], sessions are processed in (user,
//! session) order regardless of worker count, and reports serialize with a
//! fixed field order.

use crate::classifiers::paper_grid;
use crate::dsp::{apply_filter, design_bandpass, segment_windows, BandpassSpec, WindowSpec};
use crate::features::{build_feature_matrix_with, FeatureMatrix, KurtosisConvention};
use crate::featsel::ExtraTreesSpec;
use crate::ingest::{
    dataset_stats, generate_synthetic, load_manifest, load_session, DatasetStats, SessionRecord,
    StatsStage, SyntheticSpec,
};
use crate::protocol::{
    permute_user_labels, run_authentication_collect, run_pilot, split_sessions, AuthSettings,
    NamedGrid, PilotClassifier, SplitPlan,
};
use crate::report::{
    build_hypothesis_block, compute_aggregates, write_plot_tables, AuthReport, DatasetBlock,
    EvaluationReport, PilotReport, Provenance, SplitCounts, REPORT_SCHEMA_VERSION,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where the sessions come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    /// A dataset directory described by its `manifest.json`.
    Manifest { path: PathBuf },
    /// A synthetic-spec JSON file.
    SyntheticFile { path: PathBuf },
    /// An inline synthetic spec (self-contained config).
    Synthetic { spec: SyntheticSpec },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandpassParams {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub order: usize,
}

impl Default for BandpassParams {
    fn default() -> Self {
        Self {
            low_cut_hz: 0.2,
            high_cut_hz: 45.0,
            order: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeParams {
    pub n_trees: usize,
    /// Candidate features per node; defaults to ceil(sqrt(d)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            min_samples_split: 2,
        }
    }
}

/// A grid entry: a known family name (`knn`, `lda`, `lsvm`, `nlsvm`) whose
/// cells default to the published grid, or explicit cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<crate::classifiers::ClassifierSpec>>,
}

fn default_schema_version() -> u32 {
    1
}

fn default_window_ms() -> f64 {
    250.0
}

fn default_hop_samples() -> usize {
    63
}

fn default_threshold_candidates() -> Vec<f64> {
    // {0.5, 0.75, 1.0, 1.25, 1.5} x (1/192), the uninformative baseline
    [0.5, 0.75, 1.0, 1.25, 1.5]
        .iter()
        .map(|m| m / 192.0)
        .collect()
}

fn default_grids() -> Vec<GridConfig> {
    vec![
        GridConfig {
            name: "lsvm".into(),
            cells: None,
        },
        GridConfig {
            name: "nlsvm".into(),
            cells: None,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub data: DataSource,
    #[serde(default)]
    pub bandpass: BandpassParams,
    #[serde(default = "default_window_ms")]
    pub window_ms: f64,
    #[serde(default = "default_hop_samples")]
    pub hop_samples: usize,
    #[serde(default)]
    pub extra_trees: TreeParams,
    #[serde(default = "default_threshold_candidates")]
    pub threshold_candidates: Vec<f64>,
    #[serde(default = "default_grids")]
    pub grids: Vec<GridConfig>,
    #[serde(default)]
    pub split: SplitPlan,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub permute_labels: bool,
    #[serde(default)]
    pub kurtosis: KurtosisConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError {
            stage: "config",
            user_id: None,
            hint: "config file must exist and be readable",
            source: Box::new(e),
        })?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| PipelineError {
            stage: "config",
            user_id: None,
            hint: "config must be valid JSON for the documented schema",
            source: Box::new(e),
        })?;
        Ok(config)
    }

    /// Validates everything checkable before touching data. Split overlaps
    /// are refused here, before any computation.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |detail: String, hint: &'static str| PipelineError {
            stage: "config",
            user_id: None,
            hint,
            source: detail.into(),
        };
        if self.schema_version != 1 {
            return Err(fail(
                format!("unsupported schema_version {}", self.schema_version),
                "this build reads schema_version 1",
            ));
        }
        if !(self.bandpass.low_cut_hz > 0.0 && self.bandpass.high_cut_hz > self.bandpass.low_cut_hz)
        {
            return Err(fail(
                "bandpass cutoffs must satisfy 0 < low < high".into(),
                "check bandpass.low_cut_hz / high_cut_hz",
            ));
        }
        if self.bandpass.order == 0 || self.bandpass.order % 2 != 0 {
            return Err(fail(
                "bandpass order must be a positive even integer".into(),
                "check bandpass.order",
            ));
        }
        if !(self.window_ms > 0.0) || self.hop_samples == 0 {
            return Err(fail(
                "window_ms and hop_samples must be positive".into(),
                "check window_ms / hop_samples",
            ));
        }
        if self.threshold_candidates.is_empty()
            || self
                .threshold_candidates
                .iter()
                .any(|t| !(t.is_finite() && *t >= 0.0))
        {
            return Err(fail(
                "threshold_candidates must be nonnegative and nonempty".into(),
                "check threshold_candidates",
            ));
        }
        if self.grids.is_empty() {
            return Err(fail(
                "at least one classifier grid is required".into(),
                "add a grid such as {\"name\": \"nlsvm\"}",
            ));
        }
        for g in &self.grids {
            match &g.cells {
                Some(cells) if cells.is_empty() => {
                    return Err(fail(
                        format!("grid {} has an empty cell list", g.name),
                        "remove the grid or give it cells",
                    ))
                }
                None if paper_grid(&g.name).is_none() => {
                    return Err(fail(
                        format!("unknown grid family {:?}", g.name),
                        "known families: knn, lda, lsvm, nlsvm (or give explicit cells)",
                    ))
                }
                _ => {}
            }
        }
        self.split.validate().map_err(|e| PipelineError {
            stage: "config",
            user_id: None,
            hint: "train/validation/test sessions must be disjoint and nonempty",
            source: Box::new(e),
        })?;
        if let DataSource::Synthetic { spec } = &self.data {
            spec.validate().map_err(|e| PipelineError {
                stage: "config",
                user_id: None,
                hint: "fix the inline synthetic spec",
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    pub fn resolved_grids(&self) -> Vec<NamedGrid> {
        self.grids
            .iter()
            .map(|g| NamedGrid {
                name: g.name.clone(),
                cells: match &g.cells {
                    Some(cells) => cells.clone(),
                    None => paper_grid(&g.name).expect("validated grid family"),
                },
            })
            .collect()
    }

    /// FNV-1a hash of the canonical JSON form, hex-encoded.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{hash:016x}")
    }
}

/// A stage failure with the user involved (when any) and a remediation hint.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub user_id: Option<u32>,
    pub hint: &'static str,
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed", self.stage)?;
        if let Some(u) = self.user_id {
            write!(f, " for user {u}")?;
        }
        write!(f, ": {} (hint: {})", self.source, self.hint)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(self.source.as_ref())
    }
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(
    stage: &'static str,
    hint: &'static str,
) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        user_id: None,
        hint,
        source: Box::new(e),
    }
}

/// Features plus the dataset statistics gathered on the way.
pub struct PreparedData {
    pub features: FeatureMatrix,
    pub raw_stats: DatasetStats,
    pub window_stats: DatasetStats,
    pub sample_rate_hz: f64,
}

enum SessionSource {
    Disk(Box<crate::ingest::DatasetManifest>),
    Generated(Vec<SessionRecord>),
}

/// Runs ingest, filtering, segmentation, and feature extraction. Sessions
/// are processed in (user, session) order; the permutation control is
/// applied at the end when configured.
pub fn prepare_features(config: &RunConfig) -> Result<PreparedData, PipelineError> {
    config.validate()?;

    let (source, keys, sample_rate_hz) = match &config.data {
        DataSource::Manifest { path } => {
            let manifest =
                load_manifest(path).map_err(stage_err("ingest", "verify the manifest and its session files"))?;
            let keys: Vec<(u32, u32)> = manifest
                .entries
                .iter()
                .map(|e| (e.user_id, e.session_id))
                .collect();
            let rate = manifest.sample_rate_hz;
            (SessionSource::Disk(Box::new(manifest)), keys, rate)
        }
        DataSource::SyntheticFile { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(stage_err("ingest", "synthetic spec file must be readable"))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(stage_err("ingest", "synthetic spec must be valid JSON"))?;
            let rate = spec.sample_rate_hz;
            let records = generate_synthetic(&spec)
                .map_err(stage_err("ingest", "fix the synthetic spec"))?;
            let keys = records.iter().map(|r| (r.user_id, r.session_id)).collect();
            (SessionSource::Generated(records), keys, rate)
        }
        DataSource::Synthetic { spec } => {
            let rate = spec.sample_rate_hz;
            let records = generate_synthetic(spec)
                .map_err(stage_err("ingest", "fix the synthetic spec"))?;
            let keys = records.iter().map(|r| (r.user_id, r.session_id)).collect();
            (SessionSource::Generated(records), keys, rate)
        }
    };

    let bandpass = BandpassSpec::new(
        config.bandpass.low_cut_hz,
        config.bandpass.high_cut_hz,
        config.bandpass.order,
        sample_rate_hz,
    );
    let filter = design_bandpass(&bandpass)
        .map_err(stage_err("preprocess", "check bandpass cutoffs against the sample rate"))?;
    let window = WindowSpec {
        window_len_samples: (config.window_ms / 1000.0 * sample_rate_hz).round() as usize,
        hop_samples: config.hop_samples,
    };
    window
        .validate()
        .map_err(stage_err("preprocess", "hop must not exceed the window length"))?;

    struct SessionOut {
        user: u32,
        session: u32,
        raw: u64,
        windows: u64,
        features: FeatureMatrix,
    }

    let process = |record: SessionRecord| -> Result<SessionOut, PipelineError> {
        let user = record.user_id;
        let session = record.session_id;
        let raw = record.n_samples() as u64;
        let filtered = apply_filter(&filter, &record)
            .map_err(stage_err("preprocess", "filter produced non-finite output"))?;
        let ws = segment_windows(filtered, window)
            .map_err(stage_err("preprocess", "check the window spec"))?;
        let windows = ws.n_windows() as u64;
        let features = build_feature_matrix_with(&[ws], config.kurtosis)
            .map_err(stage_err("features", "feature extraction failed"))?;
        Ok(SessionOut {
            user,
            session,
            raw,
            windows,
            features,
        })
    };

    let outputs: Vec<Result<SessionOut, PipelineError>> = match source {
        SessionSource::Disk(manifest) => keys
            .par_iter()
            .map(|&(u, s)| {
                let record = load_session(&manifest, u, s)
                    .map_err(stage_err("ingest", "verify the session files"))?;
                process(record)
            })
            .collect(),
        SessionSource::Generated(records) => {
            records.into_par_iter().map(process).collect()
        }
    };

    let mut raw_counts = Vec::with_capacity(outputs.len());
    let mut window_counts = Vec::with_capacity(outputs.len());
    let mut features: Option<FeatureMatrix> = None;
    for out in outputs {
        let out = out?;
        raw_counts.push((out.user, out.session, out.raw));
        window_counts.push((out.user, out.session, out.windows));
        match &mut features {
            Some(fm) => fm
                .append(&out.features)
                .map_err(stage_err("features", "sessions disagree on channels"))?,
            None => features = Some(out.features),
        }
    }
    let features = features.ok_or_else(|| PipelineError {
        stage: "ingest",
        user_id: None,
        hint: "dataset has no sessions",
        source: "no sessions produced".into(),
    })?;

    let raw_stats = dataset_stats(&raw_counts, StatsStage::RawSamples)
        .map_err(stage_err("ingest", "dataset has no sessions"))?;
    let window_stats = dataset_stats(&window_counts, StatsStage::Windows)
        .map_err(stage_err("preprocess", "dataset has no sessions"))?;

    let features = if config.permute_labels {
        permute_user_labels(&features, crate::seeds::mix(config.seed, crate::seeds::stage::PERMUTE))
    } else {
        features
    };

    Ok(PreparedData {
        features,
        raw_stats,
        window_stats,
        sample_rate_hz,
    })
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Executes the full pipeline. When the config names an output directory the
/// report, plot tables, and any partial report are written there.
pub fn run(config: &RunConfig) -> Result<EvaluationReport, PipelineError> {
    let prepared = prepare_features(config)?;
    let features = &prepared.features;

    let (train, val, test) = split_sessions(features, &config.split)
        .map_err(stage_err("authentication", "split plan must match the data's sessions"))?;
    let split_rows = SplitCounts {
        train: train.n_rows(),
        validation: val.n_rows(),
        test: test.n_rows(),
    };
    drop((train, val, test));

    let d = features.n_cols();
    let settings = AuthSettings {
        trees: ExtraTreesSpec {
            n_trees: config.extra_trees.n_trees,
            max_features: config
                .extra_trees
                .max_features
                .unwrap_or_else(|| ExtraTreesSpec::sqrt_features(d)),
            min_samples_split: config.extra_trees.min_samples_split,
            seed: config.seed,
        },
        threshold_candidates: config.threshold_candidates.clone(),
        grids: config.resolved_grids(),
        seed: config.seed,
    };

    let dataset = DatasetBlock {
        raw: prepared.raw_stats.clone(),
        windows: prepared.window_stats.clone(),
        split_rows,
    };
    let provenance = Provenance {
        seed: config.seed,
        config_hash: config.content_hash(),
        created_unix: unix_now(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };

    let (users, failures) = run_authentication_collect(features, &config.split, &settings)
        .map_err(stage_err("authentication", "check the split plan and grids"))?;

    let incomplete = !failures.is_empty();
    let auth = AuthReport {
        aggregates: if incomplete { Vec::new() } else { compute_aggregates(&users) },
        users,
    };
    let hypothesis_tests = if incomplete { None } else { build_hypothesis_block(&auth) };
    let report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance,
        dataset,
        incomplete,
        auth,
        hypothesis_tests,
    };

    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(stage_err("output", "output directory must be creatable"))?;
        let name = if incomplete { "report_partial.json" } else { "report.json" };
        std::fs::write(dir.join(name), report.render_json())
            .map_err(stage_err("output", "output directory must be writable"))?;
        if !incomplete {
            write_plot_tables(&report, dir)
                .map_err(stage_err("output", "output directory must be writable"))?;
        }
    }

    if let Some((user, err)) = failures.into_iter().next() {
        return Err(PipelineError {
            stage: "authentication",
            user_id: Some(user),
            hint: "a partial report was written when an output directory was set",
            source: Box::new(err),
        });
    }
    Ok(report)
}

/// Runs ingest and features, then the multi-class pilot.
pub fn run_pilot_config(
    config: &RunConfig,
    split_fraction: f64,
    classifier: PilotClassifier,
) -> Result<PilotReport, PipelineError> {
    let prepared = prepare_features(config)?;
    run_pilot(&prepared.features, split_fraction, classifier)
        .map_err(stage_err("pilot", "check the pilot split fraction and data"))
}
