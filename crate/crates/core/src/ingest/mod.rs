//! Session ingest: canonical on-disk format, dataset statistics, and the
//! synthetic generator.
//!
//! A dataset is a `manifest.json` plus one CSV file per (user, session). The
//! CSV carries one header row of channel labels and one row of microvolt
//! samples per time step. The format is deliberately dumb: diff-able,
//! language-neutral, and byte-stable under a load/write round trip.

pub mod synthetic;

pub use synthetic::{generate_synthetic, SyntheticSpec, UserSignature};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Number of EEG channels in a session recording.
pub const CHANNEL_COUNT: usize = 32;

/// Default electrode labels, in recording order.
pub const DEFAULT_CHANNEL_LABELS: [&str; CHANNEL_COUNT] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz",
    "C4", "T8", "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "PO9",
    "O1", "Oz", "O2", "PO10",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("manifest not found: {path}")]
    ManifestNotFound { path: PathBuf },
    #[error("malformed manifest {path}: {detail}")]
    MalformedManifest { path: PathBuf, detail: String },
    #[error("empty manifest: {path}")]
    EmptyManifest { path: PathBuf },
    #[error("duplicate session entry for user {user_id} session {session_id}")]
    DuplicateSession { user_id: u32, session_id: u32 },
    #[error("missing session file: {path}")]
    MissingSessionFile { path: PathBuf },
    #[error("no manifest entry for user {user_id} session {session_id}")]
    EntryNotFound { user_id: u32, session_id: u32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("channel count mismatch at row {row}: expected {expected}, found {found}")]
    ChannelCountMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("channel labels must be distinct and {CHANNEL_COUNT} in number: {detail}")]
    InvalidChannels { detail: String },
    #[error("unparseable value at row {row}, column {column}: {text:?}")]
    MalformedValue {
        row: usize,
        column: usize,
        text: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },
    #[error("sample count mismatch for user {user_id} session {session_id}: manifest declares {declared}, file has {found}")]
    SampleCountMismatch {
        user_id: u32,
        session_id: u32,
        declared: u64,
        found: u64,
    },
    #[error("session has no sample rows")]
    EmptySession,
    #[error("empty counts: dataset statistics need at least one entry")]
    EmptyCounts,
    #[error("invalid synthetic spec: {0}")]
    InvalidSyntheticSpec(String),
    #[error("unstable autoregressive parameters for user {user_id}")]
    UnstableAr { user_id: u32 },
}

/// Ordered set of exactly [`CHANNEL_COUNT`] distinct channel labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSet {
    labels: Vec<String>,
}

impl ChannelSet {
    pub fn new(labels: Vec<String>) -> Result<Self, IngestError> {
        if labels.len() != CHANNEL_COUNT {
            return Err(IngestError::InvalidChannels {
                detail: format!("got {} labels", labels.len()),
            });
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(IngestError::InvalidChannels {
                    detail: format!("duplicate label {a:?}"),
                });
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Default for ChannelSet {
    fn default() -> Self {
        Self {
            labels: DEFAULT_CHANNEL_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One user-session of multi-channel EEG, row-major `time x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub user_id: u32,
    pub session_id: u32,
    pub sample_rate_hz: f64,
    pub channels: ChannelSet,
    samples: Vec<f64>,
}

impl SessionRecord {
    /// Builds a record, enforcing shape and finiteness.
    pub fn new(
        user_id: u32,
        session_id: u32,
        sample_rate_hz: f64,
        channels: ChannelSet,
        samples: Vec<f64>,
    ) -> Result<Self, IngestError> {
        let c = channels.len();
        if samples.is_empty() || samples.len() % c != 0 {
            return Err(IngestError::EmptySession);
        }
        for (i, v) in samples.iter().enumerate() {
            if !v.is_finite() {
                return Err(IngestError::NonFiniteValue {
                    row: i / c,
                    column: i % c,
                });
            }
        }
        Ok(Self {
            user_id,
            session_id,
            sample_rate_hz,
            channels,
            samples,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.channels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// One time step, all channels.
    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.channels.len();
        &self.samples[t * c..(t + 1) * c]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub(crate) fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub user_id: u32,
    pub session_id: u32,
    pub path: String,
    pub samples: u64,
}

/// Parsed `manifest.json`; `root` is the directory the manifest lives in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub sample_rate_hz: f64,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn entry(&self, user_id: u32, session_id: u32) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.user_id == user_id && e.session_id == session_id)
    }
}

/// Canonical file name for one session.
pub fn session_file_name(user_id: u32, session_id: u32) -> String {
    format!("u{user_id}_s{session_id}.csv")
}

/// Loads and validates a manifest. Entries come back sorted by
/// (user_id, session_id); duplicates and dangling file references are errors.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(IngestError::ManifestNotFound {
                path: path.to_path_buf(),
            })
        }
        Err(e) => {
            return Err(IngestError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| IngestError::MalformedManifest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(IngestError::MalformedManifest {
            path: path.to_path_buf(),
            detail: format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            ),
        });
    }
    if !(manifest.sample_rate_hz.is_finite() && manifest.sample_rate_hz > 0.0) {
        return Err(IngestError::MalformedManifest {
            path: path.to_path_buf(),
            detail: "sample_rate_hz must be positive".into(),
        });
    }
    if manifest.entries.is_empty() {
        return Err(IngestError::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    manifest
        .entries
        .sort_by_key(|e| (e.user_id, e.session_id));
    for pair in manifest.entries.windows(2) {
        if pair[0].user_id == pair[1].user_id && pair[0].session_id == pair[1].session_id {
            return Err(IngestError::DuplicateSession {
                user_id: pair[0].user_id,
                session_id: pair[0].session_id,
            });
        }
    }
    manifest.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    for e in &manifest.entries {
        let p = manifest.root.join(&e.path);
        if !p.is_file() {
            return Err(IngestError::MissingSessionFile { path: p });
        }
    }
    Ok(manifest)
}

/// Writes `manifest.json` into `dir`.
pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<PathBuf, IngestError> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| IngestError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

/// Loads one session referenced by the manifest and checks it against the
/// declared sample count.
pub fn load_session(
    manifest: &DatasetManifest,
    user_id: u32,
    session_id: u32,
) -> Result<SessionRecord, IngestError> {
    let entry = manifest
        .entry(user_id, session_id)
        .ok_or(IngestError::EntryNotFound {
            user_id,
            session_id,
        })?;
    let path = manifest.root.join(&entry.path);
    let record = read_session_csv(&path, user_id, session_id, manifest.sample_rate_hz)?;
    let found = record.n_samples() as u64;
    if found != entry.samples {
        return Err(IngestError::SampleCountMismatch {
            user_id,
            session_id,
            declared: entry.samples,
            found,
        });
    }
    Ok(record)
}

/// Parses one canonical session CSV. Row indices in errors are 0-based data
/// rows (the header is not counted).
pub fn read_session_csv(
    path: &Path,
    user_id: u32,
    session_id: u32,
    sample_rate_hz: f64,
) -> Result<SessionRecord, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingSessionFile {
                path: path.to_path_buf(),
            }
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(IngestError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
        None => return Err(IngestError::EmptySession),
    };
    let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let channels = ChannelSet::new(labels)?;
    let c = channels.len();

    let mut samples: Vec<f64> = Vec::new();
    let mut row = 0usize;
    for line in lines {
        let line = line.map_err(|e| IngestError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.is_empty() {
            continue;
        }
        let mut column = 0usize;
        for field in line.split(',') {
            if column >= c {
                break;
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| IngestError::MalformedValue {
                    row,
                    column,
                    text: field.to_string(),
                })?;
            if !v.is_finite() {
                return Err(IngestError::NonFiniteValue { row, column });
            }
            samples.push(v);
            column += 1;
        }
        let found = line.split(',').count();
        if found != c {
            return Err(IngestError::ChannelCountMismatch {
                row,
                expected: c,
                found,
            });
        }
        row += 1;
    }
    if row == 0 {
        return Err(IngestError::EmptySession);
    }
    SessionRecord::new(user_id, session_id, sample_rate_hz, channels, samples)
}

/// Writes a session in the canonical CSV form. Values are formatted with the
/// shortest representation that round-trips, so `write(load(x))` is
/// byte-identical for files produced by this writer.
pub fn write_session(path: &Path, record: &SessionRecord) -> Result<(), IngestError> {
    let file = std::fs::File::create(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = std::io::BufWriter::new(file);
    let mut line = record.channels.labels().join(",");
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let c = record.n_channels();
    let mut buf = String::new();
    for t in 0..record.n_samples() {
        buf.clear();
        for (i, v) in record.row(t).iter().enumerate() {
            if i + 1 < c {
                let _ = write!(buf, "{v},");
            } else {
                let _ = writeln!(buf, "{v}");
            }
        }
        w.write_all(buf.as_bytes()).map_err(|e| IngestError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Which pipeline stage a [`DatasetStats`] block summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsStage {
    /// Raw per-session sample counts.
    RawSamples,
    /// Per-session window counts after segmentation.
    Windows,
}

/// Summary statistics over per-user totals (each user's counts are summed
/// across their sessions before aggregating).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub stage: StatsStage,
    pub user_count: usize,
    pub total: u64,
    pub average: f64,
    pub median: f64,
    pub minimum: u64,
    pub maximum: u64,
    /// Population standard deviation (the reported default).
    pub std_population: f64,
    /// Sample standard deviation, reported alongside for comparison.
    pub std_sample: f64,
}

/// Aggregates `(user, session, count)` triples into [`DatasetStats`].
pub fn dataset_stats(
    counts: &[(u32, u32, u64)],
    stage: StatsStage,
) -> Result<DatasetStats, IngestError> {
    if counts.is_empty() {
        return Err(IngestError::EmptyCounts);
    }
    let mut per_user: BTreeMap<u32, u64> = BTreeMap::new();
    for &(user, _session, count) in counts {
        *per_user.entry(user).or_insert(0) += count;
    }
    let mut totals: Vec<u64> = per_user.values().copied().collect();
    totals.sort_unstable();
    let n = totals.len();
    let total: u64 = totals.iter().sum();
    let average = total as f64 / n as f64;
    let median = if n % 2 == 1 {
        totals[n / 2] as f64
    } else {
        (totals[n / 2 - 1] as f64 + totals[n / 2] as f64) / 2.0
    };
    let var_num: f64 = totals
        .iter()
        .map(|&v| {
            let d = v as f64 - average;
            d * d
        })
        .sum();
    let std_population = (var_num / n as f64).sqrt();
    let std_sample = if n > 1 {
        (var_num / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(DatasetStats {
        stage,
        user_count: n,
        total,
        average,
        median,
        minimum: totals[0],
        maximum: totals[n - 1],
        std_population,
        std_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn small_record(user: u32, session: u32, rows: usize) -> SessionRecord {
        let samples: Vec<f64> = (0..rows * CHANNEL_COUNT)
            .map(|i| (i as f64) * 0.25 - 3.0)
            .collect();
        SessionRecord::new(user, session, 500.0, ChannelSet::default(), samples).unwrap()
    }

    fn write_dataset(dir: &Path, users: u32, sessions: u32, rows: usize) -> PathBuf {
        let mut entries = Vec::new();
        for u in 1..=users {
            for s in 1..=sessions {
                let name = session_file_name(u, s);
                write_session(&dir.join(&name), &small_record(u, s, rows)).unwrap();
                entries.push(ManifestEntry {
                    user_id: u,
                    session_id: s,
                    path: name,
                    samples: rows as u64,
                });
            }
        }
        let manifest = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            sample_rate_hz: 500.0,
            entries,
            root: dir.to_path_buf(),
        };
        write_manifest(dir, &manifest).unwrap()
    }

    #[test]
    fn default_channel_set_has_32_distinct_labels() {
        let cs = ChannelSet::default();
        assert_eq!(cs.len(), 32);
        assert_eq!(cs.labels()[0], "Fp1");
        assert_eq!(cs.labels()[4], "Fz");
        assert_eq!(cs.labels()[31], "PO10");
    }

    #[test]
    fn manifest_with_12_users_9_sessions_has_108_entries() {
        let dir = TempDir::new().unwrap();
        let path = write_dataset(dir.path(), 12, 9, 4);
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.entries.len(), 108);
        // sorted (user, session) ascending
        let keys: Vec<(u32, u32)> = manifest
            .entries
            .iter()
            .map(|e| (e.user_id, e.session_id))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = TempDir::new().unwrap();
        let manifest = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            sample_rate_hz: 500.0,
            entries: vec![],
            root: dir.path().to_path_buf(),
        };
        let path = write_manifest(dir.path(), &manifest).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(IngestError::EmptyManifest { .. })
        ));
    }

    #[test]
    fn duplicate_session_entry_is_an_error() {
        let dir = TempDir::new().unwrap();
        let name = session_file_name(3, 2);
        write_session(&dir.path().join(&name), &small_record(3, 2, 4)).unwrap();
        let entry = ManifestEntry {
            user_id: 3,
            session_id: 2,
            path: name,
            samples: 4,
        };
        let manifest = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            sample_rate_hz: 500.0,
            entries: vec![entry.clone(), entry],
            root: dir.path().to_path_buf(),
        };
        let path = write_manifest(dir.path(), &manifest).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(IngestError::DuplicateSession {
                user_id: 3,
                session_id: 2
            })
        ));
    }

    #[test]
    fn missing_manifest_and_missing_session_file_are_distinct_errors() {
        let dir = TempDir::new().unwrap();
        assert!(matches!(
            load_manifest(&dir.path().join("nope.json")),
            Err(IngestError::ManifestNotFound { .. })
        ));
        let manifest = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            sample_rate_hz: 500.0,
            entries: vec![ManifestEntry {
                user_id: 1,
                session_id: 1,
                path: "u1_s1.csv".into(),
                samples: 4,
            }],
            root: dir.path().to_path_buf(),
        };
        let path = write_manifest(dir.path(), &manifest).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(IngestError::MissingSessionFile { .. })
        ));
    }

    #[test]
    fn malformed_manifest_is_an_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(IngestError::MalformedManifest { .. })
        ));
    }

    #[test]
    fn load_session_round_trips_a_1000_row_file() {
        let dir = TempDir::new().unwrap();
        let path = write_dataset(dir.path(), 1, 1, 1000);
        let manifest = load_manifest(&path).unwrap();
        let record = load_session(&manifest, 1, 1).unwrap();
        assert_eq!(record.n_samples(), 1000);
        assert_eq!(record.n_channels(), 32);
        assert_eq!(record, small_record(1, 1, 1000));
    }

    #[test]
    fn session_with_31_columns_is_a_channel_count_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.csv");
        let header = DEFAULT_CHANNEL_LABELS.join(",");
        let row31 = vec!["0.5"; 31].join(",");
        std::fs::write(&path, format!("{header}\n{row31}\n")).unwrap();
        assert!(matches!(
            read_session_csv(&path, 1, 1, 500.0),
            Err(IngestError::ChannelCountMismatch {
                expected: 32,
                found: 31,
                ..
            })
        ));
    }

    #[test]
    fn nan_at_row_7_names_row_7() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("nan.csv");
        let header = DEFAULT_CHANNEL_LABELS.join(",");
        let good = vec!["1.0"; 32].join(",");
        let mut bad_fields = vec!["1.0"; 32];
        bad_fields[5] = "NaN";
        let bad = bad_fields.join(",");
        let mut text = format!("{header}\n");
        for r in 0..10 {
            if r == 7 {
                text.push_str(&bad);
            } else {
                text.push_str(&good);
            }
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            read_session_csv(&path, 1, 1, 500.0),
            Err(IngestError::NonFiniteValue { row: 7, column: 5 })
        ));
    }

    #[test]
    fn declared_sample_count_is_enforced() {
        let dir = TempDir::new().unwrap();
        let name = session_file_name(1, 1);
        write_session(&dir.path().join(&name), &small_record(1, 1, 5)).unwrap();
        let manifest = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            sample_rate_hz: 500.0,
            entries: vec![ManifestEntry {
                user_id: 1,
                session_id: 1,
                path: name,
                samples: 6,
            }],
            root: dir.path().to_path_buf(),
        };
        let path = write_manifest(dir.path(), &manifest).unwrap();
        let manifest = load_manifest(&path).unwrap();
        assert!(matches!(
            load_session(&manifest, 1, 1),
            Err(IngestError::SampleCountMismatch {
                declared: 6,
                found: 5,
                ..
            })
        ));
    }

    #[test]
    fn write_load_write_is_byte_identical() {
        let dir = TempDir::new().unwrap();
        let record = small_record(4, 2, 64);
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_session(&p1, &record).unwrap();
        let loaded = read_session_csv(&p1, 4, 2, 500.0).unwrap();
        write_session(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn dataset_stats_examples() {
        // three users, one session each
        let s = dataset_stats(&[(1, 1, 5), (2, 1, 5), (3, 1, 5)], StatsStage::RawSamples).unwrap();
        assert_eq!(s.total, 15);
        assert_eq!(s.std_population, 0.0);
        assert_eq!(s.average, 5.0);

        let s = dataset_stats(
            &[(1, 1, 1), (2, 1, 2), (3, 1, 3), (4, 1, 4)],
            StatsStage::Windows,
        )
        .unwrap();
        assert_eq!(s.total, 10);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.minimum, 1);
        assert_eq!(s.maximum, 4);
    }

    #[test]
    fn dataset_stats_groups_sessions_by_user() {
        // one user with two sessions collapses to a single total
        let s = dataset_stats(&[(1, 1, 10), (1, 2, 20)], StatsStage::RawSamples).unwrap();
        assert_eq!(s.user_count, 1);
        assert_eq!(s.total, 30);
        assert_eq!(s.median, 30.0);
    }

    #[test]
    fn dataset_stats_empty_is_an_error() {
        assert!(matches!(
            dataset_stats(&[], StatsStage::RawSamples),
            Err(IngestError::EmptyCounts)
        ));
    }

    #[test]
    fn stats_total_is_exact_integer_sum() {
        let counts: Vec<(u32, u32, u64)> = (0..100)
            .map(|i| (i as u32 % 7, i as u32 / 7, (i * 997 + 13) as u64))
            .collect();
        let expect: u64 = counts.iter().map(|&(_, _, c)| c).sum();
        let s = dataset_stats(&counts, StatsStage::RawSamples).unwrap();
        assert_eq!(s.total, expect);
        // total = average * group count, within 1e-6 relative
        let recomputed = s.average * s.user_count as f64;
        assert!((recomputed - s.total as f64).abs() <= 1e-6 * s.total as f64);
    }
}
