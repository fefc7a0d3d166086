//! Per-window statistical features and train-fitted min-max normalization.
//!
//! Six statistics per channel, channel-major: mean, population standard
//! deviation, root mean square, mean absolute value, skewness, and kurtosis
//! (excess by default). With 32 channels that is 192 columns per window.

use crate::dsp::WindowedSession;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Statistics extracted per channel, in column order.
pub const STAT_NAMES: [&str; 6] = ["mean", "std", "rms", "mav", "skew", "kurt"];

/// Columns per channel.
pub const STATS_PER_CHANNEL: usize = STAT_NAMES.len();

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty window")]
    EmptyWindow,
    #[error("window length {len} is not a multiple of channel count {channels}")]
    RaggedWindow { len: usize, channels: usize },
    #[error("non-finite sample in window")]
    NonFiniteSample,
    #[error("channel sets differ between sessions")]
    ChannelMismatch,
    #[error("feature matrix has no rows")]
    EmptyMatrix,
    #[error("too few rows to fit: {found} (need at least {minimum})")]
    TooFewRows { found: usize, minimum: usize },
    #[error("column count mismatch: normalizer has {fitted}, matrix has {found}")]
    ColumnMismatch { fitted: usize, found: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("malformed feature table {path}: {detail}")]
    MalformedTable {
        path: std::path::PathBuf,
        detail: String,
    },
}

/// Kurtosis convention. The excess form subtracts 3 so a normal distribution
/// scores 0; the raw form reports the fourth standardized moment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KurtosisConvention {
    #[default]
    Excess,
    Raw,
}

/// Extracts the six statistics for every channel of a row-major
/// `time x n_channels` window. Output is channel-major:
/// `[c0_mean, c0_std, ..., c0_kurt, c1_mean, ...]`.
pub fn extract_features(window: &[f64], n_channels: usize) -> Result<Vec<f64>, FeatureError> {
    extract_features_with(window, n_channels, KurtosisConvention::Excess)
}

pub fn extract_features_with(
    window: &[f64],
    n_channels: usize,
    kurtosis: KurtosisConvention,
) -> Result<Vec<f64>, FeatureError> {
    if window.is_empty() || n_channels == 0 {
        return Err(FeatureError::EmptyWindow);
    }
    if window.len() % n_channels != 0 {
        return Err(FeatureError::RaggedWindow {
            len: window.len(),
            channels: n_channels,
        });
    }
    let rows = window.len() / n_channels;
    let n = rows as f64;
    let mut out = Vec::with_capacity(n_channels * STATS_PER_CHANNEL);
    for c in 0..n_channels {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut sum_abs = 0.0;
        let first = window[c];
        let mut all_equal = true;
        for t in 0..rows {
            let x = window[t * n_channels + c];
            if !x.is_finite() {
                return Err(FeatureError::NonFiniteSample);
            }
            sum += x;
            sum_sq += x * x;
            sum_abs += x.abs();
            all_equal &= x == first;
        }
        let mean = sum / n;
        let rms = (sum_sq / n).sqrt();
        let mav = sum_abs / n;

        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for t in 0..rows {
            let d = window[t * n_channels + c] - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;

        // Degenerate convention: a constant channel has zero spread, zero
        // skewness, and zero kurtosis under either convention.
        let (std, skew, kurt) = if all_equal || m2 == 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            let std = m2.sqrt();
            let skew = m3 / (m2 * std);
            let kurt = match kurtosis {
                KurtosisConvention::Excess => m4 / (m2 * m2) - 3.0,
                KurtosisConvention::Raw => m4 / (m2 * m2),
            };
            (std, skew, kurt)
        };
        out.extend_from_slice(&[mean, std, rms, mav, skew, kurt]);
    }
    Ok(out)
}

/// Per-row provenance of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub user_id: u32,
    pub session_id: u32,
    pub window_index: u32,
}

/// Dense row-major feature table with per-row provenance and named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    data: Vec<f64>,
    meta: Vec<RowMeta>,
}

impl FeatureMatrix {
    pub fn empty(columns: Vec<String>) -> Self {
        Self {
            columns,
            data: Vec::new(),
            meta: Vec::new(),
        }
    }

    /// Standard column names for a channel set: `<channel>_<stat>`.
    pub fn column_names(channel_labels: &[String]) -> Vec<String> {
        channel_labels
            .iter()
            .flat_map(|ch| STAT_NAMES.iter().map(move |s| format!("{ch}_{s}")))
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.meta.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.columns.len();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn meta(&self, i: usize) -> RowMeta {
        self.meta[i]
    }

    pub fn metas(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn push_row(&mut self, meta: RowMeta, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.data.extend_from_slice(values);
        self.meta.push(meta);
    }

    /// Appends all rows of `other`; column names must match.
    pub fn append(&mut self, other: &FeatureMatrix) -> Result<(), FeatureError> {
        if self.columns != other.columns {
            return Err(FeatureError::ChannelMismatch);
        }
        self.data.extend_from_slice(&other.data);
        self.meta.extend_from_slice(&other.meta);
        Ok(())
    }

    /// New matrix with the given rows, in the given order.
    pub fn take_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let c = self.columns.len();
        let mut out = FeatureMatrix {
            columns: self.columns.clone(),
            data: Vec::with_capacity(indices.len() * c),
            meta: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
            out.meta.push(self.meta[i]);
        }
        out
    }

    /// New matrix keeping only the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix {
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
            data: Vec::with_capacity(indices.len() * self.n_rows()),
            meta: self.meta.clone(),
        };
        for r in 0..self.n_rows() {
            let row = self.row(r);
            for &i in indices {
                out.data.push(row[i]);
            }
        }
        out
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.columns.len().max(1))
    }

    /// The full backing storage, row-major `n_rows x n_cols`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sorted distinct user ids present in the metadata.
    pub fn user_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.meta.iter().map(|m| m.user_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Sorted distinct session ids present in the metadata.
    pub fn session_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.meta.iter().map(|m| m.session_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Builds one feature row per window across all sessions, preserving input
/// order. All sessions must share a channel set.
pub fn build_feature_matrix(sessions: &[WindowedSession]) -> Result<FeatureMatrix, FeatureError> {
    build_feature_matrix_with(sessions, KurtosisConvention::Excess)
}

pub fn build_feature_matrix_with(
    sessions: &[WindowedSession],
    kurtosis: KurtosisConvention,
) -> Result<FeatureMatrix, FeatureError> {
    let labels: Vec<String> = match sessions.first() {
        Some(ws) => ws.channels().labels().to_vec(),
        None => crate::ingest::DEFAULT_CHANNEL_LABELS
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    let mut out = FeatureMatrix::empty(FeatureMatrix::column_names(&labels));
    for ws in sessions {
        if ws.channels().labels() != labels.as_slice() {
            return Err(FeatureError::ChannelMismatch);
        }
        let c = ws.channels().len();
        for i in 0..ws.n_windows() {
            let features = extract_features_with(ws.window(i), c, kurtosis)?;
            out.push_row(
                RowMeta {
                    user_id: ws.user_id(),
                    session_id: ws.session_id(),
                    window_index: i as u32,
                },
                &features,
            );
        }
    }
    Ok(out)
}

/// Min-max normalizer fitted on training rows only. Columns with zero range
/// map to 0; validation/test values outside [0, 1] are kept as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &FeatureMatrix) -> Result<Self, FeatureError> {
        if train.n_rows() == 0 {
            return Err(FeatureError::EmptyMatrix);
        }
        if train.n_rows() < 2 {
            return Err(FeatureError::TooFewRows {
                found: train.n_rows(),
                minimum: 2,
            });
        }
        let c = train.n_cols();
        let mut mins = vec![f64::INFINITY; c];
        let mut maxs = vec![f64::NEG_INFINITY; c];
        for row in train.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if m.n_cols() != self.mins.len() {
            return Err(FeatureError::ColumnMismatch {
                fitted: self.mins.len(),
                found: m.n_cols(),
            });
        }
        let mut out = m.clone();
        let c = m.n_cols();
        for (i, v) in out.data.iter_mut().enumerate() {
            let j = i % c;
            let range = self.maxs[j] - self.mins[j];
            *v = if range == 0.0 {
                0.0
            } else {
                (*v - self.mins[j]) / range
            };
        }
        Ok(out)
    }
}

/// Writes the feature table as CSV with three id columns followed by the
/// feature columns, plus a JSON sidecar describing the schema.
pub fn write_feature_csv(path: &Path, m: &FeatureMatrix) -> Result<(), FeatureError> {
    let io_err = |e: std::io::Error| FeatureError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("user_id,session_id,window_index");
    for c in m.columns() {
        header.push(',');
        header.push_str(c);
    }
    header.push('\n');
    w.write_all(header.as_bytes()).map_err(io_err)?;
    let mut buf = String::new();
    for i in 0..m.n_rows() {
        buf.clear();
        let meta = m.meta(i);
        let _ = write!(buf, "{},{},{}", meta.user_id, meta.session_id, meta.window_index);
        for v in m.row(i) {
            let _ = write!(buf, ",{v}");
        }
        buf.push('\n');
        w.write_all(buf.as_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_feature_csv(path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let io_err = |e: std::io::Error| FeatureError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let malformed = |detail: String| FeatureError::MalformedTable {
        path: path.to_path_buf(),
        detail,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed("missing header".into()))?
        .map_err(io_err)?;
    let mut fields = header.split(',');
    for expected in ["user_id", "session_id", "window_index"] {
        if fields.next() != Some(expected) {
            return Err(malformed(format!("header must start with {expected}")));
        }
    }
    let columns: Vec<String> = fields.map(str::to_string).collect();
    let n_cols = columns.len();
    let mut out = FeatureMatrix::empty(columns);
    let mut row_buf = Vec::with_capacity(n_cols);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut id = |name: &str| -> Result<u32, FeatureError> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| malformed(format!("row {lineno}: bad {name}")))
        };
        let meta = RowMeta {
            user_id: id("user_id")?,
            session_id: id("session_id")?,
            window_index: id("window_index")?,
        };
        row_buf.clear();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| malformed(format!("row {lineno}: bad value {f:?}")))?;
            row_buf.push(v);
        }
        if row_buf.len() != n_cols {
            return Err(malformed(format!(
                "row {lineno}: expected {n_cols} values, found {}",
                row_buf.len()
            )));
        }
        out.push_row(meta, &row_buf);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: direct central moments with explicit powers.
    fn oracle(samples: &[f64]) -> [f64; 6] {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let rms = (samples.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        let mav = samples.iter().map(|x| x.abs()).sum::<f64>() / n;
        let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        if m2 == 0.0 {
            [mean, 0.0, rms, mav, 0.0, 0.0]
        } else {
            [
                mean,
                m2.sqrt(),
                rms,
                mav,
                m3 / m2.powf(1.5),
                m4 / (m2 * m2) - 3.0,
            ]
        }
    }

    #[test]
    fn four_point_example_matches_direct_moments() {
        let f = extract_features(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let o = oracle(&[1.0, 2.0, 3.0, 4.0]);
        for (a, b) in f.iter().zip(&o) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        assert!((f[0] - 2.5).abs() < 1e-12); // mean
        assert!((f[1] - 1.25f64.sqrt()).abs() < 1e-12); // std ~ 1.11803
        assert!((f[2] - 7.5f64.sqrt()).abs() < 1e-12); // rms ~ 2.73861
        assert!((f[3] - 2.5).abs() < 1e-12); // mav
        assert!(f[4].abs() < 1e-12); // skew
        assert!((f[5] - (-1.36)).abs() < 1e-12); // excess kurtosis
    }

    #[test]
    fn constant_channel_uses_the_degenerate_convention() {
        let f = extract_features(&[7.0, 7.0, 7.0], 1).unwrap();
        assert_eq!(f, vec![7.0, 0.0, 7.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn symmetric_channel_example() {
        let f = extract_features(&[-1.0, 1.0, -1.0, 1.0], 1).unwrap();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[3], 1.0);
        assert_eq!(f[2], 1.0);
    }

    #[test]
    fn raw_kurtosis_convention_differs_by_three() {
        let w = [1.0, 2.0, 3.0, 4.0];
        let excess = extract_features_with(&w, 1, KurtosisConvention::Excess).unwrap();
        let raw = extract_features_with(&w, 1, KurtosisConvention::Raw).unwrap();
        assert!((raw[5] - excess[5] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_an_error() {
        assert!(matches!(
            extract_features(&[], 1),
            Err(FeatureError::EmptyWindow)
        ));
    }

    #[test]
    fn oracle_equivalence_on_1000_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let rows = rng.random_range(4..64);
            let samples: Vec<f64> = (0..rows).map(|_| rng.random_range(-50.0..50.0)).collect();
            let f = extract_features(&samples, 1).unwrap();
            let o = oracle(&samples);
            for (a, b) in f.iter().zip(&o) {
                let tol = 1e-9 * b.abs().max(1.0);
                assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn scale_covariance_of_the_six_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = samples.iter().map(|v| 3.5 * v).collect();
        let f = extract_features(&samples, 1).unwrap();
        let g = extract_features(&scaled, 1).unwrap();
        for i in 0..4 {
            assert!((g[i] - 3.5 * f[i]).abs() < 1e-9, "stat {i}");
        }
        assert!((g[4] - f[4]).abs() < 1e-9);
        assert!((g[5] - f[5]).abs() < 1e-9);
    }

    fn matrix_from_column(values: &[f64]) -> FeatureMatrix {
        let mut m = FeatureMatrix::empty(vec!["c0".into()]);
        for (i, &v) in values.iter().enumerate() {
            m.push_row(
                RowMeta {
                    user_id: 1,
                    session_id: 1,
                    window_index: i as u32,
                },
                &[v],
            );
        }
        m
    }

    #[test]
    fn normalizer_maps_train_column_to_unit_range() {
        let train = matrix_from_column(&[2.0, 4.0, 6.0]);
        let norm = Normalizer::fit(&train).unwrap();
        let out = norm.apply(&train).unwrap();
        assert_eq!(out.row(0)[0], 0.0);
        assert_eq!(out.row(1)[0], 0.5);
        assert_eq!(out.row(2)[0], 1.0);
    }

    #[test]
    fn normalizer_does_not_clip_test_values() {
        let train = matrix_from_column(&[2.0, 6.0]);
        let norm = Normalizer::fit(&train).unwrap();
        let out = norm.apply(&matrix_from_column(&[8.0])).unwrap();
        assert_eq!(out.row(0)[0], 1.5);
    }

    #[test]
    fn constant_column_maps_to_zero_everywhere() {
        let train = matrix_from_column(&[3.0, 3.0, 3.0]);
        let norm = Normalizer::fit(&train).unwrap();
        let out = norm.apply(&matrix_from_column(&[3.0, 9.0])).unwrap();
        assert_eq!(out.row(0)[0], 0.0);
        assert_eq!(out.row(1)[0], 0.0);
    }

    #[test]
    fn fitting_on_empty_or_single_row_fails() {
        let empty = FeatureMatrix::empty(vec!["c0".into()]);
        assert!(matches!(
            Normalizer::fit(&empty),
            Err(FeatureError::EmptyMatrix)
        ));
        let one = matrix_from_column(&[1.0]);
        assert!(matches!(
            Normalizer::fit(&one),
            Err(FeatureError::TooFewRows { found: 1, .. })
        ));
    }

    #[test]
    fn normalized_training_columns_attain_both_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..50).map(|_| rng.random_range(-10.0..10.0)).collect();
        let train = matrix_from_column(&values);
        let out = Normalizer::fit(&train).unwrap().apply(&train).unwrap();
        let col: Vec<f64> = (0..out.n_rows()).map(|i| out.row(i)[0]).collect();
        assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(col.iter().any(|&v| v == 0.0));
        assert!(col.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn feature_csv_round_trips() {
        let dir = tempfile::TempDir::new().unwrap();
        let mut m = FeatureMatrix::empty(vec!["a".into(), "b".into()]);
        m.push_row(
            RowMeta {
                user_id: 1,
                session_id: 2,
                window_index: 0,
            },
            &[0.125, -3.5],
        );
        m.push_row(
            RowMeta {
                user_id: 1,
                session_id: 2,
                window_index: 1,
            },
            &[1e-9, 42.0],
        );
        let path = dir.path().join("features.csv");
        write_feature_csv(&path, &m).unwrap();
        let back = read_feature_csv(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn empty_input_yields_zero_rows_with_192_columns() {
        let m = build_feature_matrix(&[]).unwrap();
        assert_eq!(m.n_rows(), 0);
        assert_eq!(m.n_cols(), 192);
    }
}
