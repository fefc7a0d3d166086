//! Soft-margin SVM trained by sequential minimal optimization.
//!
//! The solver minimizes the dual `f(a) = 1/2 a'Qa - e'a` with
//! `Q_ij = y_i y_j K(x_i, x_j)`, `0 <= a_i <= C`, `y'a = 0`, using
//! maximal-violating-pair working-set selection (second-order choice of the
//! second index). Selection is deterministic: ties break toward the lower
//! index, so identical inputs give identical models.
//!
//! Kernel rows are served from a full Gram matrix when it fits a fixed
//! element budget, otherwise from a bounded FIFO row cache computed on
//! demand.

use super::ClassifierError;
use crate::features::FeatureMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};

/// `exp(-gamma * ||x - y||^2)`. Panics if the slices differ in length.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    assert_eq!(x.len(), y.len(), "rbf_kernel requires equal dimensions");
    let sq: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum();
    (-gamma * sq).exp()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Kernel with all parameters resolved to numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedKernel {
    Linear,
    Rbf { gamma: f64 },
}

impl ResolvedKernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            ResolvedKernel::Linear => dot(x, y),
            ResolvedKernel::Rbf { gamma } => rbf_kernel(x, y, *gamma),
        }
    }
}

/// Full Gram matrices are precomputed up to this many elements (256 MB of
/// f64); larger problems fall back to the row cache.
const GRAM_ELEMENT_LIMIT: usize = 32_000_000;
/// Row-cache budget in elements when the Gram matrix does not fit.
const CACHE_ELEMENT_LIMIT: usize = 16_000_000;

struct RowCache {
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

struct KernelSource<'a> {
    data: &'a [f64],
    n: usize,
    d: usize,
    kernel: ResolvedKernel,
    sq_norms: Vec<f64>,
    diag: Vec<f64>,
    gram: Option<Vec<f64>>,
    cache: RefCell<RowCache>,
}

impl<'a> KernelSource<'a> {
    fn new(m: &'a FeatureMatrix, kernel: ResolvedKernel) -> Self {
        let n = m.n_rows();
        let d = m.n_cols();
        let data = m.data();
        let sq_norms: Vec<f64> = (0..n).map(|i| dot(row(data, d, i), row(data, d, i))).collect();
        let diag: Vec<f64> = match kernel {
            ResolvedKernel::Linear => sq_norms.clone(),
            ResolvedKernel::Rbf { .. } => vec![1.0; n],
        };
        let gram = if n * n <= GRAM_ELEMENT_LIMIT {
            let mut g = vec![0.0f64; n * n];
            g.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
                kernel_row(data, d, n, &sq_norms, kernel, i, out);
            });
            Some(g)
        } else {
            None
        };
        let capacity = (CACHE_ELEMENT_LIMIT / n.max(1)).clamp(16, n.max(16));
        Self {
            data,
            n,
            d,
            kernel,
            sq_norms,
            diag,
            gram,
            cache: RefCell::new(RowCache {
                rows: HashMap::new(),
                order: VecDeque::new(),
                capacity,
            }),
        }
    }

    fn load_row(&self, i: usize, out: &mut [f64]) {
        if let Some(g) = &self.gram {
            out.copy_from_slice(&g[i * self.n..(i + 1) * self.n]);
            return;
        }
        let mut cache = self.cache.borrow_mut();
        if let Some(cached) = cache.rows.get(&i) {
            out.copy_from_slice(cached);
            return;
        }
        kernel_row(self.data, self.d, self.n, &self.sq_norms, self.kernel, i, out);
        if cache.rows.len() >= cache.capacity {
            if let Some(evict) = cache.order.pop_front() {
                cache.rows.remove(&evict);
            }
        }
        cache.rows.insert(i, out.to_vec());
        cache.order.push_back(i);
    }
}

fn row(data: &[f64], d: usize, i: usize) -> &[f64] {
    &data[i * d..(i + 1) * d]
}

fn kernel_row(
    data: &[f64],
    d: usize,
    n: usize,
    sq_norms: &[f64],
    kernel: ResolvedKernel,
    i: usize,
    out: &mut [f64],
) {
    let xi = row(data, d, i);
    match kernel {
        ResolvedKernel::Linear => {
            for t in 0..n {
                out[t] = dot(xi, row(data, d, t));
            }
        }
        ResolvedKernel::Rbf { gamma } => {
            let sq_i = sq_norms[i];
            for t in 0..n {
                let sq = sq_i + sq_norms[t] - 2.0 * dot(xi, row(data, d, t));
                out[t] = (-gamma * sq.max(0.0)).exp();
            }
        }
    }
}

/// Feasibility and convergence numbers recorded at the end of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDiagnostics {
    pub sum_alpha_y: f64,
    pub max_alpha: f64,
    pub min_alpha: f64,
    pub final_violation: f64,
    pub objective: f64,
    pub n_support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: ResolvedKernel,
    pub c: f64,
    pub n_features: usize,
    /// Support vectors, row-major `n_support x n_features`.
    pub support_vectors: Vec<f64>,
    /// `alpha_i * y_i` per support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    /// Collapsed weight vector, linear kernel only.
    pub weights: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: u64,
    pub diagnostics: SvmDiagnostics,
}

impl SvmModel {
    pub fn decision_value(&self, x: &[f64]) -> f64 {
        match (&self.kernel, &self.weights) {
            (ResolvedKernel::Linear, Some(w)) => dot(w, x) + self.bias,
            _ => {
                let mut f = self.bias;
                for (sv, coef) in self
                    .support_vectors
                    .chunks_exact(self.n_features)
                    .zip(&self.coefficients)
                {
                    f += coef * self.kernel.eval(sv, x);
                }
                f
            }
        }
    }

    /// Predicts 1 iff the decision value is nonnegative.
    pub fn predict(&self, x: &[f64]) -> u32 {
        (self.decision_value(x) >= 0.0) as u32
    }
}

pub(crate) struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: u64,
    pub converged: bool,
    pub final_violation: f64,
    pub objective: f64,
    /// Dual objective `f(a)` after every pair update, when requested.
    pub trace: Option<Vec<f64>>,
}

const TAU: f64 = 1e-12;

fn smo_solve(
    ks: &KernelSource,
    y: &[f64],
    c: f64,
    tolerance: f64,
    max_iter: u64,
    record_trace: bool,
) -> SmoSolution {
    let n = ks.n;
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut row_i = vec![0.0f64; n];
    let mut row_j = vec![0.0f64; n];
    let mut objective = 0.0f64;
    let mut trace = if record_trace { Some(Vec::new()) } else { None };

    let in_up = |t: usize, alpha: &[f64]| {
        (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0)
    };
    let in_low = |t: usize, alpha: &[f64]| {
        (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c)
    };

    let mut iterations = 0u64;
    let mut converged = false;
    let mut final_violation = f64::INFINITY;

    while iterations < max_iter {
        // i: maximal violator in I_up
        let mut i = usize::MAX;
        let mut m_up = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(t, &alpha) {
                let v = -y[t] * grad[t];
                if v > m_up {
                    m_up = v;
                    i = t;
                }
            }
        }
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            if in_low(t, &alpha) {
                let v = -y[t] * grad[t];
                if v < m_low {
                    m_low = v;
                }
            }
        }
        final_violation = m_up - m_low;
        if i == usize::MAX || final_violation <= tolerance {
            converged = true;
            break;
        }

        ks.load_row(i, &mut row_i);

        // j: second-order gain among violating members of I_low
        let mut j = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for t in 0..n {
            if !in_low(t, &alpha) {
                continue;
            }
            let v = -y[t] * grad[t];
            if v >= m_up {
                continue;
            }
            let b = m_up - v;
            let a = (ks.diag[i] + ks.diag[t] - 2.0 * row_i[t]).max(TAU);
            let gain = b * b / a;
            if gain > best_gain {
                best_gain = gain;
                j = t;
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }

        ks.load_row(j, &mut row_j);

        let old_i = alpha[i];
        let old_j = alpha[j];
        let quad = (ks.diag[i] + ks.diag[j] - 2.0 * row_i[j]).max(TAU);

        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let delta_i = alpha[i] - old_i;
        let delta_j = alpha[j] - old_j;
        if delta_i == 0.0 && delta_j == 0.0 {
            // numerically stuck pair; treat as converged at this violation
            converged = final_violation <= tolerance;
            break;
        }

        // objective delta from the old gradient:
        // df = G_i di + G_j dj + 1/2 (Qii di^2 + 2 Qij di dj + Qjj dj^2)
        let q_ij = y[i] * y[j] * row_i[j];
        objective += grad[i] * delta_i
            + grad[j] * delta_j
            + 0.5 * (ks.diag[i] * delta_i * delta_i
                + 2.0 * q_ij * delta_i * delta_j
                + ks.diag[j] * delta_j * delta_j);
        if let Some(t) = &mut trace {
            t.push(objective);
        }

        for t in 0..n {
            grad[t] += y[t] * (y[i] * row_i[t] * delta_i + y[j] * row_j[t] * delta_j);
        }
        iterations += 1;
    }

    // bias from free support vectors, else midpoint of the KKT bounds
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..n {
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += -y[t] * grad[t];
            free_count += 1;
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(t, &alpha) {
                m_up = m_up.max(v);
            }
            if in_low(t, &alpha) {
                m_low = m_low.min(v);
            }
        }
        if m_up.is_finite() && m_low.is_finite() {
            (m_up + m_low) / 2.0
        } else {
            0.0
        }
    };

    SmoSolution {
        alpha,
        bias,
        iterations,
        converged,
        final_violation,
        objective,
        trace,
    }
}

/// Trains a binary SVM on 0/1 labels. A model that hits the iteration cap is
/// returned with `converged = false` rather than failing.
pub fn train_svm_resolved(
    m: &FeatureMatrix,
    labels: &[u32],
    kernel: ResolvedKernel,
    c: f64,
    tolerance: f64,
    max_iter: u64,
) -> Result<SvmModel, ClassifierError> {
    train_svm_inner(m, labels, kernel, c, tolerance, max_iter, false).map(|(m, _)| m)
}

/// As [`train_svm_resolved`] but also returns the dual-objective trajectory
/// (the value of `f(a)` after every pair update).
pub fn train_svm_traced(
    m: &FeatureMatrix,
    labels: &[u32],
    kernel: ResolvedKernel,
    c: f64,
    tolerance: f64,
    max_iter: u64,
) -> Result<(SvmModel, Vec<f64>), ClassifierError> {
    train_svm_inner(m, labels, kernel, c, tolerance, max_iter, true)
        .map(|(m, t)| (m, t.unwrap_or_default()))
}

fn train_svm_inner(
    m: &FeatureMatrix,
    labels: &[u32],
    kernel: ResolvedKernel,
    c: f64,
    tolerance: f64,
    max_iter: u64,
    record_trace: bool,
) -> Result<(SvmModel, Option<Vec<f64>>), ClassifierError> {
    if m.n_rows() == 0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if labels.len() != m.n_rows() {
        return Err(ClassifierError::LabelMismatch {
            labels: labels.len(),
            rows: m.n_rows(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(ClassifierError::NonBinaryLabel(bad));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(ClassifierError::SingleClass);
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(ClassifierError::InvalidSpec("C must be positive".into()));
    }
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(ClassifierError::InvalidSpec(
            "tolerance must be positive".into(),
        ));
    }

    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let ks = KernelSource::new(m, kernel);
    let solution = smo_solve(&ks, &y, c, tolerance, max_iter, record_trace);

    let d = m.n_cols();
    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for (i, &a) in solution.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.extend_from_slice(m.row(i));
            coefficients.push(a * y[i]);
        }
    }
    let weights = match kernel {
        ResolvedKernel::Linear => {
            let mut w = vec![0.0f64; d];
            for (sv, coef) in support_vectors.chunks_exact(d).zip(&coefficients) {
                for (wk, xk) in w.iter_mut().zip(sv) {
                    *wk += coef * xk;
                }
            }
            Some(w)
        }
        ResolvedKernel::Rbf { .. } => None,
    };
    let sum_alpha_y: f64 = solution
        .alpha
        .iter()
        .zip(&y)
        .map(|(a, yi)| a * yi)
        .sum();
    let diagnostics = SvmDiagnostics {
        sum_alpha_y,
        max_alpha: solution.alpha.iter().copied().fold(0.0, f64::max),
        min_alpha: solution.alpha.iter().copied().fold(f64::INFINITY, f64::min),
        final_violation: solution.final_violation,
        objective: solution.objective,
        n_support: coefficients.len(),
    };
    Ok((
        SvmModel {
            kernel,
            c,
            n_features: d,
            support_vectors,
            coefficients,
            bias: solution.bias,
            weights,
            converged: solution.converged,
            iterations: solution.iterations,
            diagnostics,
        },
        solution.trace,
    ))
}
