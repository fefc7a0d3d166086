//! Linear discriminant analysis via the generalized eigenproblem.
//!
//! Between-class versus within-class scatter is reduced to a standard
//! symmetric eigenproblem with a Cholesky factor of the within-class
//! scatter (`S_w = L L'`, `M = inv(L) S_b inv(L')`), solved with the Jacobi
//! method, keeping up to `classes - 1` directions. Directions are scaled so
//! the projected within-class scatter is the identity, which makes nearest
//! projected-centroid classification (with log-prior correction) the
//! Mahalanobis rule on the retained subspace.

use super::linalg::{back_solve_transposed, cholesky_in_place, forward_solve, jacobi_eigen};
use super::ClassifierError;
use crate::features::FeatureMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<u32>,
    pub priors: Vec<f64>,
    /// Projection directions, row-major `n_directions x n_features`.
    pub directions: Vec<f64>,
    pub n_features: usize,
    /// Class centroids in the projected space, row-major.
    pub centroids: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Ridge added to the within-class scatter, when one was needed.
    pub ridge: Option<f64>,
}

pub fn train_lda(m: &FeatureMatrix, labels: &[u32]) -> Result<LdaModel, ClassifierError> {
    let n = m.n_rows();
    let d = m.n_cols();
    if n == 0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if labels.len() != n {
        return Err(ClassifierError::LabelMismatch {
            labels: labels.len(),
            rows: n,
        });
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ClassifierError::SingleClass);
    }

    let class_index = |label: u32| classes.binary_search(&label).unwrap();
    let k = classes.len();
    let mut counts = vec![0usize; k];
    let mut means = vec![0.0f64; k * d];
    for (row, &label) in m.iter_rows().zip(labels) {
        let c = class_index(label);
        counts[c] += 1;
        for (j, &v) in row.iter().enumerate() {
            means[c * d + j] += v;
        }
    }
    for c in 0..k {
        for j in 0..d {
            means[c * d + j] /= counts[c] as f64;
        }
    }
    let mut overall = vec![0.0f64; d];
    for (row, _) in m.iter_rows().zip(labels) {
        for (j, &v) in row.iter().enumerate() {
            overall[j] += v;
        }
    }
    for v in &mut overall {
        *v /= n as f64;
    }

    // scatter matrices
    let mut s_w = vec![0.0f64; d * d];
    let mut centered = vec![0.0f64; d];
    for (row, &label) in m.iter_rows().zip(labels) {
        let c = class_index(label);
        for j in 0..d {
            centered[j] = row[j] - means[c * d + j];
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                s_w[i * d + j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            s_w[i * d + j] = s_w[j * d + i];
        }
    }
    let mut s_b = vec![0.0f64; d * d];
    for c in 0..k {
        let w = counts[c] as f64;
        for i in 0..d {
            let di = means[c * d + i] - overall[i];
            for j in 0..d {
                s_b[i * d + j] += w * di * (means[c * d + j] - overall[j]);
            }
        }
    }

    // Cholesky of S_w, with one ridge retry on singular input
    let mut l = s_w.clone();
    let mut ridge = None;
    if !cholesky_in_place(&mut l, d) {
        let trace: f64 = (0..d).map(|i| s_w[i * d + i]).sum();
        let eps = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-9 };
        l.copy_from_slice(&s_w);
        for i in 0..d {
            l[i * d + i] += eps;
        }
        if !cholesky_in_place(&mut l, d) {
            return Err(ClassifierError::SingularScatter);
        }
        ridge = Some(eps);
    }

    // M = inv(L) S_b inv(L') via two triangular solves, then symmetrize
    let mut y = vec![0.0f64; d * d];
    let mut col = vec![0.0f64; d];
    for j in 0..d {
        for i in 0..d {
            col[i] = s_b[i * d + j];
        }
        forward_solve(&l, d, &mut col);
        for i in 0..d {
            y[i * d + j] = col[i];
        }
    }
    let mut m_sym = vec![0.0f64; d * d];
    for j in 0..d {
        for i in 0..d {
            col[i] = y[j * d + i]; // row j of Y = column j of Y'
        }
        forward_solve(&l, d, &mut col);
        for i in 0..d {
            m_sym[j * d + i] = col[i]; // row j of M' = column j of M
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            let avg = 0.5 * (m_sym[i * d + j] + m_sym[j * d + i]);
            m_sym[i * d + j] = avg;
            m_sym[j * d + i] = avg;
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(&mut m_sym, d);
    let n_dir = (k - 1).min(d);
    let mut directions = vec![0.0f64; n_dir * d];
    for r in 0..n_dir {
        let mut u = eigenvectors[r * d..(r + 1) * d].to_vec();
        back_solve_transposed(&l, d, &mut u);
        directions[r * d..(r + 1) * d].copy_from_slice(&u);
    }

    // projected class centroids
    let mut centroids = vec![0.0f64; k * n_dir];
    for c in 0..k {
        for r in 0..n_dir {
            let mut z = 0.0;
            for j in 0..d {
                z += directions[r * d + j] * means[c * d + j];
            }
            centroids[c * n_dir + r] = z;
        }
    }
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

    Ok(LdaModel {
        classes,
        priors,
        directions,
        n_features: d,
        centroids,
        eigenvalues: eigenvalues[..n_dir].to_vec(),
        ridge,
    })
}

impl LdaModel {
    pub fn n_directions(&self) -> usize {
        if self.n_features == 0 {
            0
        } else {
            self.directions.len() / self.n_features
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let d = self.n_features;
        self.directions
            .chunks_exact(d)
            .map(|dir| dir.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Nearest projected centroid with a log-prior correction. Exact score
    /// ties resolve to the smaller class label.
    pub fn predict(&self, x: &[f64]) -> u32 {
        let z = self.project(x);
        let n_dir = z.len();
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (c, centroid) in self.centroids.chunks_exact(n_dir.max(1)).enumerate() {
            let sq: f64 = if n_dir == 0 {
                0.0
            } else {
                z.iter()
                    .zip(centroid)
                    .map(|(a, b)| {
                        let d = a - b;
                        d * d
                    })
                    .sum()
            };
            let score = -0.5 * sq + self.priors[c].ln();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        self.classes[best]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RowMeta;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        let cols: Vec<String> = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
        let mut m = FeatureMatrix::empty(cols);
        for (i, r) in rows.iter().enumerate() {
            m.push_row(
                RowMeta {
                    user_id: 1,
                    session_id: 1,
                    window_index: i as u32,
                },
                r,
            );
        }
        m
    }

    fn two_gaussians(seed: u64, n_per_class: usize) -> (FeatureMatrix, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n_per_class {
            rows.push(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(0);
        }
        for _ in 0..n_per_class {
            rows.push(vec![
                4.0 + rng.random_range(-1.0..1.0),
                4.0 + rng.random_range(-1.0..1.0),
            ]);
            labels.push(1);
        }
        (matrix(&rows), labels)
    }

    #[test]
    fn fisher_direction_for_identity_covariance_is_the_mean_difference() {
        let (m, labels) = two_gaussians(2, 400);
        let model = train_lda(&m, &labels).unwrap();
        assert_eq!(model.n_directions(), 1);
        let dir = &model.directions;
        // analytic direction ~ Sigma^-1 (mu2 - mu1) ~ (1, 1)
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        let cos = (dir[0] + dir[1]) / (norm * 2.0f64.sqrt());
        let angle_deg = cos.abs().min(1.0).acos().to_degrees();
        assert!(angle_deg < 5.0, "direction off by {angle_deg} degrees");
        // the point (0, 1) belongs with the class at the origin
        assert_eq!(model.predict(&[0.0, 1.0]), 0);
        assert_eq!(model.predict(&[4.0, 3.0]), 1);
    }

    #[test]
    fn identical_class_means_degenerate_to_the_prior() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // both classes centered at the origin, class 1 has twice the mass
        for i in 0..300 {
            rows.push(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(if i % 3 == 0 { 0 } else { 1 });
        }
        let m = matrix(&rows);
        let model = train_lda(&m, &labels).unwrap();
        assert!(
            model.eigenvalues[0].abs() < 0.05,
            "leading eigenvalue {} should be near zero",
            model.eigenvalues[0]
        );
        // prediction at the shared mean is decided by the larger prior
        assert_eq!(model.predict(&[0.0, 0.0]), 1);
    }

    #[test]
    fn twelve_classes_yield_at_most_eleven_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..12u32 {
            for _ in 0..30 {
                let base = c as f64;
                rows.push(vec![
                    base + rng.random_range(-0.3..0.3),
                    (base * 1.7).sin() + rng.random_range(-0.3..0.3),
                    (base * 0.9).cos() + rng.random_range(-0.3..0.3),
                ]);
                labels.push(c);
            }
        }
        let m = matrix(&rows);
        let model = train_lda(&m, &labels).unwrap();
        assert!(model.n_directions() <= 11);
        assert_eq!(model.n_directions(), 3.min(11));
    }

    #[test]
    fn uniform_feature_scaling_leaves_predictions_unchanged() {
        let (m, labels) = two_gaussians(7, 200);
        let model = train_lda(&m, &labels).unwrap();
        let scaled_rows: Vec<Vec<f64>> = (0..m.n_rows())
            .map(|i| m.row(i).iter().map(|v| v * 250.0).collect())
            .collect();
        let m_scaled = matrix(&scaled_rows);
        let model_scaled = train_lda(&m_scaled, &labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = [rng.random_range(-2.0..6.0), rng.random_range(-2.0..6.0)];
            let q_scaled = [q[0] * 250.0, q[1] * 250.0];
            assert_eq!(model.predict(&q), model_scaled.predict(&q_scaled));
        }
    }

    #[test]
    fn singular_scatter_gets_a_reported_ridge() {
        // a feature that is constant within every class makes S_w singular
        let rows = vec![
            vec![0.0, 5.0],
            vec![1.0, 5.0],
            vec![0.5, 5.0],
            vec![4.0, 5.0],
            vec![5.0, 5.0],
            vec![4.5, 5.0],
        ];
        let m = matrix(&rows);
        let labels = [0, 0, 0, 1, 1, 1];
        let model = train_lda(&m, &labels).unwrap();
        assert!(model.ridge.is_some());
        assert_eq!(model.predict(&[0.2, 5.0]), 0);
        assert_eq!(model.predict(&[4.8, 5.0]), 1);
    }

    #[test]
    fn single_class_is_rejected() {
        let m = matrix(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            train_lda(&m, &[3, 3]),
            Err(ClassifierError::SingleClass)
        ));
    }
}
