//! Dense symmetric linear algebra for the LDA eigensolver: Cholesky
//! factorization, triangular solves, and the cyclic Jacobi eigenvalue
//! method. Matrices are row-major `Vec<f64>` of size `d * d`.

/// In-place Cholesky `A = L L^T` for a symmetric positive-definite matrix.
/// On success the lower triangle holds `L` (upper garbage). Returns false if
/// a non-positive pivot shows up.
pub fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / ljj;
        }
    }
    true
}

/// Solves `L x = b` in place (forward substitution, `l` lower-triangular).
pub fn forward_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * d + k] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
}

/// Solves `L^T x = b` in place (backward substitution over the transpose).
pub fn back_solve_transposed(l: &[f64], d: usize, b: &mut [f64]) {
    for i in (0..d).rev() {
        let mut v = b[i];
        for k in i + 1..d {
            v -= l[k * d + i] * b[k];
        }
        b[i] = v / l[i * d + i];
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Destroys `a`.
/// Returns eigenvalues (descending) and matching eigenvectors as rows of a
/// `d x d` row-major matrix. Deterministic; eigenvector signs are fixed so
/// the entry of largest magnitude is positive.
pub fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 0 {
        return (Vec::new(), v);
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in p + 1..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[p * d + k];
                    let vkq = v[q * d + k];
                    v[p * d + k] = c * vkp - s * vkq;
                    v[q * d + k] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        a[j * d + j]
            .partial_cmp(&a[i * d + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * d + i]).collect();
    let mut eigenvectors = vec![0.0f64; d * d];
    for (rank, &i) in order.iter().enumerate() {
        let row = &v[i * d..(i + 1) * d];
        // sign convention: largest-magnitude entry positive
        let mut pivot = 0usize;
        for (k, val) in row.iter().enumerate() {
            if val.abs() > row[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            eigenvectors[rank * d + k] = sign * row[k];
        }
    }
    (eigenvalues, eigenvectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cholesky_reproduces_a_known_factor() {
        // A = L L^T with L = [[2,0],[1,3]] -> A = [[4,2],[2,10]]
        let mut a = vec![4.0, 2.0, 2.0, 10.0];
        assert!(cholesky_in_place(&mut a, 2));
        assert!((a[0] - 2.0).abs() < 1e-12);
        assert!((a[2] - 1.0).abs() < 1e-12);
        assert!((a[3] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_input() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert!(!cholesky_in_place(&mut a, 2));
    }

    #[test]
    fn triangular_solves_invert_the_factor() {
        let l = vec![2.0, 0.0, 1.0, 3.0];
        let mut b = vec![4.0, 11.0];
        forward_solve(&l, 2, &mut b); // L x = b -> x = [2, 3]
        assert!((b[0] - 2.0).abs() < 1e-12);
        assert!((b[1] - 3.0).abs() < 1e-12);
        let mut c = vec![7.0, 6.0];
        back_solve_transposed(&l, 2, &mut c); // L^T x = c -> x = [2.5, 2]
        assert!((c[0] - 2.5).abs() < 1e-12);
        assert!((c[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_solves_a_2x2_by_hand() {
        // [[2,1],[1,2]] -> eigenvalues 3 and 1
        let mut a = vec![2.0, 1.0, 1.0, 2.0];
        let (vals, vecs) = jacobi_eigen(&mut a, 2);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((vecs[0] - inv_sqrt2).abs() < 1e-10);
        assert!((vecs[1] - inv_sqrt2).abs() < 1e-10);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let d = 8;
            let mut a = vec![0.0f64; d * d];
            for i in 0..d {
                for j in i..d {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    a[i * d + j] = x;
                    a[j * d + i] = x;
                }
            }
            let original = a.clone();
            let (vals, vecs) = jacobi_eigen(&mut a, d);
            // A v_k = lambda_k v_k
            for k in 0..d {
                for i in 0..d {
                    let mut av = 0.0;
                    for j in 0..d {
                        av += original[i * d + j] * vecs[k * d + j];
                    }
                    assert!(
                        (av - vals[k] * vecs[k * d + i]).abs() < 1e-9,
                        "eigenpair {k} residual"
                    );
                }
            }
            // descending order
            for w in vals.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
        }
    }
}
