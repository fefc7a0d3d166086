//! Hypothesis testing over per-user performance distributions.
//!
//! One-sample Kolmogorov-Smirnov normality test (parameters estimated from
//! the sample, p-value from the asymptotic Kolmogorov distribution) and the
//! two-sample Student t-test with pooled variance. Welch's unequal-variance
//! variant is available behind its own function.
//!
//! The special functions (normal CDF, regularized incomplete beta via the
//! Lentz continued fraction, Kolmogorov survival function) are implemented
//! here so both tests are self-contained and cross-checkable against
//! published critical values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("sample too small: {found} values (need at least {minimum})")]
    SampleTooSmall { found: usize, minimum: usize },
    #[error("sample has zero spread; the fitted normal is degenerate")]
    ZeroSpread,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

/// Outcome of one hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub sample_sizes: Vec<usize>,
    pub alpha: f64,
    /// True when `p_value < alpha` (reject the null).
    pub reject_null: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TestResult {
    fn new(test: &str, statistic: f64, p_value: f64, sample_sizes: Vec<usize>) -> Self {
        Self {
            test: test.to_string(),
            statistic,
            p_value,
            sample_sizes,
            alpha: DEFAULT_ALPHA,
            reject_null: p_value < DEFAULT_ALPHA,
            note: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// Complementary error function, |fractional error| < 1.2e-7 everywhere
/// (Chebyshev fit).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation (g = 5, n = 6), accurate to ~1e-10 for x > 0.
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3.0e-16;
    const FPMIN: f64 = 1.0e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln())
        .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Survival function of the Kolmogorov distribution at `t = sqrt(n) * D`.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let p = if t < 1.18 {
        // Jacobi-theta form, accurate for small t
        let f = std::f64::consts::PI * std::f64::consts::PI / (8.0 * t * t);
        let sum: f64 = (0..5)
            .map(|k| {
                let odd = (2 * k + 1) as f64;
                (-odd * odd * f).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * sum
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * t * t).exp();
            if term < 1e-18 {
                break;
            }
            sum += if k % 2 == 1 { term } else { -term };
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

fn mean(sample: &[f64]) -> f64 {
    sample.iter().sum::<f64>() / sample.len() as f64
}

fn check_finite(sample: &[f64]) -> Result<(), StatsError> {
    if sample.iter().any(|v| !v.is_finite()) {
        Err(StatsError::NonFinite)
    } else {
        Ok(())
    }
}

/// One-sample KS test of normality with mean and standard deviation
/// estimated from the sample (population convention). The p-value comes from
/// the asymptotic Kolmogorov distribution and ignores the estimation bias;
/// the result carries a note saying so.
pub fn ks_normality_test(sample: &[f64]) -> Result<TestResult, StatsError> {
    if sample.len() < 3 {
        return Err(StatsError::SampleTooSmall {
            found: sample.len(),
            minimum: 3,
        });
    }
    check_finite(sample)?;
    let n = sample.len() as f64;
    let mu = mean(sample);
    let sigma = (sample.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    if sigma == 0.0 {
        return Err(StatsError::ZeroSpread);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal_cdf((x - mu) / sigma);
        let d_plus = (i + 1) as f64 / n - f;
        let d_minus = f - i as f64 / n;
        d = d.max(d_plus).max(d_minus);
    }
    let p = kolmogorov_sf(n.sqrt() * d);
    let mut result = TestResult::new("ks-normality", d, p, vec![sample.len()]);
    result.note = Some(
        "p-value uses the asymptotic Kolmogorov distribution with parameters estimated \
         from the sample; it is biased upward relative to the Lilliefors correction"
            .to_string(),
    );
    Ok(result)
}

fn sample_variance(sample: &[f64], mu: f64) -> f64 {
    sample.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (sample.len() as f64 - 1.0)
}

/// Two-sample Student t-test with pooled variance, two-sided p-value,
/// df = n_a + n_b - 2. Two constant equal samples give t = 0, p = 1.
pub fn t_test_independent(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::SampleTooSmall {
            found: a.len().min(b.len()),
            minimum: 2,
        });
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * sample_variance(a, ma) + (nb - 1.0) * sample_variance(b, mb)) / df;
    let se_sq = pooled * (1.0 / na + 1.0 / nb);
    let (t, p) = if se_sq == 0.0 {
        if ma == mb {
            (0.0, 1.0)
        } else {
            (
                if ma > mb {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                0.0,
            )
        }
    } else {
        let t = (ma - mb) / se_sq.sqrt();
        let p = 2.0 * (1.0 - student_t_cdf(t.abs(), df));
        (t, p.clamp(0.0, 1.0))
    };
    Ok(TestResult::new("t-student", t, p, vec![a.len(), b.len()]))
}

/// Welch's unequal-variance t-test with the Welch-Satterthwaite df.
pub fn t_test_welch(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::SampleTooSmall {
            found: a.len().min(b.len()),
            minimum: 2,
        });
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a, ma), sample_variance(b, mb));
    let se_sq = va / na + vb / nb;
    let (t, p) = if se_sq == 0.0 {
        if ma == mb {
            (0.0, 1.0)
        } else {
            (
                if ma > mb {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                0.0,
            )
        }
    } else {
        let df = se_sq * se_sq
            / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
        let t = (ma - mb) / se_sq.sqrt();
        let p = 2.0 * (1.0 - student_t_cdf(t.abs(), df));
        (t, p.clamp(0.0, 1.0))
    };
    Ok(TestResult::new("t-welch", t, p, vec![a.len(), b.len()]))
}
